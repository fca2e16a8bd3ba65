// ecgdx command-line pipeline: synth -> preprocess -> build-cohort -> train /
// finetune -> evaluate -> survival -> comorbidity. One JSON config document
// drives a run; flags override config keys; every command writes a
// run-metadata snapshot sufficient to reproduce it.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ecgdx/checkpoint.hpp"
#include "ecgdx/cohort.hpp"
#include "ecgdx/comorbidity.hpp"
#include "ecgdx/io.hpp"
#include "ecgdx/metrics.hpp"
#include "ecgdx/model.hpp"
#include "ecgdx/signal.hpp"
#include "ecgdx/survival.hpp"
#include "ecgdx/testkit.hpp"
#include "ecgdx/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ecgdx;

namespace {

constexpr const char* kVersion = "0.1.0";

// exit 2: user/config mistakes; exit 1: internal failures
struct UserError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_given = false;
    int workers = 1;
    bool deterministic = false;
    bool one_per_stay = false;
    json config;  // loaded document ({} when no config given)

    std::uint64_t effective_seed() const {
        if (seed_given) return seed;
        if (config.contains("seed")) return config["seed"].get<std::uint64_t>();
        return 0;
    }

    int effective_workers() const { return deterministic ? 1 : std::max(1, workers); }
};

json section(const json& cfg, const std::string& name) {
    return cfg.contains(name) ? cfg.at(name) : json::object();
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

std::string require_file(const std::string& path, const std::string& what) {
    if (path.empty() || !fs::exists(path))
        throw UserError("missing " + what + ": " + (path.empty() ? "(unset)" : path));
    return path;
}

std::string timestamp_utc_compact() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const std::string iso = format_iso8601_utc(static_cast<std::int64_t>(t));
    std::string out;
    for (char c : iso)
        if (c != '-' && c != ':') out += c;
    return out;
}

// Default layout inside the run directory; config "paths" points at inputs
// that live elsewhere (for example a previous run's artifacts).
struct Layout {
    fs::path out;
    json paths;

    std::string dir(const std::string& key, const std::string& fallback) const {
        return get_or<std::string>(paths, key, (out / fallback).string());
    }
    std::string file(const std::string& key, const std::string& fallback) const {
        return get_or<std::string>(paths, key, (out / fallback).string());
    }
};

Layout make_layout(const Options& opt, const std::string& cmd) {
    Layout layout;
    if (!opt.out_dir.empty()) {
        layout.out = opt.out_dir;
    } else {
        layout.out = fs::path("runs") / (timestamp_utc_compact() + "-" + cmd);
    }
    layout.paths = section(opt.config, "paths");
    return layout;
}

void write_runmeta(const Layout& layout, const std::string& cmd, const Options& opt,
                   double wall_s) {
    fs::create_directories(layout.out);
    json meta;
    meta["command"] = cmd;
    meta["seed"] = opt.effective_seed();
    meta["workers"] = opt.effective_workers();
    meta["deterministic"] = opt.deterministic;
    meta["config"] = opt.config;
    meta["versions"] = {{"ecgdx", kVersion},
                        {"checkpoint_format", nn::kCheckpointVersion},
                        {"record_format", 1}};
    meta["wall_time_s"] = wall_s;
    std::ofstream os(layout.out / ("runmeta_" + cmd + ".json"));
    os << meta.dump(2) << "\n";
}

dsp::PreprocessConfig preprocess_config(const json& cfg) {
    const json p = section(cfg, "preprocess");
    dsp::PreprocessConfig c;
    c.target_fs = get_or(p, "target_fs", c.target_fs);
    c.mains_hz = get_or(p, "mains_hz", c.mains_hz);
    c.band_lo = get_or(p, "band_lo", c.band_lo);
    c.band_hi = get_or(p, "band_hi", c.band_hi);
    c.butter_order = get_or(p, "butter_order", c.butter_order);
    c.baseline_window_s = get_or(p, "baseline_window_s", c.baseline_window_s);
    c.segment_s = get_or(p, "segment_s", c.segment_s);
    c.notch_q = get_or(p, "notch_q", c.notch_q);
    c.validate();
    return c;
}

nn::TrainConfig train_config(const json& cfg, std::uint64_t seed) {
    const json t = section(cfg, "train");
    nn::TrainConfig c;
    c.lr0 = get_or(t, "lr0", c.lr0);
    c.weight_decay = get_or(t, "weight_decay", c.weight_decay);
    c.epochs = get_or(t, "epochs", c.epochs);
    c.batch_size = get_or(t, "batch_size", c.batch_size);
    c.patience = get_or(t, "patience", c.patience);
    c.seed = seed;
    c.validate();
    return c;
}

// ---------------- synth ----------------

testkit::PlantedCohortSpec synth_spec(const json& cfg, std::uint64_t seed) {
    const json s = section(cfg, "synth");
    testkit::PlantedCohortSpec spec;
    spec.n_subjects = get_or<std::size_t>(s, "n_subjects", 200);
    spec.duration_s = get_or(s, "duration_s", spec.duration_s);
    spec.fs = get_or(s, "fs", spec.fs);
    spec.n_leads = get_or(s, "n_leads", spec.n_leads);
    spec.severity_rate_bpm_per_sd =
        get_or(s, "severity_rate_bpm_per_sd", spec.severity_rate_bpm_per_sd);
    spec.severity_qrs_amp_per_sd =
        get_or(s, "severity_qrs_amp_per_sd", spec.severity_qrs_amp_per_sd);
    spec.base.white_noise_mv = get_or(s, "white_noise_mv", spec.base.white_noise_mv);
    spec.base.mains_mv = get_or(s, "mains_mv", spec.base.mains_mv);
    spec.base.wander_mv = get_or(s, "wander_mv", spec.base.wander_mv);
    spec.seed = seed;
    if (s.contains("labels")) {
        for (const auto& l : s.at("labels")) {
            testkit::LabelSpec label;
            label.code = l.at("code").get<std::string>();
            label.name = get_or<std::string>(l, "name", "");
            label.prevalence = get_or(l, "prevalence", 0.2);
            const json e = section(l, "effect");
            label.effect.qrs_amp_scale = get_or(e, "qrs_amp_scale", 1.0);
            label.effect.qrs_width_scale = get_or(e, "qrs_width_scale", 1.0);
            label.effect.t_amp_scale = get_or(e, "t_amp_scale", 1.0);
            label.effect.p_amp_scale = get_or(e, "p_amp_scale", 1.0);
            label.effect.rate_shift_bpm = get_or(e, "rate_shift_bpm", 0.0);
            spec.labels.push_back(label);
        }
    } else {
        spec.labels = {
            {"I50", "planted heart failure", 0.3, {1.5, 1.25, 1.0, 1.0, 15.0}},
            {"E11", "planted diabetes", 0.25, {1.0, 1.0, 0.55, 1.0, 0.0}},
            {"J44", "planted copd", 0.2, {1.0, 1.0, 1.0, 0.45, -10.0}},
        };
    }
    const json sv = section(s, "survival");
    spec.survival.enabled = get_or(sv, "enabled", true);
    spec.survival.baseline_hazard = get_or(sv, "baseline_hazard", spec.survival.baseline_hazard);
    spec.survival.log_hr_per_sd = get_or(sv, "log_hr_per_sd", spec.survival.log_hr_per_sd);
    spec.survival.horizon_years = get_or(sv, "horizon_years", spec.survival.horizon_years);
    spec.validate();
    return spec;
}

int cmd_synth(const Options& opt) {
    const auto layout = make_layout(opt, "synth");
    const auto spec = synth_spec(opt.config, opt.effective_seed());

    const auto records_dir = layout.dir("records_dir", "records");
    fs::create_directories(records_dir);
    const auto t0 = std::chrono::steady_clock::now();

    auto cohort_data = testkit::gen_cohort(spec);
    std::vector<cohort::EcgIndexEntry> index;
    std::vector<cohort::DischargeEvent> discharges;
    std::vector<io::OutcomeRow> outcomes;
    for (std::size_t i = 0; i < cohort_data.subjects.size(); ++i) {
        const auto& subject = cohort_data.subjects[i];
        char rid[32];
        std::snprintf(rid, sizeof(rid), "r%06zu", i);
        io::write_record(records_dir, rid, subject.record);
        index.push_back({rid, subject.patient_id, subject.record.acquired_at,
                         io::record_paths(records_dir, rid).header});

        cohort::DischargeEvent d;
        d.patient_id = subject.patient_id;
        d.admit_at = subject.record.acquired_at - 2 * 86400;
        d.discharge_at = subject.record.acquired_at + 2 * 86400;
        for (std::size_t k = 0; k < subject.labels.size(); ++k)
            if (subject.labels[k]) d.codes.insert({cohort_data.label_codes[k]});
        if (d.codes.empty()) d.codes.insert({"Z00"});  // general exam, keeps controls
        discharges.push_back(std::move(d));

        for (std::size_t k = 0; k < subject.outcomes.size(); ++k)
            outcomes.push_back({subject.patient_id, cohort_data.label_codes[k],
                                subject.outcomes[k].time, subject.outcomes[k].event});
    }
    io::write_ecg_index((fs::path(records_dir) / "ecg_index.csv").string(), index);
    io::write_discharges((fs::path(records_dir) / "discharges.csv").string(), discharges);
    if (!outcomes.empty())
        io::write_outcomes((fs::path(records_dir) / "outcomes.csv").string(), outcomes);
    {
        std::ofstream names(fs::path(records_dir) / "names.tsv");
        for (std::size_t k = 0; k < cohort_data.label_codes.size(); ++k)
            names << cohort_data.label_codes[k] << "\t" << cohort_data.label_names[k] << "\n";
        names << "Z00\tGeneral examination\n";
    }
    json truth;
    truth["seed"] = spec.seed;
    truth["n_subjects"] = spec.n_subjects;
    truth["labels"] = json::array();
    for (const auto& l : spec.labels)
        truth["labels"].push_back({{"code", l.code}, {"prevalence", l.prevalence}});
    std::ofstream(fs::path(records_dir) / "truth.json") << truth.dump(2) << "\n";

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_runmeta(layout, "synth", opt, wall);
    std::cout << "synth: " << cohort_data.subjects.size() << " records -> " << records_dir
              << "\n";
    return 0;
}

// ---------------- preprocess ----------------

struct ManifestRow {
    std::string record_id;
    std::string patient_id;
    std::int64_t acquired_at = 0;
    std::size_t n_segments = 0;
    std::string content_hash;
};

void write_manifest(const std::string& path, const std::vector<ManifestRow>& rows) {
    std::ofstream os(path);
    os << csv_row({"record_id", "patient_id", "acquired_at", "n_segments", "content_hash"});
    for (const auto& r : rows)
        os << csv_row({r.record_id, r.patient_id, format_iso8601_utc(r.acquired_at),
                       std::to_string(r.n_segments), r.content_hash});
}

std::map<std::string, ManifestRow> read_manifest(const std::string& path) {
    std::map<std::string, ManifestRow> rows;
    std::ifstream is(path);
    if (!is) return rows;
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        const auto f = csv_parse_line(line);
        if (f.size() < 5) continue;
        rows[f[0]] = {f[0], f[1], parse_iso8601_utc(f[2]), std::stoul(f[3]), f[4]};
    }
    return rows;
}

int cmd_preprocess(const Options& opt) {
    const auto layout = make_layout(opt, "preprocess");
    const auto cfg = preprocess_config(opt.config);
    const auto index_path =
        require_file(layout.file("ecg_index", "records/ecg_index.csv"), "ECG index CSV");
    const auto entries = io::read_ecg_index(index_path);

    const double csv_fs = get_or(section(opt.config, "preprocess"), "csv_fs", cfg.target_fs);
    const auto seg_dir = layout.dir("segments_dir", "segments");
    fs::create_directories(seg_dir);
    const auto manifest_path = (fs::path(seg_dir) / "manifest.csv").string();
    const auto previous = read_manifest(manifest_path);
    const auto t0 = std::chrono::steady_clock::now();

    struct Slot {
        ManifestRow row;
        std::string reject_reason;
        bool skipped = false;
        bool ok = false;
    };
    std::vector<Slot> slots(entries.size());

    auto handle = [&](std::size_t i) {
        const auto& e = entries[i];
        Slot& slot = slots[i];
        try {
            const auto& header = e.path;
            std::string samples = header;
            const auto pos = samples.rfind(".json");
            std::string hash;
            if (pos != std::string::npos) {
                samples.replace(pos, 5, ".i16");
                hash = io::hash_files({header, samples});
            } else {
                hash = io::hash_files({header});
            }
            const auto prev = previous.find(e.record_id);
            if (prev != previous.end() && prev->second.content_hash == hash) {
                bool all_present = prev->second.n_segments > 0;
                for (std::size_t s = 0; s < prev->second.n_segments; ++s) {
                    const auto p =
                        io::record_paths(seg_dir, e.record_id + "_s" + std::to_string(s));
                    all_present = all_present && fs::exists(p.header) && fs::exists(p.samples);
                }
                if (all_present) {
                    slot.row = prev->second;
                    slot.skipped = true;
                    slot.ok = true;
                    return;
                }
            }
            dsp::EcgRecord record =
                pos != std::string::npos
                    ? io::read_record(header)
                    : io::read_record_csv(header, csv_fs, e.patient_id, e.acquired_at);
            auto segments = dsp::preprocess_record(record, cfg, e.record_id);
            for (std::size_t s = 0; s < segments.size(); ++s) {
                dsp::EcgRecord seg_rec;
                seg_rec.patient_id = record.patient_id;
                seg_rec.acquired_at = record.acquired_at;
                seg_rec.fs = cfg.target_fs;
                seg_rec.lead_names = record.lead_names;
                seg_rec.leads.resize(segments[s].leads.size());
                for (std::size_t l = 0; l < segments[s].leads.size(); ++l)
                    seg_rec.leads[l] = {segments[s].leads[l], cfg.target_fs};
                io::write_record(seg_dir, e.record_id + "_s" + std::to_string(s), seg_rec);
            }
            slot.row = {e.record_id, e.patient_id, e.acquired_at, segments.size(), hash};
            slot.ok = true;
        } catch (const std::exception& ex) {
            slot.reject_reason = ex.what();
        }
    };

    const int workers = opt.effective_workers();
    if (workers <= 1) {
        for (std::size_t i = 0; i < entries.size(); ++i) handle(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < entries.size();
                     i = next.fetch_add(1))
                    handle(i);
            });
        for (auto& th : pool) th.join();
    }

    std::vector<ManifestRow> manifest;
    std::size_t processed = 0, skipped = 0, rejected = 0;
    std::ofstream rejects(fs::path(seg_dir) / "rejects.csv");
    rejects << csv_row({"record_id", "path", "reason"});
    for (std::size_t i = 0; i < entries.size(); ++i) {
        if (slots[i].ok) {
            manifest.push_back(slots[i].row);
            slots[i].skipped ? ++skipped : ++processed;
        } else {
            ++rejected;
            rejects << csv_row({entries[i].record_id, entries[i].path, slots[i].reject_reason});
        }
    }
    write_manifest(manifest_path, manifest);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_runmeta(layout, "preprocess", opt, wall);
    std::cout << "preprocess: processed=" << processed << " skipped=" << skipped
              << " rejected=" << rejected << " -> " << seg_dir << "\n";
    return 0;
}

// ---------------- build-cohort ----------------

cohort::AlignPolicy align_policy(const json& cfg, bool one_per_stay_flag) {
    const json c = section(cfg, "cohort");
    cohort::AlignPolicy policy;
    const auto mode = get_or<std::string>(c, "policy", "in-stay");
    if (mode == "in-stay") {
        policy.mode = cohort::AlignPolicy::Mode::kInStay;
    } else if (mode == "window") {
        policy.mode = cohort::AlignPolicy::Mode::kWindow;
        policy.window_s = static_cast<std::int64_t>(get_or(c, "window_days", 1.0) * 86400.0);
    } else {
        throw UserError("unknown cohort policy: " + mode);
    }
    policy.one_per_stay = one_per_stay_flag || get_or(c, "one_per_stay", false);
    return policy;
}

int cmd_build_cohort(const Options& opt) {
    const auto layout = make_layout(opt, "build-cohort");
    const json c = section(opt.config, "cohort");
    const auto min_count = get_or<std::size_t>(c, "min_count", 50);
    const auto policy = align_policy(opt.config, opt.one_per_stay);

    const auto discharges_path =
        require_file(layout.file("discharges", "records/discharges.csv"), "discharges CSV");
    const auto index_path =
        require_file(layout.file("ecg_index", "records/ecg_index.csv"), "ECG index CSV");
    const auto names_path = layout.file("names", "records/names.tsv");
    const auto t0 = std::chrono::steady_clock::now();

    auto discharges = io::read_discharges(discharges_path);
    auto ecgs = io::read_ecg_index(index_path);
    std::map<std::string, std::string> names;
    if (fs::exists(names_path)) names = io::read_name_dictionary(names_path);

    // Pass 1: admit every observed code, so occurrences are counted among
    // matched entries (the counts that matter for training).
    std::map<cohort::IcdCode, std::size_t> all_codes;
    for (const auto& d : discharges)
        for (const auto& code : d.codes) all_codes[code] += 1;
    auto provisional = cohort::build_label_space(all_codes, names, 1);
    auto matched = cohort::align_ecg_to_discharges(ecgs, discharges, provisional, policy);

    std::map<cohort::IcdCode, std::size_t> matched_counts;
    for (const auto& entry : matched)
        for (std::size_t i = 0; i < entry.labels.size(); ++i)
            if (entry.labels[i]) matched_counts[provisional.codes[i]] += 1;
    if (matched_counts.empty()) throw UserError("no ECGs matched any discharge");

    auto space = cohort::build_label_space(matched_counts, names, min_count);
    cohort::AlignStats stats;
    auto entries = cohort::align_ecg_to_discharges(ecgs, discharges, space, policy, &stats);

    std::vector<std::size_t> counts(space.size(), 0);
    for (const auto& entry : entries)
        for (std::size_t i = 0; i < entry.labels.size(); ++i) counts[i] += entry.labels[i];

    const auto cohort_dir = layout.dir("cohort_dir", "cohort");
    fs::create_directories(cohort_dir);
    io::write_cohort((fs::path(cohort_dir) / "cohort.csv").string(), entries);
    io::write_label_space((fs::path(cohort_dir) / "label_space.tsv").string(), space, counts);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_runmeta(layout, "build-cohort", opt, wall);
    std::cout << "build-cohort: entries=" << entries.size() << " labels=" << space.size()
              << " unmatched=" << stats.unmatched << " empty=" << stats.empty_label << "\n";
    return 0;
}

// ---------------- dataset assembly ----------------

enum class Split { kTrain, kVal, kTest };

Split split_of(const std::string& patient_id, std::uint64_t seed, double val_frac,
               double test_frac) {
    const std::uint64_t h =
        derive_seed(seed ^ 0x73706c6974ULL, io::fnv1a64(patient_id.data(), patient_id.size()));
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    if (u < test_frac) return Split::kTest;
    if (u < test_frac + val_frac) return Split::kVal;
    return Split::kTrain;
}

struct CohortData {
    cohort::LabelSpace space;
    std::vector<cohort::CohortEntry> entries;
    std::string segments_dir;
    std::map<std::string, ManifestRow> manifest;
};

CohortData load_cohort_data(const Layout& layout) {
    CohortData data;
    const auto space_path =
        require_file(layout.file("label_space", "cohort/label_space.tsv"), "label space TSV");
    data.space = io::read_label_space(space_path);
    const auto cohort_path =
        require_file(layout.file("cohort", "cohort/cohort.csv"), "cohort manifest CSV");
    data.entries = io::read_cohort(cohort_path, data.space.size());
    if (data.entries.empty()) throw UserError("cohort manifest is empty: " + cohort_path);
    data.segments_dir = layout.dir("segments_dir", "segments");
    const auto manifest_path = (fs::path(data.segments_dir) / "manifest.csv").string();
    require_file(manifest_path, "preprocess manifest CSV");
    data.manifest = read_manifest(manifest_path);
    return data;
}

// Samples are segments; every segment of a record carries the record's
// labels. Returns the dataset plus the cohort-entry index of each sample.
std::pair<nn::Dataset, std::vector<std::size_t>> build_dataset(
    const CohortData& data, const std::vector<std::size_t>& entry_indices) {
    nn::Dataset d;
    d.n_labels = data.space.size();
    std::vector<std::size_t> sample_entry;
    for (const auto idx : entry_indices) {
        const auto& entry = data.entries[idx];
        const auto mrow = data.manifest.find(entry.record_id);
        if (mrow == data.manifest.end())
            throw UserError("missing segments for record " + entry.record_id +
                            " (run preprocess first)");
        for (std::size_t s = 0; s < mrow->second.n_segments; ++s) {
            const auto paths = io::record_paths(data.segments_dir,
                                                entry.record_id + "_s" + std::to_string(s));
            require_file(paths.header, "segment file");
            const auto seg = io::read_record(paths.header);
            if (d.channels == 0) {
                d.channels = seg.leads.size();
                d.length = seg.leads.front().samples.size();
            }
            if (seg.leads.size() != d.channels || seg.leads.front().samples.size() != d.length)
                throw UserError("segment shape mismatch at " + paths.header);
            for (const auto& lead : seg.leads)
                for (double v : lead.samples) d.x.push_back(static_cast<float>(v));
            for (auto b : entry.labels) d.y.push_back(b);
            sample_entry.push_back(idx);
        }
    }
    if (sample_entry.empty()) throw UserError("empty dataset split");
    return {std::move(d), std::move(sample_entry)};
}

nn::ModelConfig model_config(const json& cfg, std::size_t n_leads, std::size_t input_len,
                             std::size_t head_dim) {
    const json m = section(cfg, "model");
    const auto preset = get_or<std::string>(m, "preset", "default");
    nn::ModelConfig mc;
    if (m.contains("blocks")) {
        mc = nn::model_config_from_json(m);
    } else if (preset == "compact") {
        mc = nn::ModelConfig::compact_config(static_cast<int>(n_leads),
                                             static_cast<int>(input_len),
                                             static_cast<int>(head_dim));
    } else if (preset == "default") {
        mc = nn::ModelConfig::default_config(static_cast<int>(head_dim));
    } else {
        throw UserError("unknown model preset: " + preset);
    }
    mc.n_leads = static_cast<int>(n_leads);
    mc.input_len = static_cast<int>(input_len);
    mc.head_dim = static_cast<int>(head_dim);
    mc.validate();
    return mc;
}

void write_history(const std::string& path, const nn::TrainResult& result) {
    std::ofstream os(path);
    os << csv_row({"epoch", "train_loss", "val_loss", "lr"});
    for (const auto& e : result.history)
        os << csv_row({std::to_string(e.epoch), fmt_full(e.train_loss), fmt_full(e.val_loss),
                       fmt_full(e.lr)});
}

int run_training(const Options& opt, bool is_finetune) {
    const char* cmd = is_finetune ? "finetune" : "train";
    const auto layout = make_layout(opt, cmd);
    const auto seed = opt.effective_seed();
    const json t = section(opt.config, "train");
    const double val_frac = get_or(t, "val_fraction", 0.1);
    const double test_frac = get_or(t, "test_fraction", 0.2);
    auto tc = train_config(opt.config, seed);

    std::string base_ckpt;
    if (is_finetune) {
        base_ckpt = require_file(get_or<std::string>(t, "base_checkpoint", ""),
                                 "base checkpoint (train.base_checkpoint)");
    }
    const auto data = load_cohort_data(layout);
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t i = 0; i < data.entries.size(); ++i) {
        switch (split_of(data.entries[i].patient_id, seed, val_frac, test_frac)) {
            case Split::kTrain: train_idx.push_back(i); break;
            case Split::kVal: val_idx.push_back(i); break;
            case Split::kTest: break;
        }
    }
    if (train_idx.empty() || val_idx.empty())
        throw UserError("train/val split is empty; adjust fractions or cohort size");
    auto [train_set, train_map] = build_dataset(data, train_idx);
    auto [val_set, val_map] = build_dataset(data, val_idx);
    (void)train_map;
    (void)val_map;

    nn::EcgNet model;
    if (is_finetune) {
        auto pretrained = nn::load_checkpoint(base_ckpt);
        if (pretrained.config().n_leads != static_cast<int>(train_set.channels) ||
            pretrained.config().input_len != static_cast<int>(train_set.length))
            throw UserError("base checkpoint shape does not match the segments");
        model = nn::finetune(pretrained, static_cast<int>(data.space.size()), seed);
    } else {
        model = nn::EcgNet(
            model_config(opt.config, train_set.channels, train_set.length, data.space.size()),
            seed);
    }

    auto result = nn::train(model, train_set, val_set, tc);
    if (result.diverged)
        std::cerr << cmd << ": aborted (" << result.abort_reason
                  << "), keeping best checkpoint\n";

    const auto model_dir = layout.dir("model_dir", "model");
    fs::create_directories(model_dir);
    nn::save_checkpoint(model, (fs::path(model_dir) / "model.ckpt").string());
    write_history((fs::path(model_dir) / "history.csv").string(), result);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_runmeta(layout, cmd, opt, wall);
    std::cout << cmd << ": best epoch " << result.best_epoch << " val loss "
              << fmt_sig(result.best_val_loss, 6) << " -> " << model_dir << "\n";
    return result.diverged ? 1 : 0;
}

// ---------------- evaluate ----------------

int cmd_evaluate(const Options& opt) {
    const auto layout = make_layout(opt, "evaluate");
    const auto seed = opt.effective_seed();
    const json t = section(opt.config, "train");
    const json ev = section(opt.config, "evaluate");
    const double val_frac = get_or(t, "val_fraction", 0.1);
    const double test_frac = get_or(t, "test_fraction", 0.2);
    const auto n_boot = get_or<std::size_t>(ev, "bootstrap", 1000);
    const double alpha = get_or(ev, "alpha", 0.05);

    const auto ckpt_path =
        require_file(layout.file("checkpoint", "model/model.ckpt"), "model checkpoint");
    const auto data = load_cohort_data(layout);
    const auto t0 = std::chrono::steady_clock::now();
    auto model = nn::load_checkpoint(ckpt_path);
    if (model.config().head_dim != static_cast<int>(data.space.size()))
        throw UserError("checkpoint head does not match the label space");

    // Score every record: mean sigmoid score over its segments.
    std::vector<std::size_t> all_idx(data.entries.size());
    std::iota(all_idx.begin(), all_idx.end(), 0);
    auto [full_set, sample_entry] = build_dataset(data, all_idx);
    auto scores = nn::evaluate_scores(model, full_set);
    const std::size_t k = data.space.size();

    std::vector<std::vector<double>> record_scores(data.entries.size(),
                                                   std::vector<double>(k, 0.0));
    std::vector<std::size_t> record_segments(data.entries.size(), 0);
    for (std::size_t s = 0; s < sample_entry.size(); ++s) {
        ++record_segments[sample_entry[s]];
        for (std::size_t j = 0; j < k; ++j)
            record_scores[sample_entry[s]][j] += scores[s * k + j];
    }
    for (std::size_t i = 0; i < record_scores.size(); ++i)
        for (auto& v : record_scores[i])
            v /= static_cast<double>(std::max<std::size_t>(record_segments[i], 1));

    const auto eval_dir = layout.dir("eval_dir", "eval");
    fs::create_directories(eval_dir);
    std::ofstream metrics_csv(fs::path(eval_dir) / "metrics.csv");
    metrics_csv << csv_row({"index", "code", "name", "n_pos", "auroc", "ci_lo", "ci_hi",
                            "threshold", "sensitivity", "specificity", "f1"});

    for (std::size_t j = 0; j < k; ++j) {
        metrics::ScoreLabelPairs test_pairs, val_pairs;
        for (std::size_t i = 0; i < data.entries.size(); ++i) {
            const auto split = split_of(data.entries[i].patient_id, seed, val_frac, test_frac);
            if (split == Split::kTest) {
                test_pairs.scores.push_back(record_scores[i][j]);
                test_pairs.labels.push_back(data.entries[i].labels[j]);
            } else if (split == Split::kVal) {
                val_pairs.scores.push_back(record_scores[i][j]);
                val_pairs.labels.push_back(data.entries[i].labels[j]);
            }
        }
        std::size_t n_pos = 0;
        for (auto y : test_pairs.labels) n_pos += y;
        std::vector<std::string> row = {std::to_string(j), data.space.codes[j].canonical,
                                        data.space.names[j], std::to_string(n_pos)};
        try {
            const double auc = metrics::auroc(test_pairs);
            const auto ci = metrics::bootstrap_ci(metrics::auroc, test_pairs, n_boot, alpha,
                                                  derive_seed(seed, 0xb00ULL + j));
            const auto pick = metrics::youden_threshold(val_pairs);
            if (pick.youden_j <= 0.0)
                std::cerr << "evaluate: warning: non-positive Youden J for "
                          << data.space.codes[j].canonical << "\n";
            const auto conf = metrics::confusion_at(test_pairs, pick.threshold);
            row.push_back(fmt_sig(auc, 6));
            row.push_back(fmt_sig(ci.lo, 6));
            row.push_back(fmt_sig(ci.hi, 6));
            row.push_back(fmt_sig(pick.threshold, 6));
            row.push_back(fmt_sig(metrics::sensitivity(conf), 6));
            row.push_back(fmt_sig(metrics::specificity(conf), 6));
            row.push_back(fmt_sig(metrics::f1(conf), 6));
        } catch (const std::invalid_argument&) {
            for (int f = 0; f < 7; ++f) row.push_back("nan");  // single-class split
        }
        metrics_csv << csv_row(row);
    }

    // Risk matrix: per subject, mean record score per disease.
    std::map<std::string, std::pair<std::vector<double>, std::size_t>> by_subject;
    for (std::size_t i = 0; i < data.entries.size(); ++i) {
        auto& slot = by_subject[data.entries[i].patient_id];
        if (slot.first.empty()) slot.first.assign(k, 0.0);
        for (std::size_t j = 0; j < k; ++j) slot.first[j] += record_scores[i][j];
        ++slot.second;
    }
    comorb::RiskMatrix rm;
    for (const auto& c : data.space.codes) rm.diseases.push_back(c.canonical);
    for (const auto& [pid, slot] : by_subject) {
        rm.subject_ids.push_back(pid);
        for (std::size_t j = 0; j < k; ++j)
            rm.values.push_back(slot.first[j] / static_cast<double>(slot.second));
    }
    io::write_risk_matrix((fs::path(eval_dir) / "risk_matrix.csv").string(), rm);

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_runmeta(layout, "evaluate", opt, wall);
    std::cout << "evaluate: labels=" << k << " records=" << data.entries.size() << " -> "
              << eval_dir << "\n";
    return 0;
}

// ---------------- survival ----------------

int cmd_survival(const Options& opt) {
    const auto layout = make_layout(opt, "survival");
    const auto risk_path =
        require_file(layout.file("risk_matrix", "eval/risk_matrix.csv"), "risk matrix CSV");
    const auto outcomes_path =
        require_file(layout.file("outcomes", "records/outcomes.csv"), "outcomes CSV");
    const auto t0 = std::chrono::steady_clock::now();

    auto rm = io::read_risk_matrix(risk_path);
    auto outcomes = io::read_outcomes(outcomes_path);

    std::map<std::string, std::size_t> subject_row;
    for (std::size_t s = 0; s < rm.subject_ids.size(); ++s) subject_row[rm.subject_ids[s]] = s;

    const auto surv_dir = layout.dir("survival_dir", "survival");
    fs::create_directories(surv_dir);
    std::ofstream report(fs::path(surv_dir) / "survival_report.csv");
    report << csv_row({"code", "n_low", "n_medium", "n_high", "surv10_low", "surv10_medium",
                       "surv10_high", "hr", "ci_lo", "ci_hi", "logrank_chi2", "logrank_p"});

    std::set<std::string> codes;
    for (const auto& row : outcomes) codes.insert(row.code);
    std::size_t analyzed = 0;
    for (const auto& code : codes) {
        const auto col_it = std::find(rm.diseases.begin(), rm.diseases.end(), code);
        if (col_it == rm.diseases.end()) continue;
        const auto col = static_cast<std::size_t>(col_it - rm.diseases.begin());

        std::vector<double> scores;
        std::vector<surv::SurvivalRecord> survival_records;
        std::size_t prevalent = 0;
        for (const auto& row : outcomes) {
            if (row.code != code) continue;
            const auto it = subject_row.find(row.subject_id);
            if (it == subject_row.end()) continue;
            if (row.time_years <= 0.0) {
                ++prevalent;  // disease on or before the ECG: excluded
                continue;
            }
            scores.push_back(rm.at(it->second, col));
            survival_records.push_back({row.subject_id, row.time_years, row.event});
        }
        if (scores.size() < 9) continue;
        try {
            const auto rep = surv::survival_report(scores, survival_records);
            report << csv_row(
                {code, std::to_string(rep.group_size[0]), std::to_string(rep.group_size[1]),
                 std::to_string(rep.group_size[2]), fmt_sig(rep.survival_10y[0], 6),
                 fmt_sig(rep.survival_10y[1], 6), fmt_sig(rep.survival_10y[2], 6),
                 fmt_sig(rep.cox_high_vs_low.hr, 6), fmt_sig(rep.cox_high_vs_low.ci_lo, 6),
                 fmt_sig(rep.cox_high_vs_low.ci_hi, 6), fmt_sig(rep.high_vs_low.chi_square, 6),
                 fmt_sig(rep.high_vs_low.p_value, 6)});
            std::cout << code << ": " << surv::format_hr(rep.cox_high_vs_low)
                      << ", log-rank p " << surv::format_p(rep.high_vs_low.p_value);
            if (prevalent > 0) std::cout << " (" << prevalent << " prevalent excluded)";
            std::cout << "\n";
            for (int g = 0; g < 3; ++g) {
                std::ofstream curve(
                    fs::path(surv_dir) /
                    (code + "_" + surv::risk_group_name(static_cast<surv::RiskGroup>(g)) +
                     "_curve.csv"));
                curve << csv_row({"time", "survival", "at_risk"});
                curve << csv_row({"0", "1", std::to_string(rep.group_size[g])});
                const auto& kmc = rep.curves[g];
                for (std::size_t i = 0; i < kmc.times.size(); ++i)
                    curve << csv_row({fmt_full(kmc.times[i]), fmt_full(kmc.survival[i]),
                                      std::to_string(kmc.at_risk[i])});
            }
            ++analyzed;
        } catch (const std::exception& ex) {
            std::cerr << "survival: skipping " << code << ": " << ex.what() << "\n";
        }
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_runmeta(layout, "survival", opt, wall);
    std::cout << "survival: analyzed " << analyzed << " diseases -> " << surv_dir << "\n";
    return 0;
}

// ---------------- comorbidity ----------------

int cmd_comorbidity(const Options& opt) {
    const auto layout = make_layout(opt, "comorbidity");
    const json c = section(opt.config, "comorbidity");
    const int n_bins = get_or(c, "n_bins", 10);
    const auto risk_path =
        require_file(layout.file("risk_matrix", "eval/risk_matrix.csv"), "risk matrix CSV");
    const auto t0 = std::chrono::steady_clock::now();

    auto rm = io::read_risk_matrix(risk_path);
    const auto dir = layout.dir("comorbidity_dir", "comorbidity");
    fs::create_directories(dir);

    const auto rho = comorb::spearman_matrix(rm);
    comorb::export_heatmap_csv(rm, rho, (fs::path(dir) / "heatmap.csv").string());

    double floor = get_or(c, "mi_floor", -1.0);
    if (floor < 0.0) floor = comorb::default_mi_floor(rm, n_bins);
    const auto net = comorb::build_network(rm, n_bins, floor);
    comorb::export_chord_json(net, (fs::path(dir) / "chord.json").string());

    const auto degree = comorb::weighted_degree(net);
    std::vector<std::size_t> order(degree.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (degree[a] != degree[b]) return degree[a] > degree[b];
        return net.nodes[a] < net.nodes[b];
    });
    std::ofstream deg_csv(fs::path(dir) / "degree.csv");
    deg_csv << csv_row({"rank", "code", "weighted_degree"});
    for (std::size_t r = 0; r < order.size(); ++r)
        deg_csv << csv_row(
            {std::to_string(r + 1), net.nodes[order[r]], fmt_sig(degree[order[r]], 6)});

    if (c.contains("scatter_pairs"))
        for (const auto& pair : c.at("scatter_pairs")) {
            const auto a = pair.at(0).get<std::string>();
            const auto b = pair.at(1).get<std::string>();
            comorb::export_scatter_csv(
                rm, a, b, (fs::path(dir) / ("scatter_" + a + "_" + b + ".csv")).string());
        }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_runmeta(layout, "comorbidity", opt, wall);
    std::cout << "comorbidity: " << net.nodes.size() << " nodes, " << net.edges.size()
              << " edges (floor " << fmt_sig(floor, 4) << ") -> " << dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ECG disease-profiling pipeline"};
    app.require_subcommand(1);

    Options opt;
    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "JSON config document")
            ->check(CLI::ExistingFile);
        sub->add_option("--out", opt.out_dir,
                        "run directory (default: runs/<timestamp>-<cmd>)");
        sub->add_option("--seed", opt.seed, "seed override")
            ->each([&](const std::string&) { opt.seed_given = true; });
        sub->add_option("--workers", opt.workers, "worker threads for parallel stages");
        sub->add_flag("--deterministic", opt.deterministic, "force single-threaded numerics");
    };

    struct Cmd {
        const char* name;
        const char* help;
        int (*run)(const Options&);
    };
    static const Cmd commands[] = {
        {"synth", "generate a planted synthetic cohort", cmd_synth},
        {"preprocess", "filter and segment raw records", cmd_preprocess},
        {"build-cohort", "match ECGs to discharge diagnoses", cmd_build_cohort},
        {"train", "train the classifier from scratch",
         [](const Options& o) { return run_training(o, false); }},
        {"finetune", "replace the head of a pretrained backbone and train",
         [](const Options& o) { return run_training(o, true); }},
        {"evaluate", "per-label metrics and the subject risk matrix", cmd_evaluate},
        {"survival", "risk-tertile survival analysis", cmd_survival},
        {"comorbidity", "risk-score association analysis", cmd_comorbidity},
    };
    std::map<std::string, const Cmd*> dispatch;
    for (const auto& cmd : commands) {
        auto* sub = app.add_subcommand(cmd.name, cmd.help);
        add_common(sub);
        if (std::string(cmd.name) == "build-cohort")
            sub->add_flag("--one-per-stay", opt.one_per_stay,
                          "keep only the ECG closest to discharge per stay");
        dispatch[cmd.name] = &cmd;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (!opt.config_path.empty()) {
            std::ifstream is(opt.config_path);
            opt.config = json::parse(is);
        } else {
            opt.config = json::object();
        }
        for (auto* sub : app.get_subcommands()) return dispatch.at(sub->get_name())->run(opt);
        return 2;
    } catch (const UserError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
