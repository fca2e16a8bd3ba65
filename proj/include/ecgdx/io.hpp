#pragma once

// Record interchange and tabular I/O. A record on disk is a JSON header
// (patient id, ISO-8601 UTC acquisition time, sampling rate, lead names,
// sample count, scale in mV per unit) next to a raw file of little-endian
// signed 16-bit integers, lead-major. CSV import takes one column per lead
// with a header row of lead names and an externally supplied rate.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ecgdx/cohort.hpp"
#include "ecgdx/comorbidity.hpp"
#include "ecgdx/signal.hpp"
#include "ecgdx/survival.hpp"
#include "ecgdx/util.hpp"

namespace ecgdx::io {

// ---------------- record interchange ----------------

struct RecordPaths {
    std::string header;   // <id>.json
    std::string samples;  // <id>.i16
};

inline RecordPaths record_paths(const std::string& dir, const std::string& record_id) {
    const auto base = (std::filesystem::path(dir) / record_id).string();
    return {base + ".json", base + ".i16"};
}

inline void write_record(const std::string& dir, const std::string& record_id,
                         const dsp::EcgRecord& record) {
    record.validate();
    const auto paths = record_paths(dir, record_id);
    const std::size_t n = record.leads.front().samples.size();

    double max_abs = 0.0;
    for (const auto& lead : record.leads)
        for (double v : lead.samples) max_abs = std::max(max_abs, std::abs(v));
    const double scale = std::max(max_abs / 32000.0, 1e-9);  // mV per unit

    nlohmann::json header;
    header["patient_id"] = record.patient_id;
    header["acquired_at"] = format_iso8601_utc(record.acquired_at);
    header["fs"] = record.fs;
    header["lead_names"] = record.lead_names;
    header["samples_per_lead"] = n;
    header["scale_mv_per_unit"] = scale;
    std::ofstream hs(paths.header);
    if (!hs) throw std::runtime_error("cannot write " + paths.header);
    hs << header.dump(2) << "\n";

    std::ofstream ss(paths.samples, std::ios::binary);
    if (!ss) throw std::runtime_error("cannot write " + paths.samples);
    std::vector<unsigned char> buf;
    buf.reserve(2 * n * record.leads.size());
    for (const auto& lead : record.leads) {
        for (double v : lead.samples) {
            long q = std::lround(v / scale);
            q = std::min(std::max(q, -32768L), 32767L);
            const auto u = static_cast<std::uint16_t>(static_cast<std::int16_t>(q));
            buf.push_back(static_cast<unsigned char>(u & 0xff));
            buf.push_back(static_cast<unsigned char>(u >> 8));
        }
    }
    ss.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size()));
    if (!ss) throw std::runtime_error("short write: " + paths.samples);
}

inline dsp::EcgRecord read_record(const std::string& header_path) {
    std::ifstream hs(header_path);
    if (!hs) throw std::runtime_error("cannot open record header: " + header_path);
    nlohmann::json header = nlohmann::json::parse(hs, nullptr, true);

    dsp::EcgRecord record;
    record.patient_id = header.at("patient_id").get<std::string>();
    record.acquired_at = parse_iso8601_utc(header.at("acquired_at").get<std::string>());
    record.fs = header.at("fs").get<double>();
    const auto names = header.at("lead_names").get<std::vector<std::string>>();
    const auto n = header.at("samples_per_lead").get<std::size_t>();
    const auto scale = header.at("scale_mv_per_unit").get<double>();
    if (n == 0) throw std::runtime_error("record has no samples: " + header_path);

    std::string samples_path = header_path;
    const auto pos = samples_path.rfind(".json");
    if (pos == std::string::npos)
        throw std::runtime_error("header path must end in .json: " + header_path);
    samples_path.replace(pos, 5, ".i16");

    std::ifstream ss(samples_path, std::ios::binary);
    if (!ss) throw std::runtime_error("cannot open record samples: " + samples_path);
    std::vector<unsigned char> buf(2 * n * names.size());
    ss.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (ss.gcount() != static_cast<std::streamsize>(buf.size()))
        throw std::runtime_error("truncated samples file: " + samples_path);

    record.lead_names = names;
    record.leads.resize(names.size());
    std::size_t offset = 0;
    for (auto& lead : record.leads) {
        lead.fs = record.fs;
        lead.samples.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto u = static_cast<std::uint16_t>(buf[offset] |
                                                      (static_cast<unsigned>(buf[offset + 1]) << 8));
            lead.samples[i] = static_cast<double>(static_cast<std::int16_t>(u)) * scale;
            offset += 2;
        }
    }
    record.validate();
    return record;
}

// CSV import: header row of lead names, one column per lead, rate supplied
// by the caller.
inline dsp::EcgRecord read_record_csv(const std::string& path, double fs,
                                      const std::string& patient_id = "",
                                      std::int64_t acquired_at = 0) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open CSV record: " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty CSV record: " + path);
    const auto names = csv_parse_line(line);

    dsp::EcgRecord record;
    record.patient_id = patient_id;
    record.acquired_at = acquired_at;
    record.fs = fs;
    record.lead_names = names;
    record.leads.resize(names.size());
    for (auto& lead : record.leads) lead.fs = fs;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        const auto fields = csv_parse_line(line);
        if (fields.size() != names.size())
            throw std::runtime_error("ragged CSV row in " + path);
        for (std::size_t l = 0; l < fields.size(); ++l)
            record.leads[l].samples.push_back(std::stod(fields[l]));
    }
    record.validate();
    return record;
}

// ---------------- content hashing ----------------

inline std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hash_files(const std::vector<std::string>& paths) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& path : paths) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("cannot hash missing file: " + path);
        char buf[8192];
        while (is.read(buf, sizeof(buf)) || is.gcount() > 0)
            h = fnv1a64(buf, static_cast<std::size_t>(is.gcount()), h);
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

// ---------------- tabular inputs ----------------

inline std::vector<cohort::EcgIndexEntry> read_ecg_index(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open ECG index: " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty ECG index: " + path);
    std::vector<cohort::EcgIndexEntry> entries;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        const auto f = csv_parse_line(line);
        if (f.size() < 4) throw std::runtime_error("bad ECG index row: " + line);
        entries.push_back({f[0], f[1], parse_iso8601_utc(f[2]), f[3]});
    }
    return entries;
}

inline void write_ecg_index(const std::string& path,
                            const std::vector<cohort::EcgIndexEntry>& entries) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << csv_row({"record_id", "patient_id", "acquired_at", "path"});
    for (const auto& e : entries)
        os << csv_row({e.record_id, e.patient_id, format_iso8601_utc(e.acquired_at), e.path});
}

// Discharges CSV: patient_id, admit_at, discharge_at, semicolon-joined codes.
inline std::vector<cohort::DischargeEvent> read_discharges(
    const std::string& path, cohort::ZeroStripPolicy policy = cohort::ZeroStripPolicy::kLengthGuarded) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open discharges: " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty discharges: " + path);
    std::vector<cohort::DischargeEvent> events;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        const auto f = csv_parse_line(line);
        if (f.size() < 4) throw std::runtime_error("bad discharge row: " + line);
        cohort::DischargeEvent d;
        d.patient_id = f[0];
        d.admit_at = parse_iso8601_utc(f[1]);
        d.discharge_at = parse_iso8601_utc(f[2]);
        for (const auto& raw : split(f[3], ';'))
            if (!trim(raw).empty()) d.codes.insert(cohort::normalize_icd(raw, policy));
        d.validate();
        events.push_back(std::move(d));
    }
    return events;
}

inline void write_discharges(const std::string& path,
                             const std::vector<cohort::DischargeEvent>& events) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << csv_row({"patient_id", "admit_at", "discharge_at", "codes"});
    for (const auto& d : events) {
        std::vector<std::string> codes;
        for (const auto& c : d.codes) codes.push_back(c.canonical);
        os << csv_row({d.patient_id, format_iso8601_utc(d.admit_at),
                       format_iso8601_utc(d.discharge_at), join(codes, ";")});
    }
}

// Label-name dictionary: two tab-separated columns, code then name.
inline std::map<std::string, std::string> read_name_dictionary(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open name dictionary: " + path);
    std::map<std::string, std::string> names;
    std::string line;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) continue;
        const auto code = cohort::normalize_icd(line.substr(0, tab));
        names[code.canonical] = trim(line.substr(tab + 1));
    }
    return names;
}

// Label space TSV: index, code, name, train_count.
inline void write_label_space(const std::string& path, const cohort::LabelSpace& space,
                              const std::vector<std::size_t>& train_counts) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "index\tcode\tname\ttrain_count\n";
    for (std::size_t i = 0; i < space.size(); ++i)
        os << i << "\t" << space.codes[i].canonical << "\t" << space.names[i] << "\t"
           << (i < train_counts.size() ? train_counts[i] : 0) << "\n";
}

inline cohort::LabelSpace read_label_space(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open label space: " + path);
    cohort::LabelSpace space;
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        const auto f = split(line, '\t');
        if (f.size() < 3) throw std::runtime_error("bad label space row: " + line);
        space.codes.push_back({f[1]});
        space.names.push_back(f[2]);
    }
    if (space.codes.empty()) throw std::runtime_error("empty label space: " + path);
    space.rebuild_index();
    return space;
}

// Cohort manifest CSV: record_id, patient_id, ecg_at, discharge_at,
// semicolon-joined set-bit indices.
inline void write_cohort(const std::string& path, const std::vector<cohort::CohortEntry>& entries) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << csv_row({"record_id", "patient_id", "ecg_at", "discharge_at", "label_indices"});
    for (const auto& e : entries) {
        std::vector<std::string> bits;
        for (std::size_t i = 0; i < e.labels.size(); ++i)
            if (e.labels[i]) bits.push_back(std::to_string(i));
        os << csv_row({e.record_id, e.patient_id, format_iso8601_utc(e.ecg_at),
                       format_iso8601_utc(e.discharge_at), join(bits, ";")});
    }
}

inline std::vector<cohort::CohortEntry> read_cohort(const std::string& path,
                                                    std::size_t label_count) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open cohort manifest: " + path);
    std::string line;
    std::getline(is, line);
    std::vector<cohort::CohortEntry> entries;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        const auto f = csv_parse_line(line);
        if (f.size() < 5) throw std::runtime_error("bad cohort row: " + line);
        cohort::CohortEntry e;
        e.record_id = f[0];
        e.patient_id = f[1];
        e.ecg_at = parse_iso8601_utc(f[2]);
        e.discharge_at = parse_iso8601_utc(f[3]);
        e.labels.assign(label_count, 0);
        for (const auto& idx : split(f[4], ';')) {
            if (trim(idx).empty()) continue;
            const auto i = static_cast<std::size_t>(std::stoul(idx));
            if (i >= label_count) throw std::runtime_error("label index out of range: " + line);
            e.labels[i] = 1;
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

// Outcomes CSV: subject_id, disease code, event_time_years, event_flag.
struct OutcomeRow {
    std::string subject_id;
    std::string code;  // canonical
    double time_years = 0.0;
    bool event = false;
};

inline std::vector<OutcomeRow> read_outcomes(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open outcomes: " + path);
    std::string line;
    std::getline(is, line);
    std::vector<OutcomeRow> rows;
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        const auto f = csv_parse_line(line);
        if (f.size() < 4) throw std::runtime_error("bad outcome row: " + line);
        rows.push_back({f[0], cohort::normalize_icd(f[1]).canonical, std::stod(f[2]),
                        f[3] == "1" || f[3] == "true"});
    }
    return rows;
}

inline void write_outcomes(const std::string& path, const std::vector<OutcomeRow>& rows) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << csv_row({"subject_id", "code", "event_time_years", "event_flag"});
    for (const auto& r : rows)
        os << csv_row({r.subject_id, r.code, fmt_full(r.time_years), r.event ? "1" : "0"});
}

// Risk matrix CSV: subject_id, then one column per disease code.
inline void write_risk_matrix(const std::string& path, const comorb::RiskMatrix& m) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    std::vector<std::string> header = {"subject_id"};
    header.insert(header.end(), m.diseases.begin(), m.diseases.end());
    os << csv_row(header);
    for (std::size_t s = 0; s < m.n_subjects(); ++s) {
        std::vector<std::string> row = {m.subject_ids[s]};
        for (std::size_t d = 0; d < m.n_diseases(); ++d) row.push_back(fmt_full(m.at(s, d)));
        os << csv_row(row);
    }
}

inline comorb::RiskMatrix read_risk_matrix(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open risk matrix: " + path);
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("empty risk matrix: " + path);
    auto header = csv_parse_line(line);
    if (header.size() < 2) throw std::runtime_error("risk matrix needs disease columns");
    comorb::RiskMatrix m;
    m.diseases.assign(header.begin() + 1, header.end());
    while (std::getline(is, line)) {
        if (trim(line).empty()) continue;
        const auto f = csv_parse_line(line);
        if (f.size() != header.size()) throw std::runtime_error("ragged risk matrix row");
        m.subject_ids.push_back(f[0]);
        for (std::size_t d = 1; d < f.size(); ++d) m.values.push_back(std::stod(f[d]));
    }
    m.validate();
    return m;
}

}  // namespace ecgdx::io
