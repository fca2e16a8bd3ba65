#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>
#include <string>

#include "ecgdx/cohort.hpp"
#include "ecgdx/util.hpp"

using namespace ecgdx;
using namespace ecgdx::cohort;

namespace {

std::map<IcdCode, std::size_t> counts(std::initializer_list<std::pair<const char*, std::size_t>> xs) {
    std::map<IcdCode, std::size_t> m;
    for (const auto& [code, n] : xs) m[normalize_icd(code)] += n;
    return m;
}

}  // namespace

TEST_CASE("normalize_icd") {
    REQUIRE(normalize_icd(" i21.0 ").canonical == "I210");
    REQUIRE(normalize_icd("E11").canonical == "E11");
    REQUIRE(normalize_icd("I050.1").canonical == "I501");
    REQUIRE(normalize_icd("I021").canonical == "I021");
    REQUIRE(normalize_icd("E00").canonical == "E00");
    REQUIRE(normalize_icd("E00").chapter() == 'E');
    REQUIRE_THROWS_AS(normalize_icd("123"), std::invalid_argument);
    REQUIRE_THROWS_AS(normalize_icd("  "), std::invalid_argument);
    REQUIRE_THROWS_AS(normalize_icd("I2-1"), std::invalid_argument);

    SECTION("idempotent") {
        for (const char* raw : {" i21.0 ", "E11", "I050.1", "I021", "E00", "Z99", "I00501"}) {
            const auto once = normalize_icd(raw);
            REQUIRE(normalize_icd(once.canonical).canonical == once.canonical);
        }
    }
    SECTION("strip policy can be disabled") {
        REQUIRE(normalize_icd("I050.1", ZeroStripPolicy::kNone).canonical == "I0501");
    }
}

TEST_CASE("build_label_space") {
    std::map<std::string, std::string> names = {{"I21", "Acute myocardial infarction"},
                                                {"E11", "Type 2 diabetes mellitus"}};
    SECTION("threshold filters rare codes") {
        auto space = build_label_space(counts({{"I21", 5}, {"E11", 3}, {"Z99", 1}}), names, 2);
        REQUIRE(space.size() == 2);
        REQUIRE(space.codes[0].canonical == "E11");
        REQUIRE(space.codes[1].canonical == "I21");
        REQUIRE(space.names[0] == "Type 2 diabetes mellitus");
    }
    SECTION("min_count 1 keeps all distinct codes") {
        auto space = build_label_space(counts({{"I21", 1}, {"E11", 1}}), names, 1);
        REQUIRE(space.size() == 2);
    }
    SECTION("dot variants collapse before counting") {
        auto m = counts({{"I21.0", 2}, {"I210", 3}});
        REQUIRE(m.size() == 1);
        auto space = build_label_space(m, {}, 5);
        REQUIRE(space.size() == 1);
        REQUIRE(space.names[0].empty());
    }
    SECTION("empty result is an error") {
        REQUIRE_THROWS_WITH(build_label_space(counts({{"I21", 1}}), names, 10),
                            "no labels survive threshold");
    }
}

TEST_CASE("encode and decode labels") {
    auto space = build_label_space(counts({{"E11", 1}, {"I21", 1}, {"J44", 1}}), {}, 1);
    SECTION("encodes membership") {
        auto r = encode_labels({normalize_icd("I21"), normalize_icd("E11")}, space);
        REQUIRE(r.bits == std::vector<std::uint8_t>{1, 1, 0});
        REQUIRE(r.ignored == 0);
    }
    SECTION("empty set gives all zeros") {
        auto r = encode_labels({}, space);
        REQUIRE(r.bits == std::vector<std::uint8_t>{0, 0, 0});
    }
    SECTION("out-of-space codes are tallied") {
        auto r = encode_labels({normalize_icd("X99")}, space);
        REQUIRE(r.bits == std::vector<std::uint8_t>{0, 0, 0});
        REQUIRE(r.ignored == 1);
    }
    SECTION("round-trips through decode") {
        Rng rng(3);
        for (int t = 0; t < 50; ++t) {
            std::vector<std::uint8_t> bits(space.size());
            for (auto& b : bits) b = rng.bernoulli(0.5) ? 1 : 0;
            REQUIRE(encode_labels(decode_labels(bits, space), space).bits == bits);
        }
    }
}

TEST_CASE("align_ecg_to_discharges") {
    auto space = build_label_space(counts({{"I21", 1}, {"E11", 1}}), {}, 1);
    const std::int64_t day = 86400;

    auto discharge = [&](const char* pid, std::int64_t admit_d, std::int64_t disc_d,
                         std::initializer_list<const char*> codes) {
        DischargeEvent d;
        d.patient_id = pid;
        d.admit_at = admit_d * day;
        d.discharge_at = disc_d * day;
        for (const char* c : codes) d.codes.insert(normalize_icd(c));
        return d;
    };
    auto ecg = [&](const char* rid, const char* pid, std::int64_t at_d) {
        return EcgIndexEntry{rid, pid, at_d * day, ""};
    };

    SECTION("in-stay containment") {
        auto entries = align_ecg_to_discharges({ecg("r1", "p1", 3)},
                                               {discharge("p1", 0, 5, {"I21"})}, space);
        REQUIRE(entries.size() == 1);
        REQUIRE(entries[0].labels == std::vector<std::uint8_t>{0, 1});
        REQUIRE(entries[0].discharge_at == 5 * day);
    }
    SECTION("no same-patient discharge means exclusion") {
        AlignStats stats;
        auto entries = align_ecg_to_discharges({ecg("r1", "p1", 3)},
                                               {discharge("p2", 0, 5, {"I21"})}, space, {},
                                               &stats);
        REQUIRE(entries.empty());
        REQUIRE(stats.unmatched == 1);
    }
    SECTION("overlapping stays resolve to the nearest discharge") {
        auto entries = align_ecg_to_discharges(
            {ecg("r1", "p1", 4)},
            {discharge("p1", 0, 9, {"E11"}), discharge("p1", 1, 5, {"I21"})}, space);
        REQUIRE(entries.size() == 1);
        REQUIRE(entries[0].labels == std::vector<std::uint8_t>{0, 1});  // day-5 stay
    }
    SECTION("window policy") {
        AlignPolicy p;
        p.mode = AlignPolicy::Mode::kWindow;
        p.window_s = 2 * day;
        auto entries = align_ecg_to_discharges({ecg("r1", "p1", 7)},
                                               {discharge("p1", 0, 5, {"I21"})}, space, p);
        REQUIRE(entries.size() == 1);
    }
    SECTION("duplicate record ids rejected") {
        REQUIRE_THROWS(align_ecg_to_discharges({ecg("r1", "p1", 3), ecg("r1", "p1", 4)},
                                               {discharge("p1", 0, 5, {"I21"})}, space));
    }
    SECTION("matches whose codes fall outside the space are dropped") {
        AlignStats stats;
        auto entries = align_ecg_to_discharges({ecg("r1", "p1", 3)},
                                               {discharge("p1", 0, 5, {"Z99"})}, space, {},
                                               &stats);
        REQUIRE(entries.empty());
        REQUIRE(stats.empty_label == 1);
    }
    SECTION("one-per-stay keeps the ECG closest to discharge") {
        AlignPolicy p;
        p.one_per_stay = true;
        auto entries = align_ecg_to_discharges(
            {ecg("r1", "p1", 1), ecg("r2", "p1", 4)}, {discharge("p1", 0, 5, {"I21"})}, space,
            p);
        REQUIRE(entries.size() == 1);
        REQUIRE(entries[0].record_id == "r2");
    }
    SECTION("policy predicate holds on every emitted entry") {
        Rng rng(9);
        std::vector<EcgIndexEntry> ecgs;
        std::vector<DischargeEvent> discharges;
        for (int i = 0; i < 200; ++i) {
            const std::string pid = "p" + std::to_string(rng.uniform_int(20));
            const auto admit = static_cast<std::int64_t>(rng.uniform_int(50));
            discharges.push_back(
                discharge(pid.c_str(), admit, admit + 1 + static_cast<std::int64_t>(rng.uniform_int(10)),
                          {rng.bernoulli(0.5) ? "I21" : "E11"}));
        }
        for (int i = 0; i < 300; ++i) {
            const std::string pid = "p" + std::to_string(rng.uniform_int(25));
            ecgs.push_back(ecg(("r" + std::to_string(i)).c_str(), pid.c_str(),
                               static_cast<std::int64_t>(rng.uniform_int(70))));
        }
        auto entries = align_ecg_to_discharges(ecgs, discharges, space);
        std::map<std::string, std::string> ecg_patient;
        for (const auto& e : ecgs) ecg_patient[e.record_id] = e.patient_id;
        for (const auto& entry : entries) {
            REQUIRE(ecg_patient.at(entry.record_id) == entry.patient_id);
            // Some same-patient stay must contain the ECG and end at the
            // reported discharge time.
            bool found = false;
            for (const auto& d : discharges)
                found = found || (d.patient_id == entry.patient_id &&
                                  d.admit_at <= entry.ecg_at &&
                                  entry.ecg_at <= d.discharge_at &&
                                  d.discharge_at == entry.discharge_at);
            REQUIRE(found);
        }
    }
}

TEST_CASE("group_by_chapter") {
    SECTION("partitions by first letter") {
        auto space = build_label_space(counts({{"E11", 1}, {"I21", 1}, {"I50", 1}, {"J44", 1}}),
                                       {}, 1);
        auto groups = group_by_chapter(space);
        REQUIRE(groups.size() == 3);
        REQUIRE(groups.at('E') == std::vector<std::size_t>{0});
        REQUIRE(groups.at('I') == std::vector<std::size_t>{1, 2});
        REQUIRE(groups.at('J') == std::vector<std::size_t>{3});
    }
    SECTION("single-code space") {
        auto space = build_label_space(counts({{"E11", 1}}), {}, 1);
        auto groups = group_by_chapter(space);
        REQUIRE(groups.size() == 1);
        REQUIRE(groups.at('E').size() == 1);
    }
    SECTION("union of groups covers all indices exactly once") {
        Rng rng(13);
        std::map<IcdCode, std::size_t> observed;
        for (int i = 0; i < 1000; ++i) {
            std::string code;
            code += static_cast<char>('A' + rng.uniform_int(26));
            code += std::to_string(10 + rng.uniform_int(90));
            observed[normalize_icd(code)] += 1;
        }
        auto space = build_label_space(observed, {}, 1);
        auto groups = group_by_chapter(space);
        std::set<std::size_t> seen;
        for (const auto& [letter, idxs] : groups)
            for (auto i : idxs) {
                REQUIRE(space.codes[i].chapter() == letter);
                REQUIRE(seen.insert(i).second);  // disjoint
            }
        REQUIRE(seen.size() == space.size());  // exhaustive
    }
}
