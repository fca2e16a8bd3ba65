#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "ecgdx/io.hpp"
#include "ecgdx/testkit.hpp"

using namespace ecgdx;

namespace {

std::filesystem::path test_dir() {
    auto dir = std::filesystem::temp_directory_path() / "ecgdx_io_test";
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("record interchange round-trip") {
    const auto dir = test_dir().string();
    auto rec = testkit::gen_ecg(testkit::MorphParams{}, 2.0, 500.0, 5, 4);
    rec.patient_id = "patient-7";
    rec.acquired_at = parse_iso8601_utc("2024-03-05T12:34:56Z");

    io::write_record(dir, "rec1", rec);
    auto loaded = io::read_record(io::record_paths(dir, "rec1").header);

    REQUIRE(loaded.patient_id == "patient-7");
    REQUIRE(loaded.acquired_at == rec.acquired_at);
    REQUIRE(loaded.fs == 500.0);
    REQUIRE(loaded.lead_names == rec.lead_names);
    REQUIRE(loaded.leads.size() == rec.leads.size());

    // int16 quantization: error bounded by half a scale step
    double max_abs = 0.0;
    for (const auto& lead : rec.leads)
        for (double v : lead.samples) max_abs = std::max(max_abs, std::abs(v));
    const double step = std::max(max_abs / 32000.0, 1e-9);
    for (std::size_t l = 0; l < rec.leads.size(); ++l)
        for (std::size_t i = 0; i < rec.leads[l].samples.size(); ++i)
            REQUIRE(std::abs(loaded.leads[l].samples[i] - rec.leads[l].samples[i]) <=
                    0.5 * step + 1e-12);

    SECTION("write-read-write is byte-stable") {
        io::write_record(dir, "rec2", loaded);
        auto second = io::read_record(io::record_paths(dir, "rec2").header);
        for (std::size_t l = 0; l < loaded.leads.size(); ++l)
            REQUIRE(second.leads[l].samples == loaded.leads[l].samples);
    }
    SECTION("truncated samples file is rejected") {
        const auto paths = io::record_paths(dir, "rec1");
        auto bytes = std::filesystem::file_size(paths.samples);
        std::filesystem::resize_file(paths.samples, bytes / 2);
        REQUIRE_THROWS(io::read_record(paths.header));
        io::write_record(dir, "rec1", rec);  // restore for other sections
    }
}

TEST_CASE("CSV record import") {
    const auto path = (test_dir() / "rec.csv").string();
    {
        std::ofstream os(path);
        os << "I,II\n";
        os << "0.1,0.2\n0.3,0.4\n0.5,0.6\n";
    }
    auto rec = io::read_record_csv(path, 250.0, "p1");
    REQUIRE(rec.fs == 250.0);
    REQUIRE(rec.lead_names == std::vector<std::string>{"I", "II"});
    REQUIRE(rec.leads[1].samples == std::vector<double>{0.2, 0.4, 0.6});

    {
        std::ofstream os(path);
        os << "I,II\n0.1\n";
    }
    REQUIRE_THROWS(io::read_record_csv(path, 250.0));
}

TEST_CASE("tabular round-trips") {
    const auto dir = test_dir();

    SECTION("ecg index") {
        const auto path = (dir / "index.csv").string();
        std::vector<cohort::EcgIndexEntry> entries = {
            {"r1", "p1", parse_iso8601_utc("2024-01-01T00:00:00Z"), "records/r1.json"},
            {"r2", "p2", parse_iso8601_utc("2024-02-01T10:30:00Z"), "records/r2.json"},
        };
        io::write_ecg_index(path, entries);
        auto loaded = io::read_ecg_index(path);
        REQUIRE(loaded.size() == 2);
        REQUIRE(loaded[1].record_id == "r2");
        REQUIRE(loaded[1].acquired_at == entries[1].acquired_at);
    }

    SECTION("discharges with code normalization") {
        const auto path = (dir / "discharges.csv").string();
        {
            std::ofstream os(path);
            os << "patient_id,admit_at,discharge_at,codes\n";
            os << "p1,2024-01-01T00:00:00Z,2024-01-05T00:00:00Z,\"i21.0; e11\"\n";
        }
        auto events = io::read_discharges(path);
        REQUIRE(events.size() == 1);
        REQUIRE(events[0].codes.count({"I210"}) == 1);
        REQUIRE(events[0].codes.count({"E11"}) == 1);
    }

    SECTION("label space TSV") {
        const auto path = (dir / "labels.tsv").string();
        cohort::LabelSpace space;
        space.codes = {{"E11"}, {"I21"}};
        space.names = {"Type 2 diabetes", "Myocardial infarction"};
        space.rebuild_index();
        io::write_label_space(path, space, {10, 20});
        auto loaded = io::read_label_space(path);
        REQUIRE(loaded.size() == 2);
        REQUIRE(loaded.codes[1].canonical == "I21");
        REQUIRE(loaded.names[0] == "Type 2 diabetes");
        REQUIRE(loaded.position({"I21"}) == 1);
    }

    SECTION("cohort manifest") {
        const auto path = (dir / "cohort.csv").string();
        std::vector<cohort::CohortEntry> entries(1);
        entries[0].record_id = "r1";
        entries[0].patient_id = "p1";
        entries[0].labels = {1, 0, 1};
        entries[0].ecg_at = parse_iso8601_utc("2024-01-02T00:00:00Z");
        entries[0].discharge_at = parse_iso8601_utc("2024-01-05T00:00:00Z");
        io::write_cohort(path, entries);
        auto loaded = io::read_cohort(path, 3);
        REQUIRE(loaded.size() == 1);
        REQUIRE(loaded[0].labels == std::vector<std::uint8_t>{1, 0, 1});
        REQUIRE(loaded[0].discharge_at == entries[0].discharge_at);
    }

    SECTION("outcomes") {
        const auto path = (dir / "outcomes.csv").string();
        io::write_outcomes(path, {{"p1", "I50", 3.25, true}, {"p2", "I50", 10.0, false}});
        auto rows = io::read_outcomes(path);
        REQUIRE(rows.size() == 2);
        REQUIRE(rows[0].time_years == 3.25);
        REQUIRE(rows[0].event);
        REQUIRE_FALSE(rows[1].event);
    }

    SECTION("risk matrix") {
        const auto path = (dir / "risk.csv").string();
        testkit::RiskMatrixSpec spec;
        spec.n_subjects = 12;
        spec.codes = {"I10", "E11"};
        spec.seed = 4;
        auto m = testkit::gen_risk_matrix(spec);
        io::write_risk_matrix(path, m);
        auto loaded = io::read_risk_matrix(path);
        REQUIRE(loaded.diseases == m.diseases);
        REQUIRE(loaded.subject_ids == m.subject_ids);
        for (std::size_t i = 0; i < m.values.size(); ++i)
            REQUIRE(loaded.values[i] == m.values[i]);  // full-precision rendering
    }
}

TEST_CASE("content hashing") {
    const auto dir = test_dir();
    const auto a = (dir / "a.bin").string();
    const auto b = (dir / "b.bin").string();
    std::ofstream(a, std::ios::binary) << "hello";
    std::ofstream(b, std::ios::binary) << "world";
    const auto h1 = io::hash_files({a, b});
    const auto h2 = io::hash_files({a, b});
    REQUIRE(h1 == h2);
    std::ofstream(b, std::ios::binary) << "world!";
    REQUIRE(io::hash_files({a, b}) != h1);
    REQUIRE_THROWS(io::hash_files({(dir / "missing.bin").string()}));
}
