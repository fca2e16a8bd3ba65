#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const std::string kCli = ECGDX_CLI_PATH;

int run(const std::string& args) {
    const std::string cmd = kCli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / "ecgdx_cli_test" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string write_config(const fs::path& dir, int n_subjects) {
    nlohmann::json cfg;
    cfg["seed"] = 3;
    cfg["synth"] = {{"n_subjects", n_subjects}, {"duration_s", 4.0}, {"fs", 250.0},
                    {"n_leads", 2},  {"mains_mv", 0.2},  {"wander_mv", 0.2}};
    cfg["preprocess"] = {{"target_fs", 250.0}, {"segment_s", 4.0}};
    cfg["cohort"] = {{"min_count", 3}};
    cfg["model"] = {{"preset", "compact"}};
    cfg["train"] = {{"epochs", 2}, {"batch_size", 16}, {"lr0", 5e-4}, {"patience", 2}};
    cfg["evaluate"] = {{"bootstrap", 100}};
    const auto path = dir / "config.json";
    std::ofstream(path) << cfg.dump(2);
    return path.string();
}

std::size_t line_count(const fs::path& p) {
    std::ifstream is(p);
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) ++n;
    return n;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
    REQUIRE(run("--help") == 0);
    REQUIRE(run("not-a-command") == 2);
    REQUIRE(run("train") == 2);  // no cohort anywhere near the default out dir
}

TEST_CASE("synth writes one manifest row per record") {
    const auto dir = fresh_dir("synth");
    const auto cfg = write_config(dir, 30);
    const auto out = (dir / "run").string();
    REQUIRE(run("synth --config " + cfg + " --out " + out) == 0);
    REQUIRE(line_count(dir / "run/records/ecg_index.csv") == 31);  // header + rows
    REQUIRE(fs::exists(dir / "run/records/r000007.json"));
    REQUIRE(fs::exists(dir / "run/records/discharges.csv"));
    REQUIRE(fs::exists(dir / "run/runmeta_synth.json"));

    REQUIRE(run("preprocess --config " + cfg + " --out " + out) == 0);
    REQUIRE(line_count(dir / "run/segments/manifest.csv") == 31);
}

TEST_CASE("preprocess tolerates corrupt records and is idempotent") {
    const auto dir = fresh_dir("corrupt");
    const auto cfg = write_config(dir, 12);
    const auto out = (dir / "run").string();
    REQUIRE(run("synth --config " + cfg + " --out " + out) == 0);

    // Corrupt one record's sample file.
    const auto victim = dir / "run/records/r000003.i16";
    std::ofstream(victim, std::ios::binary) << "xx";

    REQUIRE(run("preprocess --config " + cfg + " --out " + out) == 0);  // still exit 0
    const auto rejects = slurp(dir / "run/segments/rejects.csv");
    REQUIRE(rejects.find("r000003") != std::string::npos);
    REQUIRE(line_count(dir / "run/segments/manifest.csv") == 12);  // header + 11 good

    // Re-run: nothing rewritten.
    const auto seg_header = dir / "run/segments/r000001_s0.json";
    const auto before = fs::last_write_time(seg_header);
    REQUIRE(run("preprocess --config " + cfg + " --out " + out) == 0);
    REQUIRE(fs::last_write_time(seg_header) == before);
}

TEST_CASE("evaluate without a checkpoint exits 2") {
    const auto dir = fresh_dir("missing");
    const auto cfg = write_config(dir, 12);
    const auto out = (dir / "run").string();
    REQUIRE(run("synth --config " + cfg + " --out " + out) == 0);
    REQUIRE(run("preprocess --config " + cfg + " --out " + out) == 0);
    REQUIRE(run("build-cohort --config " + cfg + " --out " + out) == 0);
    REQUIRE(run("evaluate --config " + cfg + " --out " + out) == 2);
}

TEST_CASE("pipeline reruns byte-identically under --deterministic") {
    const auto dir = fresh_dir("repro");
    const auto cfg = write_config(dir, 40);
    for (const char* out_name : {"a", "b"}) {
        const auto out = (dir / out_name).string();
        for (const char* cmd :
             {"synth", "preprocess", "build-cohort", "train", "evaluate"}) {
            REQUIRE(run(std::string(cmd) + " --config " + cfg + " --out " + out +
                        " --deterministic") == 0);
        }
    }
    REQUIRE(slurp(dir / "a/eval/metrics.csv") == slurp(dir / "b/eval/metrics.csv"));
    REQUIRE(slurp(dir / "a/eval/risk_matrix.csv") == slurp(dir / "b/eval/risk_matrix.csv"));
    REQUIRE(slurp(dir / "a/model/history.csv") == slurp(dir / "b/model/history.csv"));
}

TEST_CASE("finetune replaces the head from a base checkpoint") {
    const auto dir = fresh_dir("finetune");
    const auto cfg_path = write_config(dir, 30);
    const auto out = (dir / "run").string();
    for (const char* cmd : {"synth", "preprocess", "build-cohort", "train"})
        REQUIRE(run(std::string(cmd) + " --config " + cfg_path + " --out " + out) == 0);

    // missing base checkpoint -> exit 2
    REQUIRE(run("finetune --config " + cfg_path + " --out " + out) == 2);

    nlohmann::json cfg = nlohmann::json::parse(slurp(dir / "config.json"));
    cfg["train"]["base_checkpoint"] = (dir / "run/model/model.ckpt").string();
    cfg["paths"] = {{"model_dir", (dir / "run/model2").string()}};
    const auto cfg2 = dir / "config2.json";
    std::ofstream(cfg2) << cfg.dump(2);
    REQUIRE(run("finetune --config " + cfg2.string() + " --out " + out) == 0);
    REQUIRE(fs::exists(dir / "run/model2/model.ckpt"));
}
