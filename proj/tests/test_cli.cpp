#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "metasysid/config.hpp"
#include "metasysid/errors.hpp"

using namespace metasysid;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("metasysid_cli_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

fs::path write_json(const fs::path& p, const json& j) {
    std::ofstream(p) << j.dump(2);
    return p;
}

std::vector<std::string> lines_of(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

json tiny_simulator_config() {
    return json::parse(R"({
      "stream": {"system_class": "lti", "seq_len": 20, "batch_size": 4, "global_seed": 5},
      "model": {"n_layers": 1, "n_heads": 2, "d_model": 8, "n_ctx_enc": 12, "n_ctx_dec": 8, "n_u": 1, "n_y": 1},
      "train": {"n_iterations": 3, "lr": 1e-3, "warmup_iters": 1, "context_length": 12},
      "eval": {"n_test": 8, "eval_seed": 99}
    })");
}

}  // namespace

TEST_CASE("config records reject unknown keys") {
    json j = tiny_simulator_config();
    CHECK_NOTHROW(config::parse_run_config(j));
    j["train"]["learning_rate"] = 1e-3;
    CHECK_THROWS_AS(config::parse_run_config(j), ConfigError);
    j = tiny_simulator_config();
    j["extra"] = json::object();
    CHECK_THROWS_AS(config::parse_run_config(j), ConfigError);
    j = tiny_simulator_config();
    j["model"]["n_ctx"] = 10;
    CHECK_THROWS_AS(config::parse_run_config(j), ConfigError);
    j = tiny_simulator_config();
    j["stream"]["system_class"] = "narx";
    CHECK_THROWS(config::parse_run_config(j));
}

TEST_CASE("config round trip, overrides and fingerprints") {
    const auto cfg = config::parse_run_config(tiny_simulator_config());
    const json back = config::to_json(cfg);
    CHECK(config::to_json(config::parse_run_config(back)) == back);
    CHECK(cfg.train_config().model.kind == train::ModelKind::EncoderDecoder);
    CHECK(cfg.eval_config().stream.global_seed == 99);
    CHECK(cfg.eval_config().context_length == 12);

    json j = tiny_simulator_config();
    config::apply_override(j, "train.lr=3e-4");
    config::apply_override(j, "stream.system_class=wh");
    config::apply_override(j, "eval.sigma_grid=[0,0.5]");
    CHECK(j["train"]["lr"] == 3e-4);
    CHECK(j["stream"]["system_class"] == "wh");
    CHECK(j["eval"]["sigma_grid"].size() == 2);
    CHECK_THROWS_AS(config::apply_override(j, "no_equals_sign"), ConfigError);

    CHECK(config::fingerprint(back) == config::fingerprint(back));
    CHECK(config::fingerprint(back) != config::fingerprint(config::to_json(config::parse_run_config(j))));
    CHECK(config::fingerprint(back).size() == 16);

    for (const auto& entry : fs::directory_iterator(METASYSID_CONFIG_DIR)) {
        INFO(entry.path().string());
        CHECK_NOTHROW(config::load_run_config(entry.path().string()));
    }
}

TEST_CASE("generate writes datasets and a manifest") {
    TempDir dir("generate");
    const auto cfgp = write_json(dir.path / "c.json", tiny_simulator_config());
    const auto out = (dir.path / "runs").string();
    REQUIRE(cli::run({"metasysid", "generate", "--config", cfgp.string(), "--out", out, "--count", "8"}) == 0);
    const fs::path run = fs::read_symlink(fs::path(out) / "latest");
    const fs::path first = fs::path(out) / run;
    CHECK(fs::exists(first / "resolved_config.json"));
    std::ifstream in(first / "manifest.json");
    const json m = json::parse(in);
    CHECK(m["count"] == 8);
    CHECK(m["files"].size() == 8);
    const auto seeds = m["seeds"].get<std::vector<std::uint64_t>>();
    CHECK(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == 8);
    for (int i = 0; i < 8; ++i) CHECK(fs::exists(first / m["files"][std::size_t(i)].get<std::string>()));
    CHECK(lines_of(first / "dataset_000.csv").size() == 21);

    REQUIRE(cli::run({"metasysid", "generate", "--config", cfgp.string(), "--out", out, "--count", "8"}) == 0);
    const fs::path second = fs::path(out) / fs::read_symlink(fs::path(out) / "latest");
    CHECK(second != first);
    for (int i = 0; i < 8; ++i) {
        const auto name = m["files"][std::size_t(i)].get<std::string>();
        CHECK(lines_of(first / name) == lines_of(second / name));
    }

    REQUIRE(cli::run({"metasysid", "generate", "--config", cfgp.string(), "--out", out, "--count", "2", "--set",
                      "stream.system_class=wh"}) == 0);
    std::ifstream win(fs::path(out) / "latest" / "manifest.json");
    const json wm = json::parse(win);
    CHECK(wm["system_class"] == "WH");
    CHECK(wm["order_range"] == json::array({1, 5}));
}

TEST_CASE("usage and config errors exit with status 1") {
    TempDir dir("errors");
    CHECK(cli::run({"metasysid"}) != 0);
    CHECK(cli::run({"metasysid", "bogus"}) != 0);
    json j = tiny_simulator_config();
    j["train"]["typo"] = 1;
    const auto bad = write_json(dir.path / "bad.json", j);
    CHECK(cli::run({"metasysid", "train-simulator", "--config", bad.string(), "--out", dir.path.string()}) ==
          cli::kExitError);
    const auto good = write_json(dir.path / "good.json", tiny_simulator_config());
    CHECK(cli::run({"metasysid", "train-predictor", "--config", good.string(), "--out", dir.path.string()}) ==
          cli::kExitError);
    CHECK(cli::run({"metasysid", "eval", "--checkpoint", (dir.path / "missing").string(), "--out",
                    dir.path.string()}) == cli::kExitError);
}

TEST_CASE("baseline command") {
    TempDir dir("baseline");
    const json j = json::parse(R"({
      "stream": {"seq_len": 200, "global_seed": 3},
      "eval": {"n_test": 4, "context_length": 150, "methods": ["subspace", "arx"], "max_rmse": 0.1}
    })");
    const auto cfgp = write_json(dir.path / "b.json", j);
    const auto out = dir.path / "runs";
    CHECK(cli::run({"metasysid", "baseline", "--config", cfgp.string(), "--out", out.string(), "--assert"}) ==
          cli::kExitOk);
    const auto rows = lines_of(out / "latest" / "baseline_subspace.csv");
    REQUIRE(rows.size() >= 7);
    CHECK(rows[2] == "system,seed,method,rmse,rmse_unskipped");
    CHECK(rows[3].find(",subspace,") != std::string::npos);
    CHECK(fs::exists(out / "latest" / "baseline_arx.csv"));

    CHECK(cli::run({"metasysid", "baseline", "--config", cfgp.string(), "--out", out.string(), "--assert", "--set",
                    "eval.max_rmse=1e-9"}) == cli::kExitAssertFailed);
    // Without --assert the threshold is reported only.
    CHECK(cli::run({"metasysid", "baseline", "--config", cfgp.string(), "--out", out.string(), "--set",
                    "eval.max_rmse=1e-9"}) == cli::kExitOk);

    REQUIRE(cli::run({"metasysid", "generate", "--config", cfgp.string(), "--out", (dir.path / "data").string(),
                      "--count", "3"}) == 0);
    CHECK(cli::run({"metasysid", "baseline", "--config", cfgp.string(), "--out", out.string(), "--data",
                    (dir.path / "data" / "latest").string()}) == cli::kExitOk);
    CHECK(lines_of(out / "latest" / "baseline_subspace.csv").size() == 3 + 3 + 2);
}

TEST_CASE("train, eval and sweep a tiny simulator") {
    TempDir dir("train");
    const auto cfgp = write_json(dir.path / "s.json", tiny_simulator_config());
    const auto out = dir.path / "runs";
    REQUIRE(cli::run({"metasysid", "train-simulator", "--config", cfgp.string(), "--out", out.string()}) == 0);
    const fs::path run = out / fs::read_symlink(out / "latest");
    CHECK(fs::exists(run / "resolved_config.json"));
    CHECK(fs::exists(run / "train_log.csv"));
    CHECK(fs::exists(train::checkpoint_path(run, 3)));

    CHECK(cli::run({"metasysid", "eval", "--config", cfgp.string(), "--out", out.string(), "--checkpoint",
                    run.string()}) == 0);
    CHECK(lines_of(out / "latest" / "report.csv").size() == 3 + 8 + 2);
    CHECK(fs::exists(out / "latest" / "report_curve.csv"));
    CHECK(cli::run({"metasysid", "eval", "--config", cfgp.string(), "--out", out.string(), "--checkpoint",
                    run.string(), "--assert", "--set", "eval.max_rmse=1e-9"}) == cli::kExitAssertFailed);

    CHECK(cli::run({"metasysid", "sweep-noise", "--config", cfgp.string(), "--out", out.string(), "--checkpoint",
                    run.string()}) == 0);
    const auto sweep = lines_of(out / "latest" / "sweep.csv");
    REQUIRE(sweep.size() == 2 + 6);
    CHECK(sweep[1] == "noise_std,mean_rmse,median_rmse,n_test");
    CHECK(sweep[2].rfind("0,", 0) == 0);
    CHECK(sweep[7].rfind("0.5,", 0) == 0);

    CHECK(cli::run({"metasysid", "shift-eval", "--config", cfgp.string(), "--out", out.string(), "--checkpoint",
                    run.string()}) == 0);
    CHECK(lines_of(out / "latest" / "shift.csv").size() == 4);
}
