#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "metasysid/config.hpp"
#include "metasysid/errors.hpp"
#include "metasysid/eval.hpp"
#include "metasysid/trainer.hpp"

namespace metasysid::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out = "runs";
    std::optional<std::uint64_t> seed;
    bool check = false;
    std::vector<std::string> overrides;
    std::string checkpoint;
    std::string data_dir;
    int count = 0;
};

struct Run {
    config::RunConfig cfg;
    json resolved;
    fs::path dir;
};

std::string timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    localtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
    return buf;
}

// Creates <out>/<command>-<timestamp>[-n] and points <out>/latest at it.
fs::path make_run_dir(const fs::path& out, const std::string& command) {
    fs::create_directories(out);
    const std::string base = command + "-" + timestamp();
    fs::path dir = out / base;
    for (int n = 1; fs::exists(dir); ++n) dir = out / (base + "-" + std::to_string(n));
    fs::create_directories(dir);
    const fs::path link = out / "latest";
    std::error_code ec;
    fs::remove(link, ec);
    fs::create_directory_symlink(dir.filename(), link, ec);
    if (ec) std::cerr << "warning: could not update " << link << ": " << ec.message() << "\n";
    return dir;
}

Run prepare(const CommonArgs& a, const std::string& command) {
    json j = json::object();
    if (!a.config_path.empty()) {
        std::ifstream in(a.config_path);
        if (!in) throw ConfigError("cannot open config file " + a.config_path);
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("config file " + a.config_path + ": " + e.what());
        }
    }
    for (const auto& o : a.overrides) config::apply_override(j, o);
    if (a.seed) config::apply_override(j, "stream.global_seed=" + std::to_string(*a.seed));
    Run r;
    r.cfg = config::parse_run_config(j);
    r.resolved = config::to_json(r.cfg);
    r.dir = make_run_dir(a.out, command);
    std::ofstream(r.dir / "resolved_config.json") << r.resolved.dump(2) << "\n";
    return r;
}

train::Checkpoint load_checkpoint_arg(const std::string& arg) {
    if (arg.empty()) throw ConfigError("--checkpoint is required");
    fs::path p = arg;
    if (!fs::exists(p)) throw ConfigError("checkpoint not found: " + arg);
    if (fs::is_directory(p)) p = train::latest_checkpoint(p);
    return train::load_checkpoint(p);
}

void print_report_line(const eval::EvalReport& r, const fs::path& path) {
    std::printf("%s %s class=%s n_test=%d noise_std=%g mean_rmse=%.6g median_rmse=%.6g -> %s\n", r.task.c_str(),
                r.method.c_str(), data::to_string(r.system_class).c_str(), r.n_test(), r.noise_std, r.mean_rmse(),
                r.median_rmse(), path.string().c_str());
}

int finish(bool check, bool passed, const std::string& what) {
    if (!check) return kExitOk;
    std::printf("assert %s: %s\n", passed ? "PASS" : "FAIL", what.c_str());
    return passed ? kExitOk : kExitAssertFailed;
}

// ---------------------------------------------------------------------------

int cmd_generate(const CommonArgs& a) {
    Run r = prepare(a, "generate");
    data::StreamConfig s = r.cfg.stream;
    if (a.count > 0) s.batch_size = a.count;
    const auto batch = data::make_batch(s, 0, SeedSpace::Eval);
    data::export_batch(batch, r.dir);
    json manifest = {{"count", s.batch_size},
                     {"seeds", batch.seeds},
                     {"system_class", data::to_string(s.system_class)},
                     {"seq_len", s.seq_len},
                     {"region", sysgen::to_json(s.region)},
                     {"global_seed", s.global_seed}};
    if (s.system_class == data::SystemClass::Lti)
        manifest["order_range"] = {s.lti_order_min, s.lti_order_max};
    else
        manifest["order_range"] = {s.wh_order_min, s.wh_order_max};
    json files = json::array();
    for (int i = 0; i < s.batch_size; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "dataset_%03d.csv", i);
        files.push_back(name);
    }
    manifest["files"] = files;
    std::ofstream(r.dir / "manifest.json") << manifest.dump(2) << "\n";
    std::printf("wrote %d datasets to %s\n", s.batch_size, r.dir.string().c_str());
    return kExitOk;
}

int cmd_train(const CommonArgs& a, train::ModelKind kind) {
    const bool predictor = kind == train::ModelKind::DecoderOnly;
    Run r = prepare(a, predictor ? "train-predictor" : "train-simulator");
    train::TrainConfig t = r.cfg.train_config();
    if (t.model.kind != kind)
        throw ConfigError(predictor ? "train-predictor needs a decoder-only model section (n_ctx)"
                                    : "train-simulator needs an encoder-decoder model section (n_ctx_enc, n_ctx_dec)");
    t.out_dir = r.dir;
    t.verbose = true;
    const auto result = train::train(t);
    std::printf("trained %lld iterations, final ema loss %.6g, checkpoint %s\n",
                static_cast<long long>(result.checkpoint.iteration), result.checkpoint.loss.ema,
                train::latest_checkpoint(r.dir).string().c_str());
    return kExitOk;
}

int cmd_eval(const CommonArgs& a) {
    const auto ckpt = load_checkpoint_arg(a.checkpoint);
    Run r = prepare(a, "eval");
    const auto net = train::instantiate(ckpt);
    eval::EvalConfig e = r.cfg.eval_config();
    const eval::EvalReport rep = ckpt.model.kind == train::ModelKind::DecoderOnly
                                     ? eval::eval_prediction(net->predictor(), e)
                                     : eval::eval_simulation(net->simulator(), e);
    const fs::path path = r.dir / "report.csv";
    eval::export_report(rep, path);
    print_report_line(rep, path);
    if (!r.cfg.eval.max_rmse) return finish(a.check, true, "no eval.max_rmse threshold configured");
    char what[128];
    std::snprintf(what, sizeof what, "mean rmse %.6g < %.6g", rep.mean_rmse(), *r.cfg.eval.max_rmse);
    return finish(a.check, rep.mean_rmse() < *r.cfg.eval.max_rmse, what);
}

const model::EncoderDecoderModel<float>& require_simulator(const train::MetaModel& net, const char* command) {
    if (net.spec().kind != train::ModelKind::EncoderDecoder)
        throw ConfigError(std::string(command) + " needs an encoder-decoder simulator checkpoint");
    return net.simulator();
}

int cmd_sweep_noise(const CommonArgs& a) {
    const auto ckpt = load_checkpoint_arg(a.checkpoint);
    Run r = prepare(a, "sweep-noise");
    const auto net = train::instantiate(ckpt);
    const auto rows = eval::noise_sweep(require_simulator(*net, "sweep-noise"), r.cfg.eval_config(),
                                        r.cfg.eval.sigma_grid);
    eval::export_sweep(rows, r.dir / "sweep.csv");
    std::vector<double> means;
    for (const auto& row : rows) {
        char name[48];
        std::snprintf(name, sizeof name, "report_sigma_%.3g.csv", row.noise_std);
        eval::export_report(row.report, r.dir / name);
        print_report_line(row.report, r.dir / name);
        means.push_back(row.report.mean_rmse());
    }
    const auto mono = eval::check_nondecreasing(means, r.cfg.eval.monotone_tolerance);
    char what[160];
    std::snprintf(what, sizeof what, "rmse non-decreasing in sigma (%d violations, worst %.3g%%)", mono.violations,
                  100.0 * mono.worst_relative);
    return finish(a.check, mono.ok, what);
}

int cmd_shift_eval(const CommonArgs& a) {
    const auto ckpt = load_checkpoint_arg(a.checkpoint);
    Run r = prepare(a, "shift-eval");
    const auto net = train::instantiate(ckpt);
    const auto res = eval::distribution_shift_eval(require_simulator(*net, "shift-eval"), r.cfg.eval_config(),
                                                   r.cfg.eval.shifted_region);
    eval::export_report(res.nominal, r.dir / "report_nominal.csv");
    eval::export_report(res.shifted, r.dir / "report_shifted.csv");
    const double ratio = res.shifted.mean_rmse() / res.nominal.mean_rmse();
    {
        std::ofstream out(r.dir / "shift.csv");
        char line[160];
        out << "region,mag_min,mag_max,phase_min,phase_max,mean_rmse,median_rmse\n";
        for (const auto* rep : {&res.nominal, &res.shifted}) {
            std::snprintf(line, sizeof line, "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                          rep == &res.nominal ? "nominal" : "shifted", rep->region.mag_min, rep->region.mag_max,
                          rep->region.phase_min, rep->region.phase_max, rep->mean_rmse(), rep->median_rmse());
            out << line;
        }
        std::snprintf(line, sizeof line, "# ratio=%.9g\n", ratio);
        out << line;
    }
    std::printf("nominal mean_rmse=%.6g shifted mean_rmse=%.6g ratio=%.4g\n", res.nominal.mean_rmse(),
                res.shifted.mean_rmse(), ratio);
    char what[128];
    std::snprintf(what, sizeof what, "shifted/nominal %.4g >= %.4g", ratio, r.cfg.eval.min_shift_ratio);
    return finish(a.check, ratio >= r.cfg.eval.min_shift_ratio, what);
}

eval::TestEnsemble ensemble_from_dir(const fs::path& dir) {
    eval::TestEnsemble ens;
    std::vector<std::uint64_t> seeds;
    if (fs::exists(dir / "manifest.json")) {
        std::ifstream in(dir / "manifest.json");
        const json m = json::parse(in);
        seeds = m.at("seeds").get<std::vector<std::uint64_t>>();
    }
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("dataset_", 0) == 0 && entry.path().extension() == ".csv") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ConfigError("no dataset_*.csv files in " + dir.string());
    for (std::size_t i = 0; i < files.size(); ++i) {
        data::RawDataset ds;
        data::read_dataset_csv(files[i], ds.u, ds.y);
        ds.seed = i < seeds.size() ? seeds[i] : 0;
        ens.datasets.push_back(std::move(ds));
    }
    return ens;
}

int cmd_baseline(const CommonArgs& a) {
    std::optional<eval::TestEnsemble> files;
    if (!a.data_dir.empty()) files = ensemble_from_dir(a.data_dir);
    Run r = prepare(a, "baseline");
    eval::EvalConfig e = r.cfg.eval_config();
    if (files) {
        e.stream.seq_len = static_cast<int>(files->datasets.front().u.size());
        e.n_test = static_cast<int>(files->datasets.size());
    }
    if (e.context_length <= 0) e.context_length = e.stream.seq_len - e.stream.seq_len / 5;
    bool passed = true;
    std::string what = "no eval.max_rmse threshold configured";
    for (const auto& name : r.cfg.eval.methods) {
        const auto method = name == "subspace" ? eval::BaselineMethod::Subspace : eval::BaselineMethod::Arx;
        const eval::EvalReport rep =
            files ? eval::eval_baseline(method, e, *files, r.cfg.eval.subspace, r.cfg.eval.arx)
                  : eval::eval_baseline(method, e, r.cfg.eval.subspace, r.cfg.eval.arx);
        const fs::path path = r.dir / ("baseline_" + name + ".csv");
        eval::export_report(rep, path);
        print_report_line(rep, path);
        if (r.cfg.eval.max_rmse && method == eval::BaselineMethod::Subspace) {
            passed = passed && rep.mean_rmse() < *r.cfg.eval.max_rmse;
            char buf[128];
            std::snprintf(buf, sizeof buf, "subspace mean rmse %.6g < %.6g", rep.mean_rmse(), *r.cfg.eval.max_rmse);
            what = buf;
        }
    }
    return finish(a.check, passed, what);
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"In-context system identification with Transformer meta-models"};
    app.require_subcommand(1);
    CommonArgs a;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", a.config_path, "JSON config file (sections stream, model, train, eval)");
        sub->add_option("--out", a.out, "Base output directory")->capture_default_str();
        sub->add_option("--seed", a.seed, "Override stream.global_seed");
        sub->add_flag("--assert", a.check, "Exit with status 2 when the acceptance check fails");
        sub->add_option("--set", a.overrides, "Override a config key, e.g. --set train.lr=3e-4");
    };
    auto* gen = app.add_subcommand("generate", "Write synthetic datasets and a manifest");
    add_common(gen);
    gen->add_option("--count", a.count, "Number of datasets (default: stream.batch_size)");
    auto* tp = app.add_subcommand("train-predictor", "Train the decoder-only one-step predictor");
    add_common(tp);
    auto* ts = app.add_subcommand("train-simulator", "Train the encoder-decoder simulator");
    add_common(ts);
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a fresh test ensemble");
    add_common(ev);
    auto* sw = app.add_subcommand("sweep-noise", "Simulation rmse over a grid of context noise levels");
    add_common(sw);
    auto* sh = app.add_subcommand("shift-eval", "Nominal versus shifted eigenvalue region");
    add_common(sh);
    for (auto* sub : {ev, sw, sh})
        sub->add_option("--checkpoint", a.checkpoint, "Checkpoint file or training run directory")->required();
    auto* bl = app.add_subcommand("baseline", "Subspace and ARX baselines");
    add_common(bl);
    bl->add_option("--data", a.data_dir, "Directory written by `generate` (default: fresh test ensemble)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen->parsed()) return cmd_generate(a);
        if (tp->parsed()) return cmd_train(a, train::ModelKind::DecoderOnly);
        if (ts->parsed()) return cmd_train(a, train::ModelKind::EncoderDecoder);
        if (ev->parsed()) return cmd_eval(a);
        if (sw->parsed()) return cmd_sweep_noise(a);
        if (sh->parsed()) return cmd_shift_eval(a);
        if (bl->parsed()) return cmd_baseline(a);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitError;
    }
    return kExitError;
}

int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& s : args) argv.push_back(s.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace metasysid::cli
