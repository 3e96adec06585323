#include "metasysid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "metasysid/errors.hpp"
#include "metasysid/parallel.hpp"
#include "metasysid/seeding.hpp"

namespace metasysid::eval {

namespace fs = std::filesystem;

double rmse(std::span<const double> y, std::span<const double> yhat, int skip) {
    if (y.size() != yhat.size()) throw std::invalid_argument("rmse: length mismatch");
    if (skip < 0 || static_cast<std::size_t>(skip) >= y.size()) throw std::invalid_argument("rmse: skip out of range");
    double acc = 0.0;
    for (std::size_t k = static_cast<std::size_t>(skip); k < y.size(); ++k) {
        const double e = y[k] - yhat[k];
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(y.size() - static_cast<std::size_t>(skip)));
}

void EvalConfig::validate() const {
    stream.validate();
    if (n_test < 1) throw ConfigError("eval: n_test must be >= 1");
    if (noise_std < 0.0) throw ConfigError("eval: noise_std must be >= 0");
    if (chunk < 1) throw ConfigError("eval: chunk must be >= 1");
}

TestEnsemble make_test_ensemble(const data::StreamConfig& stream, int n_test) {
    stream.validate();
    TestEnsemble ens;
    ens.datasets.resize(static_cast<std::size_t>(n_test));
    parallel_for(ens.datasets.size(), [&](std::size_t i) {
        ens.datasets[i] = data::generate_dataset(stream, dataset_seed(stream.global_seed, SeedSpace::Eval, 0, i));
    });
    return ens;
}

double EvalReport::mean_rmse() const {
    return rmse.empty() ? 0.0 : std::accumulate(rmse.begin(), rmse.end(), 0.0) / static_cast<double>(rmse.size());
}

double EvalReport::median_rmse() const {
    if (rmse.empty()) return 0.0;
    std::vector<double> v = rmse;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double EvalReport::mean_rmse_unskipped() const {
    return rmse_unskipped.empty() ? 0.0
                                  : std::accumulate(rmse_unskipped.begin(), rmse_unskipped.end(), 0.0) /
                                        static_cast<double>(rmse_unskipped.size());
}

double EvalReport::curve_at(int k) const {
    const int idx = k - curve_first_step;
    if (idx < 0 || idx >= static_cast<int>(curve.size())) throw std::out_of_range("curve_at: step outside the curve");
    return curve[static_cast<std::size_t>(idx)];
}

namespace {

std::vector<double> noisy_copy(std::span<const double> y, double sigma, std::uint64_t eval_seed, std::size_t i) {
    Rng rng(dataset_seed(eval_seed, SeedSpace::Noise, 0, i));
    return data::add_output_noise(y, sigma, rng);
}

struct SystemErrors {
    std::vector<double> target;
    std::vector<double> estimate;
};

// Fills per-system rmse fields and the mean absolute error curve.
void summarize(EvalReport& rep, const std::vector<SystemErrors>& errs, int skip) {
    const std::size_t n = errs.size();
    rep.rmse.resize(n);
    rep.rmse_unskipped.resize(n);
    const std::size_t horizon = n ? errs[0].target.size() : 0;
    rep.curve.assign(horizon, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        rep.rmse[i] = rmse(errs[i].target, errs[i].estimate, skip);
        rep.rmse_unskipped[i] = rmse(errs[i].target, errs[i].estimate, 0);
        for (std::size_t t = 0; t < horizon; ++t) rep.curve[t] += std::abs(errs[i].target[t] - errs[i].estimate[t]);
    }
    for (double& c : rep.curve) c /= static_cast<double>(n);
}

EvalReport base_report(const char* task, const EvalConfig& cfg) {
    EvalReport rep;
    rep.task = task;
    rep.system_class = cfg.stream.system_class;
    rep.region = cfg.stream.region;
    rep.noise_std = cfg.noise_std;
    rep.seq_len = cfg.stream.seq_len;
    rep.eval_seed = cfg.stream.global_seed;
    return rep;
}

// Context normalized by its own statistics; noise added after normalization.
struct SimulationCase {
    std::vector<double> u_context, y_context, u_query, y_target;
};

SimulationCase simulation_case(const data::RawDataset& ds, int m, double sigma, std::uint64_t eval_seed,
                               std::size_t i) {
    const std::span<const double> y(ds.y);
    const auto stats = data::normalize_output(y.first(static_cast<std::size_t>(m)));
    const auto yn = data::normalize_with(y, stats.mean, stats.stddev);
    SimulationCase c;
    c.u_context.assign(ds.u.begin(), ds.u.begin() + m);
    c.u_query.assign(ds.u.begin() + m, ds.u.end());
    c.y_target.assign(yn.begin() + m, yn.end());
    c.y_context = noisy_copy(std::span<const double>(yn).first(static_cast<std::size_t>(m)), sigma, eval_seed, i);
    return c;
}

template <class Fn>
void for_each_chunk(std::size_t n, int chunk, Fn&& fn) {
    const std::size_t n_chunks = (n + static_cast<std::size_t>(chunk) - 1) / static_cast<std::size_t>(chunk);
    parallel_for(n_chunks, [&](std::size_t c) {
        const std::size_t begin = c * static_cast<std::size_t>(chunk);
        fn(begin, std::min(n, begin + static_cast<std::size_t>(chunk)));
    });
}

}  // namespace

EvalReport eval_prediction(const model::DecoderOnlyModel<float>& model, const EvalConfig& cfg) {
    cfg.validate();
    const int N = cfg.stream.seq_len;
    if (N - 1 > model.config().n_ctx)
        throw ConfigError("eval_prediction: model context " + std::to_string(model.config().n_ctx) +
                          " is shorter than sequence length - 1 = " + std::to_string(N - 1));
    EvalReport rep = base_report("prediction", cfg);
    rep.skip = cfg.skip >= 0 ? cfg.skip : model.config().n_ctx / 4;
    if (rep.skip >= N - 1) throw ConfigError("eval_prediction: skip must be below the number of predictions");
    rep.curve_first_step = 2;

    const TestEnsemble ens = make_test_ensemble(cfg.stream, cfg.n_test);
    std::vector<SystemErrors> errs(ens.datasets.size());
    for_each_chunk(ens.datasets.size(), cfg.chunk, [&](std::size_t begin, std::size_t end) {
        const int b = static_cast<int>(end - begin);
        SeqTensor<float> u(b, N - 1, 1), y(b, N - 1, 1);
        std::vector<std::vector<double>> clean(static_cast<std::size_t>(b));
        for (int s = 0; s < b; ++s) {
            const std::size_t i = begin + static_cast<std::size_t>(s);
            clean[static_cast<std::size_t>(s)] = data::normalize_output(ens.datasets[i].y).values;
            const auto fed = noisy_copy(clean[static_cast<std::size_t>(s)], cfg.noise_std, cfg.stream.global_seed, i);
            for (int t = 0; t < N - 1; ++t) {
                u(s, t, 0) = static_cast<float>(ens.datasets[i].u[static_cast<std::size_t>(t)]);
                y(s, t, 0) = static_cast<float>(fed[static_cast<std::size_t>(t)]);
            }
        }
        const SeqTensor<float> pred = model.forward(u, y);
        for (int s = 0; s < b; ++s) {
            auto& e = errs[begin + static_cast<std::size_t>(s)];
            const auto& yc = clean[static_cast<std::size_t>(s)];
            e.target.assign(yc.begin() + 1, yc.end());
            e.estimate.resize(static_cast<std::size_t>(N - 1));
            for (int t = 0; t < N - 1; ++t) e.estimate[static_cast<std::size_t>(t)] = pred(s, t, 0);
        }
    });
    for (const auto& ds : ens.datasets) rep.seeds.push_back(ds.seed);
    summarize(rep, errs, rep.skip);
    return rep;
}

EvalReport eval_simulation(const model::EncoderDecoderModel<float>& model, const EvalConfig& cfg) {
    return eval_simulation(model, cfg, make_test_ensemble(cfg.stream, cfg.n_test));
}

EvalReport eval_simulation(const model::EncoderDecoderModel<float>& model, const EvalConfig& cfg,
                           const TestEnsemble& ens) {
    cfg.validate();
    const int N = cfg.stream.seq_len;
    const int m = cfg.context_length > 0 ? cfg.context_length : model.config().n_ctx_enc;
    if (m < 1 || m >= N) throw ConfigError("eval_simulation: need 1 <= m < N");
    if (m > model.config().n_ctx_enc) throw ConfigError("eval_simulation: m exceeds n_ctx_enc");
    if (N - m > model.config().n_ctx_dec) throw ConfigError("eval_simulation: N - m exceeds n_ctx_dec");
    EvalReport rep = base_report("simulation", cfg);
    rep.context_length = m;
    rep.curve_first_step = m + 1;

    std::vector<SystemErrors> errs(ens.datasets.size());
    for_each_chunk(ens.datasets.size(), cfg.chunk, [&](std::size_t begin, std::size_t end) {
        const int b = static_cast<int>(end - begin);
        SeqTensor<float> uc(b, m, 1), yc(b, m, 1), uq(b, N - m, 1);
        std::vector<std::vector<double>> targets(static_cast<std::size_t>(b));
        for (int s = 0; s < b; ++s) {
            const std::size_t i = begin + static_cast<std::size_t>(s);
            auto c = simulation_case(ens.datasets[i], m, cfg.noise_std, cfg.stream.global_seed, i);
            for (int t = 0; t < m; ++t) {
                uc(s, t, 0) = static_cast<float>(c.u_context[static_cast<std::size_t>(t)]);
                yc(s, t, 0) = static_cast<float>(c.y_context[static_cast<std::size_t>(t)]);
            }
            for (int t = 0; t < N - m; ++t) uq(s, t, 0) = static_cast<float>(c.u_query[static_cast<std::size_t>(t)]);
            targets[static_cast<std::size_t>(s)] = std::move(c.y_target);
        }
        const SeqTensor<float> pred = model.forward(uc, yc, uq);
        for (int s = 0; s < b; ++s) {
            auto& e = errs[begin + static_cast<std::size_t>(s)];
            e.target = std::move(targets[static_cast<std::size_t>(s)]);
            e.estimate.resize(static_cast<std::size_t>(N - m));
            for (int t = 0; t < N - m; ++t) e.estimate[static_cast<std::size_t>(t)] = pred(s, t, 0);
        }
    });
    for (const auto& ds : ens.datasets) rep.seeds.push_back(ds.seed);
    summarize(rep, errs, 0);
    return rep;
}

std::vector<SweepRow> noise_sweep(const model::EncoderDecoderModel<float>& model, const EvalConfig& cfg,
                                  const std::vector<double>& sigma_grid) {
    if (sigma_grid.empty()) throw std::invalid_argument("noise_sweep: empty sigma grid");
    for (double s : sigma_grid)
        if (!(s >= 0.0)) throw std::invalid_argument("noise_sweep: sigma values must be >= 0");
    const TestEnsemble ens = make_test_ensemble(cfg.stream, cfg.n_test);
    std::vector<SweepRow> rows;
    for (double s : sigma_grid) {
        EvalConfig c = cfg;
        c.noise_std = s;
        rows.push_back({s, eval_simulation(model, c, ens)});
    }
    return rows;
}

ShiftResult distribution_shift_eval(const model::EncoderDecoderModel<float>& model, const EvalConfig& cfg,
                                    const sysgen::EigenRegion& shifted_region) {
    shifted_region.validate();
    EvalConfig shifted = cfg;
    shifted.stream.region = shifted_region;
    return {eval_simulation(model, cfg), eval_simulation(model, shifted)};
}

std::string to_string(BaselineMethod m) { return m == BaselineMethod::Subspace ? "subspace" : "arx"; }

EvalReport eval_baseline(BaselineMethod method, const EvalConfig& cfg, const baseline::SubspaceOptions& subspace,
                         const ArxOptions& arx) {
    return eval_baseline(method, cfg, make_test_ensemble(cfg.stream, cfg.n_test), subspace, arx);
}

EvalReport eval_baseline(BaselineMethod method, const EvalConfig& cfg, const TestEnsemble& ens,
                         const baseline::SubspaceOptions& subspace, const ArxOptions& arx) {
    cfg.validate();
    const int N = cfg.stream.seq_len;
    const int m = cfg.context_length;
    if (m < 1 || m >= N) throw ConfigError("eval_baseline: context_length must satisfy 1 <= m < N");
    EvalReport rep = base_report(method == BaselineMethod::Subspace ? "simulation" : "prediction", cfg);
    rep.method = to_string(method);
    rep.context_length = m;
    rep.curve_first_step = m + 1;
    for (const auto& ds : ens.datasets)
        if (static_cast<int>(ds.u.size()) != N || ds.y.size() != ds.u.size())
            throw std::invalid_argument("eval_baseline: every dataset must have length seq_len");
    std::vector<SystemErrors> errs(ens.datasets.size());
    parallel_for(ens.datasets.size(), [&](std::size_t i) {
        auto c = simulation_case(ens.datasets[i], m, cfg.noise_std, cfg.stream.global_seed, i);
        auto& e = errs[i];
        if (method == BaselineMethod::Subspace) {
            e.estimate = baseline::baseline_simulate(c.u_context, c.y_context, c.u_query, subspace);
        } else {
            // One-step prediction over the query from measured past outputs.
            const auto fit = baseline::fit_arx_ls(c.u_context, c.y_context, arx.na, arx.nb,
                                                  {arx.nk, baseline::kArxRidge, arx.intercept});
            std::vector<double> u = c.u_context, y = c.y_context;
            u.insert(u.end(), c.u_query.begin(), c.u_query.end());
            y.insert(y.end(), c.y_target.begin(), c.y_target.end());
            const auto pred = baseline::arx_predict(fit, u, y);
            e.estimate.assign(pred.begin() + m, pred.end());
        }
        e.target = std::move(c.y_target);
    });
    for (const auto& ds : ens.datasets) rep.seeds.push_back(ds.seed);
    summarize(rep, errs, 0);
    return rep;
}

MonotoneCheck check_nondecreasing(std::span<const double> v, double tolerance, int allowed) {
    MonotoneCheck c;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] >= v[i - 1]) continue;
        ++c.violations;
        const double rel = v[i - 1] > 0.0 ? (v[i - 1] - v[i]) / v[i - 1] : 1.0;
        c.worst_relative = std::max(c.worst_relative, rel);
    }
    c.ok = c.violations <= allowed && c.worst_relative <= tolerance;
    return c;
}

double curve_slope(std::span<const double> curve) {
    const std::size_t n = curve.size();
    if (n < 2) return 0.0;
    const double tbar = 0.5 * static_cast<double>(n - 1);
    const double ybar = std::accumulate(curve.begin(), curve.end(), 0.0) / static_cast<double>(n);
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        const double dt = static_cast<double>(t) - tbar;
        num += dt * (curve[t] - ybar);
        den += dt * dt;
    }
    return num / den;
}

fs::path curve_path_for(const fs::path& report_path) {
    fs::path p = report_path;
    p.replace_filename(report_path.stem().string() + "_curve" + report_path.extension().string());
    return p;
}

namespace {

std::string g9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::ofstream open_for_write(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    return out;
}

void check_written(std::ofstream& out, const fs::path& path) {
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace

void export_report(const EvalReport& r, const fs::path& path) {
    auto out = open_for_write(path);
    out << "# task=" << r.task << " method=" << r.method << " class=" << data::to_string(r.system_class)
        << " noise_std=" << g9(r.noise_std) << " n_test=" << r.n_test() << " seq_len=" << r.seq_len
        << " context_length=" << r.context_length << " skip=" << r.skip << " eval_seed=" << r.eval_seed << "\n";
    out << "# region mag_min=" << g9(r.region.mag_min) << " mag_max=" << g9(r.region.mag_max)
        << " phase_min=" << g9(r.region.phase_min) << " phase_max=" << g9(r.region.phase_max) << "\n";
    out << "system,seed,method,rmse,rmse_unskipped\n";
    for (int i = 0; i < r.n_test(); ++i) {
        const auto s = static_cast<std::size_t>(i);
        out << i << ',' << (s < r.seeds.size() ? r.seeds[s] : 0) << ',' << r.method << ',' << g9(r.rmse[s]) << ','
            << g9(r.rmse_unskipped[s]) << "\n";
    }
    out << "# mean_rmse=" << g9(r.mean_rmse()) << " median_rmse=" << g9(r.median_rmse())
        << " mean_rmse_unskipped=" << g9(r.mean_rmse_unskipped()) << "\n";
    const fs::path cpath = curve_path_for(path);
    if (r.curve.empty()) {
        out << "# curve: empty, file omitted\n";
    } else {
        out << "# curve_file=" << cpath.filename().string() << "\n";
        auto c = open_for_write(cpath);
        c << "step,mean_abs_error\n";
        for (std::size_t t = 0; t < r.curve.size(); ++t)
            c << (r.curve_first_step + static_cast<int>(t)) << ',' << g9(r.curve[t]) << "\n";
        check_written(c, cpath);
    }
    check_written(out, path);
}

void export_sweep(const std::vector<SweepRow>& rows, const fs::path& path) {
    auto out = open_for_write(path);
    if (!rows.empty()) {
        const auto& r = rows.front().report;
        out << "# task=noise_sweep method=" << r.method << " class=" << data::to_string(r.system_class)
            << " n_test=" << r.n_test() << " seq_len=" << r.seq_len << " context_length=" << r.context_length
            << " eval_seed=" << r.eval_seed << "\n";
    }
    out << "noise_std,mean_rmse,median_rmse,n_test\n";
    for (const auto& row : rows)
        out << g9(row.noise_std) << ',' << g9(row.report.mean_rmse()) << ',' << g9(row.report.median_rmse()) << ','
            << row.report.n_test() << "\n";
    check_written(out, path);
}

}  // namespace metasysid::eval
