#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "metasysid/baseline.hpp"
#include "metasysid/datastream.hpp"
#include "metasysid/metamodel.hpp"

namespace metasysid::eval {

/// sqrt(mean over k >= skip of (y_k - yhat_k)^2). Throws invalid_argument on a
/// length mismatch or skip outside [0, length).
double rmse(std::span<const double> y, std::span<const double> yhat, int skip = 0);

struct EvalConfig {
    /// System class, region and order ranges of the test systems. global_seed is
    /// the evaluation seed and seq_len the total length N.
    data::StreamConfig stream;
    int n_test = 256;
    double noise_std = 0.0;
    int skip = -1;           // prediction only; -1 selects n_ctx / 4
    int context_length = 0;  // simulation m; 0 selects n_ctx_enc
    int chunk = 32;          // systems per forward pass

    void validate() const;
};

/// Raw test datasets, a pure function of (stream config, n_test). Seeds come
/// from the evaluation seed space, disjoint from training.
struct TestEnsemble {
    std::vector<data::RawDataset> datasets;
};
TestEnsemble make_test_ensemble(const data::StreamConfig& stream, int n_test);

struct EvalReport {
    std::string task;  // prediction | simulation
    std::string method = "transformer";
    data::SystemClass system_class = data::SystemClass::Lti;
    sysgen::EigenRegion region = sysgen::EigenRegion::nominal();
    double noise_std = 0.0;
    int seq_len = 0;
    int context_length = 0;
    int skip = 0;
    std::uint64_t eval_seed = 0;

    std::vector<std::uint64_t> seeds;
    std::vector<double> rmse;             // skip applied
    std::vector<double> rmse_unskipped;   // every evaluated step
    std::vector<double> curve;            // per-step mean absolute error
    int curve_first_step = 1;             // 1-based time index of curve[0]

    [[nodiscard]] int n_test() const { return static_cast<int>(rmse.size()); }
    [[nodiscard]] double mean_rmse() const;
    [[nodiscard]] double median_rmse() const;
    [[nodiscard]] double mean_rmse_unskipped() const;
    /// Mean absolute error at 1-based time step k.
    [[nodiscard]] double curve_at(int k) const;
};

/// Teacher-forced one-step predictions of y_2..y_N on normalized outputs
/// (full-sequence statistics). Noise, if any, corrupts the fed outputs only.
EvalReport eval_prediction(const model::DecoderOnlyModel<float>& model, const EvalConfig& cfg);

/// Context y_1..m (normalized by context statistics, then optionally noisy) to
/// the encoder, u_{m+1..N} to the decoder; errors against the noise-free target.
EvalReport eval_simulation(const model::EncoderDecoderModel<float>& model, const EvalConfig& cfg);
EvalReport eval_simulation(const model::EncoderDecoderModel<float>& model, const EvalConfig& cfg,
                           const TestEnsemble& ensemble);

struct SweepRow {
    double noise_std = 0.0;
    EvalReport report;
};
/// One simulation evaluation per noise level on a shared ensemble.
std::vector<SweepRow> noise_sweep(const model::EncoderDecoderModel<float>& model, const EvalConfig& cfg,
                                  const std::vector<double>& sigma_grid);

struct ShiftResult {
    EvalReport nominal;
    EvalReport shifted;
};
/// cfg.stream.region is the nominal region.
ShiftResult distribution_shift_eval(const model::EncoderDecoderModel<float>& model, const EvalConfig& cfg,
                                    const sysgen::EigenRegion& shifted_region);

enum class BaselineMethod { Subspace, Arx };
std::string to_string(BaselineMethod m);

struct ArxOptions {
    int na = 10;
    int nb = 11;
    int nk = 0;
    bool intercept = true;
};

/// Baselines on the simulation protocol (context 1..m, query m+1..N); m must be
/// set. Subspace simulates the query; ARX predicts it one step ahead.
EvalReport eval_baseline(BaselineMethod method, const EvalConfig& cfg, const baseline::SubspaceOptions& subspace = {},
                         const ArxOptions& arx = {});
/// Same, on a given ensemble (e.g. datasets read from files).
EvalReport eval_baseline(BaselineMethod method, const EvalConfig& cfg, const TestEnsemble& ensemble,
                         const baseline::SubspaceOptions& subspace = {}, const ArxOptions& arx = {});

struct MonotoneCheck {
    bool ok = true;
    int violations = 0;         // adjacent pairs with a decrease
    double worst_relative = 0;  // largest decrease relative to the earlier value
};
/// Non-decreasing up to `allowed` adjacent violations of relative size <= tolerance.
MonotoneCheck check_nondecreasing(std::span<const double> values, double tolerance, int allowed = 1);

/// Least-squares slope of curve values against their step index.
double curve_slope(std::span<const double> curve);

/// Per-system rows plus an aggregate footer at `path`; the curve goes to the
/// sibling `<stem>_curve<ext>` (omitted, and noted in the footer, when empty).
void export_report(const EvalReport& report, const std::filesystem::path& path);
std::filesystem::path curve_path_for(const std::filesystem::path& report_path);

/// Appends sweep rows (noise_std, mean, median, n_test) to a table file.
void export_sweep(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

}  // namespace metasysid::eval
