#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metasysid/seeding.hpp"
#include "metasysid/sysgen.hpp"
#include "metasysid/tensor.hpp"

/// The infinite stream of synthetic datasets used for meta-training and for
/// building evaluation ensembles.
namespace metasysid::data {

enum class SystemClass { Lti, Wh };

std::string to_string(SystemClass cls);
SystemClass parse_system_class(std::string_view name);

struct StreamConfig {
    SystemClass system_class = SystemClass::Lti;
    int seq_len = 500;
    int batch_size = 32;
    std::uint64_t global_seed = 0;
    sysgen::EigenRegion region = sysgen::EigenRegion::nominal();
    int lti_order_min = 1;
    int lti_order_max = 10;
    int wh_order_min = 1;
    int wh_order_max = 5;
    int wh_hidden = 32;
    double noise_std = 0.0;

    void validate() const;
    friend bool operator==(const StreamConfig&, const StreamConfig&) = default;
};

/// Raw std of a generated output below this value triggers a resample.
inline constexpr double kDegenerateStd = 1e-3;
inline constexpr double kNormalizeEps = 1e-6;

/// One generated dataset in double precision, output not normalized.
struct RawDataset {
    std::uint64_t seed = 0;
    int resamples = 0;
    std::vector<double> u;
    std::vector<double> y;
};

struct NormalizedOutput {
    std::vector<double> values;
    double mean = 0.0;
    double stddev = 0.0;
};

struct SequenceBatch {
    SeqTensor<float> u;
    SeqTensor<float> y;
    std::vector<std::uint64_t> seeds;
};

template <class T>
struct ContextQuery {
    SeqTensor<T> u_context;
    SeqTensor<T> y_context;
    SeqTensor<T> u_query;
    SeqTensor<T> y_target;
};

/// i.i.d. standard normal input sequence.
std::vector<double> sample_input(Rng& rng, int n);

/// (y - mean) / max(std, eps) with population std.
NormalizedOutput normalize_output(std::span<const double> y);
/// Applies externally computed statistics (e.g. from a context window).
std::vector<double> normalize_with(std::span<const double> y, double mean, double stddev);

/// Samples a system of the configured class from `seed`, drives it with a
/// fresh white input and simulates it. Near-constant outputs are resampled
/// from a derived seed.
RawDataset generate_dataset(const StreamConfig& cfg, std::uint64_t seed);

/// Batch for one training iteration; a pure function of (cfg, iteration, space).
SequenceBatch make_batch(const StreamConfig& cfg, std::int64_t iteration, SeedSpace space = SeedSpace::Train);

/// y + N(0, sigma^2) noise.
std::vector<double> add_output_noise(std::span<const double> y, double sigma, Rng& rng);

template <class T>
ContextQuery<T> split_context_query(const SeqTensor<T>& u, const SeqTensor<T>& y, int m) {
    if (m < 1 || m >= u.steps) throw std::invalid_argument("split_context_query: require 1 <= m < N");
    if (y.steps != u.steps || y.batch != u.batch) throw std::invalid_argument("split_context_query: u/y shape mismatch");
    return {u.slice_steps(0, m), y.slice_steps(0, m), u.slice_steps(m, u.steps), y.slice_steps(m, y.steps)};
}

inline ContextQuery<float> split_context_query(const SequenceBatch& batch, int m) {
    return split_context_query(batch.u, batch.y, m);
}

/// Columnar text file with header "k,u,y" and k starting at 1.
void write_dataset_csv(const std::filesystem::path& path, std::span<const double> u, std::span<const double> y);
/// Reads a file written by write_dataset_csv.
void read_dataset_csv(const std::filesystem::path& path, std::vector<double>& u, std::vector<double>& y);
/// One file per dataset: dir/dataset_000.csv, ...
void export_batch(const SequenceBatch& batch, const std::filesystem::path& dir);

}  // namespace metasysid::data
