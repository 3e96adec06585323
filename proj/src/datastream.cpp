#include "metasysid/datastream.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "metasysid/errors.hpp"
#include "metasysid/parallel.hpp"

namespace metasysid::data {

namespace {

constexpr int kMaxResamples = 64;

double population_std(std::span<const double> y, double mean) {
    double acc = 0.0;
    for (double v : y) acc += (v - mean) * (v - mean);
    return std::sqrt(acc / static_cast<double>(y.size()));
}

double mean_of(std::span<const double> y) {
    double acc = 0.0;
    for (double v : y) acc += v;
    return acc / static_cast<double>(y.size());
}

}  // namespace

std::string to_string(SystemClass cls) { return cls == SystemClass::Lti ? "LTI" : "WH"; }

SystemClass parse_system_class(std::string_view name) {
    if (name == "LTI" || name == "lti") return SystemClass::Lti;
    if (name == "WH" || name == "wh") return SystemClass::Wh;
    throw std::invalid_argument("unknown system class '" + std::string(name) + "' (expected LTI or WH)");
}

void StreamConfig::validate() const {
    if (seq_len < 2) throw std::invalid_argument("StreamConfig: seq_len must be >= 2");
    if (batch_size < 1) throw std::invalid_argument("StreamConfig: batch_size must be >= 1");
    if (noise_std < 0.0) throw std::invalid_argument("StreamConfig: noise_std must be >= 0");
    if (lti_order_min < 1 || lti_order_max < lti_order_min)
        throw std::invalid_argument("StreamConfig: bad LTI order range");
    if (wh_order_min < 1 || wh_order_max < wh_order_min) throw std::invalid_argument("StreamConfig: bad WH order range");
    if (wh_hidden < 1) throw std::invalid_argument("StreamConfig: wh_hidden must be >= 1");
    region.validate();
}

std::vector<double> sample_input(Rng& rng, int n) {
    if (n < 1) throw std::invalid_argument("sample_input: N must be >= 1");
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> u(static_cast<std::size_t>(n));
    for (double& v : u) v = normal(rng);
    return u;
}

NormalizedOutput normalize_output(std::span<const double> y) {
    if (y.size() < 2) throw std::invalid_argument("normalize_output: need at least 2 samples");
    NormalizedOutput out;
    out.mean = mean_of(y);
    out.stddev = population_std(y, out.mean);
    out.values = normalize_with(y, out.mean, out.stddev);
    return out;
}

std::vector<double> normalize_with(std::span<const double> y, double mean, double stddev) {
    const double scale = std::max(stddev, kNormalizeEps);
    std::vector<double> out(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) out[k] = (y[k] - mean) / scale;
    return out;
}

RawDataset generate_dataset(const StreamConfig& cfg, std::uint64_t seed) {
    RawDataset ds;
    ds.seed = seed;
    std::uint64_t draw_seed = seed;
    for (int attempt = 0; attempt <= kMaxResamples; ++attempt) {
        Rng rng(draw_seed);
        if (cfg.system_class == SystemClass::Lti) {
            const auto sys = sysgen::sample_lti(rng, cfg.lti_order_min, cfg.lti_order_max, cfg.region);
            ds.u = sample_input(rng, cfg.seq_len);
            ds.y = sysgen::simulate_lti(sys, ds.u);
        } else {
            const auto sys = sysgen::sample_wh(rng, cfg.wh_order_min, cfg.wh_order_max, cfg.region, cfg.wh_hidden);
            ds.u = sample_input(rng, cfg.seq_len);
            ds.y = sysgen::simulate_wh(sys, ds.u);
        }
        for (double v : ds.y)
            if (!std::isfinite(v)) throw std::runtime_error("generate_dataset: non-finite simulated output");
        if (population_std(ds.y, mean_of(ds.y)) >= kDegenerateStd) {
            ds.resamples = attempt;
            return ds;
        }
        draw_seed = combine_seed(seed, static_cast<std::uint64_t>(attempt) + 1);
    }
    throw std::runtime_error("generate_dataset: output stayed near-constant after resampling");
}

SequenceBatch make_batch(const StreamConfig& cfg, std::int64_t iteration, SeedSpace space) {
    const int b = cfg.batch_size;
    const int n = cfg.seq_len;
    SequenceBatch batch{SeqTensor<float>(b, n, 1), SeqTensor<float>(b, n, 1),
                        std::vector<std::uint64_t>(static_cast<std::size_t>(b))};
    parallel_for(static_cast<std::size_t>(b), [&](std::size_t slot) {
        const std::uint64_t seed =
            dataset_seed(cfg.global_seed, space, static_cast<std::uint64_t>(iteration), slot);
        RawDataset ds;
        try {
            ds = generate_dataset(cfg, seed);
        } catch (const std::exception& e) {
            throw BatchGenerationError(e.what(), slot);
        }
        const auto norm = normalize_output(ds.y);
        const int s = static_cast<int>(slot);
        for (int t = 0; t < n; ++t) {
            batch.u(s, t, 0) = static_cast<float>(ds.u[static_cast<std::size_t>(t)]);
            batch.y(s, t, 0) = static_cast<float>(norm.values[static_cast<std::size_t>(t)]);
        }
        batch.seeds[slot] = seed;
    });
    return batch;
}

std::vector<double> add_output_noise(std::span<const double> y, double sigma, Rng& rng) {
    if (sigma < 0.0) throw std::invalid_argument("add_output_noise: sigma must be >= 0");
    std::vector<double> out(y.begin(), y.end());
    if (sigma == 0.0) return out;
    std::normal_distribution<double> normal(0.0, sigma);
    for (double& v : out) v += normal(rng);
    return out;
}

void write_dataset_csv(const std::filesystem::path& path, std::span<const double> u, std::span<const double> y) {
    if (u.size() != y.size()) throw std::invalid_argument("write_dataset_csv: u/y length mismatch");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << "k,u,y\n";
    char line[96];
    for (std::size_t k = 0; k < u.size(); ++k) {
        std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", k + 1, u[k], y[k]);
        out << line;
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

void read_dataset_csv(const std::filesystem::path& path, std::vector<double>& u, std::vector<double>& y) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);
    if (line != "k,u,y") throw std::runtime_error(path.string() + ": expected header 'k,u,y'");
    u.clear();
    y.clear();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string k, uv, yv;
        if (!std::getline(row, k, ',') || !std::getline(row, uv, ',') || !std::getline(row, yv))
            throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
        u.push_back(std::stod(uv));
        y.push_back(std::stod(yv));
    }
}

void export_batch(const SequenceBatch& batch, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (int b = 0; b < batch.u.batch; ++b) {
        std::vector<double> u(static_cast<std::size_t>(batch.u.steps));
        std::vector<double> y(u.size());
        for (int t = 0; t < batch.u.steps; ++t) {
            u[static_cast<std::size_t>(t)] = batch.u(b, t, 0);
            y[static_cast<std::size_t>(t)] = batch.y(b, t, 0);
        }
        char name[32];
        std::snprintf(name, sizeof name, "dataset_%03d.csv", b);
        write_dataset_csv(dir / name, u, y);
    }
}

}  // namespace metasysid::data
