#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metasysid/eval.hpp"
#include "metasysid/trainer.hpp"

namespace metasysid::config {

/// Settings of the eval, sweep, shift and baseline commands.
struct EvalSection {
    int n_test = 256;
    double noise_std = 0.0;
    int skip = -1;
    int context_length = 0;
    int seq_len = 0;                       // 0: stream.seq_len
    std::optional<std::uint64_t> eval_seed;  // default: stream.global_seed
    int chunk = 32;
    std::vector<double> sigma_grid{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
    sysgen::EigenRegion shifted_region = sysgen::EigenRegion::shifted();
    baseline::SubspaceOptions subspace;
    eval::ArxOptions arx;
    std::vector<std::string> methods{"subspace", "arx"};
    // --assert thresholds
    std::optional<double> max_rmse;
    double min_shift_ratio = 1.25;
    double monotone_tolerance = 0.05;  // one adjacent violation of at most this relative size
};

/// One structured text (JSON) file with sections stream, model, train, eval.
struct RunConfig {
    data::StreamConfig stream;
    std::optional<train::ModelSpec> model;
    train::TrainConfig train;  // stream/model fields are filled from the sections above
    EvalSection eval;

    /// Training config with stream and model merged in. Throws ConfigError when
    /// the model section is missing.
    [[nodiscard]] train::TrainConfig train_config() const;
    /// Evaluation config for the required architecture's test protocol.
    [[nodiscard]] eval::EvalConfig eval_config() const;
};

nlohmann::json stream_to_json(const data::StreamConfig& s);
data::StreamConfig stream_from_json(const nlohmann::json& j);

/// Parses a full config record. Unknown keys anywhere raise ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);

RunConfig load_run_config(const std::string& path);

/// Applies "section.key=value" (value parsed as JSON, else taken as a string).
void apply_override(nlohmann::json& j, const std::string& assignment);

/// Stable hex digest of a JSON record (FNV-1a over its compact dump).
std::string fingerprint(const nlohmann::json& j);

}  // namespace metasysid::config
