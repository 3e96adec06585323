#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "metasysid/datastream.hpp"
#include "metasysid/metamodel.hpp"
#include "metasysid/nncore.hpp"

namespace metasysid::train {

enum class ModelKind { DecoderOnly, EncoderDecoder };

/// Architecture selector plus its dimensions.
struct ModelSpec {
    ModelKind kind = ModelKind::DecoderOnly;
    model::DecoderOnlyConfig decoder_only;
    model::EncoderDecoderConfig encoder_decoder;

    static ModelSpec predictor(const model::DecoderOnlyConfig& cfg) { return {ModelKind::DecoderOnly, cfg, {}}; }
    static ModelSpec simulator(const model::EncoderDecoderConfig& cfg) { return {ModelKind::EncoderDecoder, {}, cfg}; }

    /// The architecture follows from the keys (n_ctx vs n_ctx_enc/n_ctx_dec).
    static ModelSpec from_json(const nlohmann::json& j);
    [[nodiscard]] nlohmann::json to_json() const;

    friend bool operator==(const ModelSpec& a, const ModelSpec& b) {
        if (a.kind != b.kind) return false;
        return a.kind == ModelKind::DecoderOnly ? a.decoder_only == b.decoder_only
                                                : a.encoder_decoder == b.encoder_decoder;
    }
};

/// Owns one meta-model of either architecture in 32-bit precision.
class MetaModel {
   public:
    MetaModel(const ModelSpec& spec, std::uint64_t init_seed);

    [[nodiscard]] const ModelSpec& spec() const { return spec_; }
    [[nodiscard]] nn::ParamStore<float>& params();
    [[nodiscard]] const nn::ParamStore<float>& params() const;

    [[nodiscard]] model::DecoderOnlyModel<float>& predictor();
    [[nodiscard]] const model::DecoderOnlyModel<float>& predictor() const;
    [[nodiscard]] model::EncoderDecoderModel<float>& simulator();
    [[nodiscard]] const model::EncoderDecoderModel<float>& simulator() const;

    /// One-step loss (predictor) or simulation loss split at `context_length`
    /// (simulator). With `backprop`, gradients are reset and refilled.
    float loss(const data::SequenceBatch& batch, int context_length, bool backprop);

   private:
    ModelSpec spec_;
    std::unique_ptr<model::DecoderOnlyModel<float>> predictor_;
    std::unique_ptr<model::EncoderDecoderModel<float>> simulator_;
};

struct TrainConfig {
    data::StreamConfig stream;
    ModelSpec model;
    std::int64_t n_iterations = 1000;
    nn::AdamWHyper optimizer;
    std::int64_t warmup_iters = 1000;
    std::int64_t decay_iters = 0;  // linear decay to zero over the last decay_iters
    double clip_norm = 1.0;
    std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
    std::int64_t log_every = 100;       // console progress cadence; the CSV log gets every iteration
    std::optional<std::filesystem::path> warm_start_path;
    /// Continues a run from its checkpoint (parameters, optimizer state, loss
    /// statistics, iteration). Same model and seed required.
    std::optional<std::filesystem::path> resume_from;
    std::filesystem::path out_dir;  // empty: keep everything in memory
    int context_length = 0;         // simulator split m; 0 selects n_ctx_enc
    bool verbose = false;
    bool record_seeds = false;

    void validate() const;
    /// Context length actually used for the simulator split.
    [[nodiscard]] int resolved_context_length() const;
};

/// Linear warmup over warmup_iters, constant, then an optional linear decay to
/// zero over the final decay_iters.
double learning_rate_at(const TrainConfig& cfg, std::int64_t iteration);

struct LossStats {
    double ema = 0.0;  // exponential moving average, decay 0.99
    double last = 0.0;
    std::int64_t count = 0;

    void update(double loss);
};

inline constexpr double kEmaDecay = 0.99;

struct Checkpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    ModelSpec model;
    nn::ParamStore<float> params;
    nn::AdamWState<float> optimizer;
    std::int64_t iteration = 0;
    std::uint64_t global_seed = 0;
    LossStats loss;
};

/// Binary layout: magic "MSIDCKPT", u32 version, u64 payload size, payload,
/// u32 CRC-32 of the payload. Written to a temp file and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws IntegrityError (truncation, bad magic, checksum) or
/// UnsupportedVersionError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters from a compatible checkpoint. The optimizer state and iteration
/// counter are not carried over. Throws ConfigError on any mismatch.
nn::ParamStore<float> warm_start(const std::filesystem::path& checkpoint_path, const ModelSpec& new_model);

/// Builds a model from a checkpoint's spec and parameters.
std::unique_ptr<MetaModel> instantiate(const Checkpoint& ckpt);

struct LogRow {
    std::int64_t iteration = 0;
    double loss = 0.0;
    double ema_loss = 0.0;
    double wall_time_s = 0.0;
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LogRow> log;
    std::vector<std::uint64_t> consumed_seeds;  // filled when record_seeds is set
};

/// n_iterations of: fresh batch -> loss -> backward -> clip -> AdamW.
/// With out_dir set, writes ckpt_<iteration>.bin files, a `latest` marker and
/// train_log.csv. A non-finite loss writes a diagnostic checkpoint and throws
/// TrainingDivergedError.
TrainResult train(const TrainConfig& cfg);

/// Helpers for the output directory layout.
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::int64_t iteration);
/// Resolves the `latest` marker in a checkpoint directory.
std::filesystem::path latest_checkpoint(const std::filesystem::path& dir);

}  // namespace metasysid::train
