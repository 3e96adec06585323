#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "metasysid/datastream.hpp"
#include "metasysid/nncore.hpp"
#include "metasysid/tensor.hpp"

namespace metasysid::model {

struct DecoderOnlyConfig {
    int n_layers = 4;
    int n_heads = 4;
    int d_model = 64;
    int n_ctx = 200;
    int n_u = 1;
    int n_y = 1;

    void validate() const;
    friend bool operator==(const DecoderOnlyConfig&, const DecoderOnlyConfig&) = default;
};

struct EncoderDecoderConfig {
    int n_layers = 4;
    int n_heads = 4;
    int d_model = 64;
    int n_ctx_enc = 100;
    int n_ctx_dec = 50;
    int n_u = 1;
    int n_y = 1;

    void validate() const;
    friend bool operator==(const EncoderDecoderConfig&, const EncoderDecoderConfig&) = default;
};

/// Config records use exactly the keys n_layers, n_heads, d_model, n_ctx (or
/// n_ctx_enc and n_ctx_dec), n_u, n_y. Unknown or missing keys raise ConfigError.
nlohmann::json to_json(const DecoderOnlyConfig& cfg);
nlohmann::json to_json(const EncoderDecoderConfig& cfg);
DecoderOnlyConfig decoder_only_config_from_json(const nlohmann::json& j);
EncoderDecoderConfig encoder_decoder_config_from_json(const nlohmann::json& j);
/// True if the record carries n_ctx_enc/n_ctx_dec rather than n_ctx.
bool is_encoder_decoder_json(const nlohmann::json& j);

/// Closed-form trainable parameter counts, including biases, norms and the
/// positional tables.
std::int64_t parameter_count(const DecoderOnlyConfig& cfg);
std::int64_t parameter_count(const EncoderDecoderConfig& cfg);

/// GPT-2 style one-step-ahead predictor. Token j is Linear([u_j, y_j]) plus a
/// learned position embedding; the output at position j predicts y_{j+1} and
/// depends on tokens 1..j only.
template <class T>
class DecoderOnlyModel {
   public:
    struct Workspace {
        int batch = 0;
        int steps = 0;
        typename nn::Linear<T>::Cache embed;
        std::vector<typename nn::TransformerBlock<T>::Cache> blocks;
        typename nn::LayerNorm<T>::Cache ln_f;
        typename nn::Linear<T>::Cache head;
    };

    DecoderOnlyModel(const DecoderOnlyConfig& cfg, std::uint64_t init_seed);
    DecoderOnlyModel(const DecoderOnlyModel&) = delete;
    DecoderOnlyModel& operator=(const DecoderOnlyModel&) = delete;

    [[nodiscard]] const DecoderOnlyConfig& config() const { return cfg_; }
    [[nodiscard]] nn::ParamStore<T>& params() { return params_; }
    [[nodiscard]] const nn::ParamStore<T>& params() const { return params_; }

    /// u: batch x k x n_u, y: batch x k x n_y, k <= n_ctx. Returns batch x k x n_y.
    /// Throws ContextOverflowError when k > n_ctx.
    [[nodiscard]] SeqTensor<T> forward(const SeqTensor<T>& u, const SeqTensor<T>& y, Workspace* ws = nullptr) const;
    /// Accumulates parameter gradients for d loss / d predictions.
    void backward(const Workspace& ws, const SeqTensor<T>& d_pred);

   private:
    DecoderOnlyConfig cfg_;
    nn::ParamStore<T> params_;
    nn::Linear<T> embed_;
    nn::Parameter<T>* wpe_ = nullptr;
    std::vector<nn::TransformerBlock<T>> blocks_;
    nn::LayerNorm<T> ln_f_;
    nn::Linear<T> head_;
};

/// Encoder (non-causal over context tokens [u, y]) and decoder (causal over
/// query tokens u, cross-attending to the encoder embedding).
template <class T>
class EncoderDecoderModel {
   public:
    struct EncoderWorkspace {
        int batch = 0;
        int steps = 0;
        typename nn::Linear<T>::Cache embed;
        std::vector<typename nn::TransformerBlock<T>::Cache> blocks;
        typename nn::LayerNorm<T>::Cache ln;
    };
    struct DecoderWorkspace {
        int batch = 0;
        int steps = 0;
        Matrix<T> memory;
        typename nn::Linear<T>::Cache embed;
        std::vector<typename nn::TransformerBlock<T>::Cache> blocks;
        typename nn::LayerNorm<T>::Cache ln;
        typename nn::Linear<T>::Cache head;
    };
    struct Workspace {
        EncoderWorkspace encoder;
        DecoderWorkspace decoder;
    };

    EncoderDecoderModel(const EncoderDecoderConfig& cfg, std::uint64_t init_seed);
    EncoderDecoderModel(const EncoderDecoderModel&) = delete;
    EncoderDecoderModel& operator=(const EncoderDecoderModel&) = delete;

    [[nodiscard]] const EncoderDecoderConfig& config() const { return cfg_; }
    [[nodiscard]] nn::ParamStore<T>& params() { return params_; }
    [[nodiscard]] const nn::ParamStore<T>& params() const { return params_; }

    /// Context embedding zeta: batch x m x d_model, m <= n_ctx_enc.
    [[nodiscard]] SeqTensor<T> encode(const SeqTensor<T>& u_context, const SeqTensor<T>& y_context,
                                      EncoderWorkspace* ws = nullptr) const;
    /// Simulated outputs for the query inputs, length <= n_ctx_dec.
    [[nodiscard]] SeqTensor<T> decode(const SeqTensor<T>& zeta, const SeqTensor<T>& u_query,
                                      DecoderWorkspace* ws = nullptr) const;
    [[nodiscard]] SeqTensor<T> forward(const SeqTensor<T>& u_context, const SeqTensor<T>& y_context,
                                       const SeqTensor<T>& u_query, Workspace* ws = nullptr) const;

    void backward(const Workspace& ws, const SeqTensor<T>& d_pred);

   private:
    EncoderDecoderConfig cfg_;
    nn::ParamStore<T> params_;
    nn::Linear<T> enc_embed_;
    nn::Parameter<T>* enc_wpe_ = nullptr;
    std::vector<nn::TransformerBlock<T>> enc_blocks_;
    nn::LayerNorm<T> enc_ln_;
    nn::Linear<T> dec_embed_;
    nn::Parameter<T>* dec_wpe_ = nullptr;
    std::vector<nn::TransformerBlock<T>> dec_blocks_;
    nn::LayerNorm<T> dec_ln_;
    nn::Linear<T> head_;
};

/// Mean squared error over every element; writes d loss / d pred when asked.
template <class T>
T mean_squared_error(const SeqTensor<T>& pred, const SeqTensor<T>& target, SeqTensor<T>* d_pred = nullptr);

/// Teacher-forced one-step loss: tokens 1..N-1 predict y_2..y_N. Requires
/// N <= n_ctx + 1. With `backprop` the parameter gradients are reset and then
/// filled with the gradient of this loss.
template <class T>
T one_step_loss(DecoderOnlyModel<T>& model, const SeqTensor<T>& u, const SeqTensor<T>& y, bool backprop = false);

/// Simulation loss over the query segment.
template <class T>
T sim_loss(EncoderDecoderModel<T>& model, const data::ContextQuery<T>& split, bool backprop = false);

}  // namespace metasysid::model
