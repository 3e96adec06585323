#include "metasysid/metamodel.hpp"

#include <string>

#include "metasysid/errors.hpp"

namespace metasysid::model {

namespace {

constexpr double kInitStd = 0.02;

void require_positive(int value, const char* name) {
    if (value < 1) throw ConfigError(std::string(name) + " must be >= 1");
}

template <class Cfg>
void read_keys(const nlohmann::json& j, Cfg& cfg, bool encdec) {
    if (!j.is_object()) throw ConfigError("model config must be an object");
    int seen = 0;
    for (const auto& [key, value] : j.items()) {
        if (!value.is_number_integer()) throw ConfigError("model." + key + " must be an integer");
        const int v = value.template get<int>();
        ++seen;
        if (key == "n_layers")
            cfg.n_layers = v;
        else if (key == "n_heads")
            cfg.n_heads = v;
        else if (key == "d_model")
            cfg.d_model = v;
        else if (key == "n_u")
            cfg.n_u = v;
        else if (key == "n_y")
            cfg.n_y = v;
        else if constexpr (std::is_same_v<Cfg, DecoderOnlyConfig>) {
            if (key == "n_ctx")
                cfg.n_ctx = v;
            else
                throw ConfigError("unknown model key '" + key + "'");
        } else {
            if (key == "n_ctx_enc")
                cfg.n_ctx_enc = v;
            else if (key == "n_ctx_dec")
                cfg.n_ctx_dec = v;
            else
                throw ConfigError("unknown model key '" + key + "'");
        }
    }
    const int expected = encdec ? 7 : 6;
    if (seen != expected) throw ConfigError("model config must define all of its " + std::to_string(expected) + " keys");
}

template <class T>
void add_positions(Matrix<T>& x, const Matrix<T>& wpe, int batch, int steps) {
    for (int b = 0; b < batch; ++b) x.middleRows(Eigen::Index{b} * steps, steps) += wpe.topRows(steps);
}

template <class T>
void accumulate_positions(Matrix<T>& wpe_grad, const Matrix<T>& dx, int batch, int steps) {
    for (int b = 0; b < batch; ++b) wpe_grad.topRows(steps) += dx.middleRows(Eigen::Index{b} * steps, steps);
}

std::int64_t block_params(std::int64_t d, bool cross) {
    const std::int64_t attn = 4 * d * d + 4 * d;
    const std::int64_t mlp = 8 * d * d + 5 * d;
    const std::int64_t norms = 2 * d * (cross ? 3 : 2);
    return attn * (cross ? 2 : 1) + mlp + norms;
}

}  // namespace

void DecoderOnlyConfig::validate() const {
    require_positive(n_layers, "n_layers");
    require_positive(n_heads, "n_heads");
    require_positive(d_model, "d_model");
    require_positive(n_u, "n_u");
    require_positive(n_y, "n_y");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (n_ctx < 2) throw ConfigError("n_ctx must be >= 2");
}

void EncoderDecoderConfig::validate() const {
    require_positive(n_layers, "n_layers");
    require_positive(n_heads, "n_heads");
    require_positive(d_model, "d_model");
    require_positive(n_u, "n_u");
    require_positive(n_y, "n_y");
    require_positive(n_ctx_enc, "n_ctx_enc");
    require_positive(n_ctx_dec, "n_ctx_dec");
    if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
}

nlohmann::json to_json(const DecoderOnlyConfig& c) {
    return {{"n_layers", c.n_layers}, {"n_heads", c.n_heads}, {"d_model", c.d_model},
            {"n_ctx", c.n_ctx},       {"n_u", c.n_u},         {"n_y", c.n_y}};
}

nlohmann::json to_json(const EncoderDecoderConfig& c) {
    return {{"n_layers", c.n_layers},   {"n_heads", c.n_heads},     {"d_model", c.d_model}, {"n_ctx_enc", c.n_ctx_enc},
            {"n_ctx_dec", c.n_ctx_dec}, {"n_u", c.n_u},             {"n_y", c.n_y}};
}

DecoderOnlyConfig decoder_only_config_from_json(const nlohmann::json& j) {
    DecoderOnlyConfig c;
    read_keys(j, c, false);
    c.validate();
    return c;
}

EncoderDecoderConfig encoder_decoder_config_from_json(const nlohmann::json& j) {
    EncoderDecoderConfig c;
    read_keys(j, c, true);
    c.validate();
    return c;
}

bool is_encoder_decoder_json(const nlohmann::json& j) {
    return j.is_object() && (j.contains("n_ctx_enc") || j.contains("n_ctx_dec"));
}

std::int64_t parameter_count(const DecoderOnlyConfig& c) {
    const std::int64_t d = c.d_model;
    return (c.n_u + c.n_y) * d + d      // input embedding
           + std::int64_t{c.n_ctx} * d  // positions
           + c.n_layers * block_params(d, false) + 2 * d + d * c.n_y + c.n_y;
}

std::int64_t parameter_count(const EncoderDecoderConfig& c) {
    const std::int64_t d = c.d_model;
    const std::int64_t encoder = (c.n_u + c.n_y) * d + d + std::int64_t{c.n_ctx_enc} * d +
                                 c.n_layers * block_params(d, false) + 2 * d;
    const std::int64_t decoder = c.n_u * d + d + std::int64_t{c.n_ctx_dec} * d + c.n_layers * block_params(d, true) +
                                 2 * d + d * c.n_y + c.n_y;
    return encoder + decoder;
}

// ---------------------------------------------------------------------------
// Decoder-only

template <class T>
DecoderOnlyModel<T>::DecoderOnlyModel(const DecoderOnlyConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(dataset_seed(init_seed, SeedSpace::Init, 0, 0));
    embed_ = nn::Linear<T>(params_, "embed", cfg_.n_u + cfg_.n_y, cfg_.d_model, true, kInitStd, rng);
    wpe_ = &params_.add("wpe", {cfg_.n_ctx, cfg_.d_model}, false);
    {
        std::normal_distribution<double> normal(0.0, kInitStd);
        for (Eigen::Index i = 0; i < wpe_->value.size(); ++i) wpe_->value.data()[i] = static_cast<T>(normal(rng));
    }
    blocks_.reserve(static_cast<std::size_t>(cfg_.n_layers));
    for (int l = 0; l < cfg_.n_layers; ++l)
        blocks_.emplace_back(params_, "h" + std::to_string(l), cfg_.d_model, cfg_.n_heads, nn::MaskMode::Causal,
                             false, cfg_.n_layers, rng);
    ln_f_ = nn::LayerNorm<T>(params_, "ln_f", cfg_.d_model);
    head_ = nn::Linear<T>(params_, "head", cfg_.d_model, cfg_.n_y, true, kInitStd, rng);
}

template <class T>
SeqTensor<T> DecoderOnlyModel<T>::forward(const SeqTensor<T>& u, const SeqTensor<T>& y, Workspace* ws) const {
    if (u.batch != y.batch || u.steps != y.steps) throw std::invalid_argument("predictor: u/y shape mismatch");
    if (u.channels() != cfg_.n_u || y.channels() != cfg_.n_y)
        throw std::invalid_argument("predictor: channel count mismatch");
    if (u.steps > cfg_.n_ctx)
        throw ContextOverflowError("predictor: " + std::to_string(u.steps) + " tokens exceed n_ctx " +
                                   std::to_string(cfg_.n_ctx));
    if (u.steps < 1) throw std::invalid_argument("predictor: empty sequence");
    const int batch = u.batch;
    const int steps = u.steps;
    if (ws != nullptr) {
        ws->batch = batch;
        ws->steps = steps;
        ws->blocks.resize(blocks_.size());
    }
    const SeqTensor<T> tokens = concat_channels(u, y);
    Matrix<T> x = embed_.forward(tokens.data, ws != nullptr ? &ws->embed : nullptr);
    add_positions(x, wpe_->value, batch, steps);
    for (std::size_t l = 0; l < blocks_.size(); ++l)
        x = blocks_[l].forward(x, nullptr, batch, ws != nullptr ? &ws->blocks[l] : nullptr);
    x = ln_f_.forward(x, ws != nullptr ? &ws->ln_f : nullptr);
    return SeqTensor<T>(batch, steps, head_.forward(x, ws != nullptr ? &ws->head : nullptr));
}

template <class T>
void DecoderOnlyModel<T>::backward(const Workspace& ws, const SeqTensor<T>& d_pred) {
    if (d_pred.batch != ws.batch || d_pred.steps != ws.steps || d_pred.channels() != cfg_.n_y)
        throw std::invalid_argument("predictor backward: gradient must match the prediction shape");
    Matrix<T> dx = head_.backward(ws.head, d_pred.data);
    dx = ln_f_.backward(ws.ln_f, dx);
    for (std::size_t l = blocks_.size(); l-- > 0;) dx = blocks_[l].backward(ws.blocks[l], dx, nullptr);
    accumulate_positions(wpe_->grad, dx, ws.batch, ws.steps);
    embed_.backward(ws.embed, dx);
}

// ---------------------------------------------------------------------------
// Encoder-decoder

template <class T>
EncoderDecoderModel<T>::EncoderDecoderModel(const EncoderDecoderConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(dataset_seed(init_seed, SeedSpace::Init, 0, 1));
    std::normal_distribution<double> normal(0.0, kInitStd);

    enc_embed_ = nn::Linear<T>(params_, "enc.embed", cfg_.n_u + cfg_.n_y, cfg_.d_model, true, kInitStd, rng);
    enc_wpe_ = &params_.add("enc.wpe", {cfg_.n_ctx_enc, cfg_.d_model}, false);
    for (Eigen::Index i = 0; i < enc_wpe_->value.size(); ++i) enc_wpe_->value.data()[i] = static_cast<T>(normal(rng));
    enc_blocks_.reserve(static_cast<std::size_t>(cfg_.n_layers));
    for (int l = 0; l < cfg_.n_layers; ++l)
        enc_blocks_.emplace_back(params_, "enc.h" + std::to_string(l), cfg_.d_model, cfg_.n_heads,
                                 nn::MaskMode::None, false, cfg_.n_layers, rng);
    enc_ln_ = nn::LayerNorm<T>(params_, "enc.ln_f", cfg_.d_model);

    dec_embed_ = nn::Linear<T>(params_, "dec.embed", cfg_.n_u, cfg_.d_model, true, kInitStd, rng);
    dec_wpe_ = &params_.add("dec.wpe", {cfg_.n_ctx_dec, cfg_.d_model}, false);
    for (Eigen::Index i = 0; i < dec_wpe_->value.size(); ++i) dec_wpe_->value.data()[i] = static_cast<T>(normal(rng));
    dec_blocks_.reserve(static_cast<std::size_t>(cfg_.n_layers));
    for (int l = 0; l < cfg_.n_layers; ++l)
        dec_blocks_.emplace_back(params_, "dec.h" + std::to_string(l), cfg_.d_model, cfg_.n_heads,
                                 nn::MaskMode::Causal, true, cfg_.n_layers, rng);
    dec_ln_ = nn::LayerNorm<T>(params_, "dec.ln_f", cfg_.d_model);
    head_ = nn::Linear<T>(params_, "head", cfg_.d_model, cfg_.n_y, true, kInitStd, rng);
}

template <class T>
SeqTensor<T> EncoderDecoderModel<T>::encode(const SeqTensor<T>& u_context, const SeqTensor<T>& y_context,
                                            EncoderWorkspace* ws) const {
    if (u_context.batch != y_context.batch || u_context.steps != y_context.steps)
        throw std::invalid_argument("encoder: u/y shape mismatch");
    if (u_context.channels() != cfg_.n_u || y_context.channels() != cfg_.n_y)
        throw std::invalid_argument("encoder: channel count mismatch");
    if (u_context.steps > cfg_.n_ctx_enc)
        throw ContextOverflowError("encoder: " + std::to_string(u_context.steps) + " tokens exceed n_ctx_enc " +
                                   std::to_string(cfg_.n_ctx_enc));
    if (u_context.steps < 1) throw std::invalid_argument("encoder: empty context");
    const int batch = u_context.batch;
    const int steps = u_context.steps;
    if (ws != nullptr) {
        ws->batch = batch;
        ws->steps = steps;
        ws->blocks.resize(enc_blocks_.size());
    }
    Matrix<T> x = enc_embed_.forward(concat_channels(u_context, y_context).data, ws != nullptr ? &ws->embed : nullptr);
    add_positions(x, enc_wpe_->value, batch, steps);
    for (std::size_t l = 0; l < enc_blocks_.size(); ++l)
        x = enc_blocks_[l].forward(x, nullptr, batch, ws != nullptr ? &ws->blocks[l] : nullptr);
    return SeqTensor<T>(batch, steps, enc_ln_.forward(x, ws != nullptr ? &ws->ln : nullptr));
}

template <class T>
SeqTensor<T> EncoderDecoderModel<T>::decode(const SeqTensor<T>& zeta, const SeqTensor<T>& u_query,
                                            DecoderWorkspace* ws) const {
    if (zeta.batch != u_query.batch) throw std::invalid_argument("decoder: batch mismatch");
    if (zeta.channels() != cfg_.d_model) throw std::invalid_argument("decoder: embedding width mismatch");
    if (u_query.channels() != cfg_.n_u) throw std::invalid_argument("decoder: channel count mismatch");
    if (u_query.steps > cfg_.n_ctx_dec)
        throw ContextOverflowError("decoder: " + std::to_string(u_query.steps) + " tokens exceed n_ctx_dec " +
                                   std::to_string(cfg_.n_ctx_dec));
    const int batch = u_query.batch;
    const int steps = u_query.steps;
    if (steps == 0) return SeqTensor<T>(batch, 0, cfg_.n_y);
    if (ws != nullptr) {
        ws->batch = batch;
        ws->steps = steps;
        ws->memory.resize(0, 0);
        ws->blocks.resize(dec_blocks_.size());
    }
    Matrix<T> x = dec_embed_.forward(u_query.data, ws != nullptr ? &ws->embed : nullptr);
    add_positions(x, dec_wpe_->value, batch, steps);
    for (std::size_t l = 0; l < dec_blocks_.size(); ++l)
        x = dec_blocks_[l].forward(x, &zeta.data, batch, ws != nullptr ? &ws->blocks[l] : nullptr);
    x = dec_ln_.forward(x, ws != nullptr ? &ws->ln : nullptr);
    return SeqTensor<T>(batch, steps, head_.forward(x, ws != nullptr ? &ws->head : nullptr));
}

template <class T>
SeqTensor<T> EncoderDecoderModel<T>::forward(const SeqTensor<T>& u_context, const SeqTensor<T>& y_context,
                                             const SeqTensor<T>& u_query, Workspace* ws) const {
    const SeqTensor<T> zeta = encode(u_context, y_context, ws != nullptr ? &ws->encoder : nullptr);
    return decode(zeta, u_query, ws != nullptr ? &ws->decoder : nullptr);
}

template <class T>
void EncoderDecoderModel<T>::backward(const Workspace& ws, const SeqTensor<T>& d_pred) {
    const auto& dw = ws.decoder;
    const auto& ew = ws.encoder;
    if (d_pred.batch != dw.batch || d_pred.steps != dw.steps || d_pred.channels() != cfg_.n_y)
        throw std::invalid_argument("simulator backward: gradient must match the prediction shape");
    Matrix<T> dx = head_.backward(dw.head, d_pred.data);
    dx = dec_ln_.backward(dw.ln, dx);
    Matrix<T> d_memory;
    for (std::size_t l = dec_blocks_.size(); l-- > 0;) dx = dec_blocks_[l].backward(dw.blocks[l], dx, &d_memory);
    accumulate_positions(dec_wpe_->grad, dx, dw.batch, dw.steps);
    dec_embed_.backward(dw.embed, dx);

    Matrix<T> de = enc_ln_.backward(ew.ln, d_memory);
    for (std::size_t l = enc_blocks_.size(); l-- > 0;) de = enc_blocks_[l].backward(ew.blocks[l], de, nullptr);
    accumulate_positions(enc_wpe_->grad, de, ew.batch, ew.steps);
    enc_embed_.backward(ew.embed, de);
}

// ---------------------------------------------------------------------------
// Losses

template <class T>
T mean_squared_error(const SeqTensor<T>& pred, const SeqTensor<T>& target, SeqTensor<T>* d_pred) {
    if (pred.batch != target.batch || pred.steps != target.steps || pred.channels() != target.channels())
        throw std::invalid_argument("mean_squared_error: shape mismatch");
    const Eigen::Index n = pred.data.size();
    if (n == 0) return T(0);
    const Matrix<T> diff = pred.data - target.data;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) acc += static_cast<double>(diff.data()[i]) * diff.data()[i];
    if (d_pred != nullptr) *d_pred = SeqTensor<T>(pred.batch, pred.steps, (diff * static_cast<T>(2.0 / n)).eval());
    return static_cast<T>(acc / static_cast<double>(n));
}

template <class T>
T one_step_loss(DecoderOnlyModel<T>& model, const SeqTensor<T>& u, const SeqTensor<T>& y, bool backprop) {
    if (u.steps < 2) throw std::invalid_argument("one_step_loss: need at least 2 steps");
    const int k = u.steps - 1;
    const SeqTensor<T> u_in = u.slice_steps(0, k);
    const SeqTensor<T> y_in = y.slice_steps(0, k);
    const SeqTensor<T> target = y.slice_steps(1, u.steps);
    if (!backprop) return mean_squared_error(model.forward(u_in, y_in), target);
    typename DecoderOnlyModel<T>::Workspace ws;
    const SeqTensor<T> pred = model.forward(u_in, y_in, &ws);
    SeqTensor<T> grad;
    const T loss = mean_squared_error(pred, target, &grad);
    model.params().zero_grad();
    model.backward(ws, grad);
    return loss;
}

template <class T>
T sim_loss(EncoderDecoderModel<T>& model, const data::ContextQuery<T>& split, bool backprop) {
    if (!backprop)
        return mean_squared_error(model.forward(split.u_context, split.y_context, split.u_query), split.y_target);
    typename EncoderDecoderModel<T>::Workspace ws;
    const SeqTensor<T> pred = model.forward(split.u_context, split.y_context, split.u_query, &ws);
    SeqTensor<T> grad;
    const T loss = mean_squared_error(pred, split.y_target, &grad);
    model.params().zero_grad();
    model.backward(ws, grad);
    return loss;
}

template class DecoderOnlyModel<float>;
template class DecoderOnlyModel<double>;
template class EncoderDecoderModel<float>;
template class EncoderDecoderModel<double>;
template float mean_squared_error<float>(const SeqTensor<float>&, const SeqTensor<float>&, SeqTensor<float>*);
template double mean_squared_error<double>(const SeqTensor<double>&, const SeqTensor<double>&, SeqTensor<double>*);
template float one_step_loss<float>(DecoderOnlyModel<float>&, const SeqTensor<float>&, const SeqTensor<float>&, bool);
template double one_step_loss<double>(DecoderOnlyModel<double>&, const SeqTensor<double>&, const SeqTensor<double>&,
                                      bool);
template float sim_loss<float>(EncoderDecoderModel<float>&, const data::ContextQuery<float>&, bool);
template double sim_loss<double>(EncoderDecoderModel<double>&, const data::ContextQuery<double>&, bool);

}  // namespace metasysid::model
