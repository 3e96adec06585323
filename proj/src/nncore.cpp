#include "metasysid/nncore.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "metasysid/errors.hpp"

#include <unsupported/Eigen/SpecialFunctions>

namespace metasysid::nn {

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

namespace {

template <class T>
void fill_normal(Matrix<T>& m, double stddev, Rng& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal(rng));
}

void check(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

template <class T>
constexpr std::uint8_t dtype_code() {
    if constexpr (std::is_same_v<T, float>)
        return 1;
    else
        return 2;
}

template <class V>
void put(std::ostream& out, const V& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(V));
}

template <class V>
V get(std::istream& in) {
    V value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(V));
    if (!in) throw IntegrityError("parameter store: unexpected end of data");
    return value;
}

constexpr char kMagic[4] = {'M', 'S', 'P', 'S'};

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore

template <class T>
Parameter<T>& ParamStore<T>::add(std::string name, std::vector<std::int64_t> shape, bool decay) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
    if (shape.empty() || shape.size() > 2) throw std::invalid_argument("parameter rank must be 1 or 2");
    for (auto d : shape)
        if (d < 1) throw std::invalid_argument("parameter dims must be positive");
    const Eigen::Index rows = shape.size() == 2 ? shape[0] : 1;
    const Eigen::Index cols = shape.back();
    Parameter<T> p{name, std::move(shape), Matrix<T>::Zero(rows, cols), Matrix<T>::Zero(rows, cols), decay};
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return params_.back();
}

template <class T>
Parameter<T>& ParamStore<T>::at(std::string_view name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
    return params_[it->second];
}

template <class T>
const Parameter<T>& ParamStore<T>::at(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
    return params_[it->second];
}

template <class T>
const Parameter<T>* ParamStore<T>::find(std::string_view name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

template <class T>
std::int64_t ParamStore<T>::num_elements() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
}

template <class T>
void ParamStore<T>::zero_grad() {
    for (auto& p : params_) p.grad.setZero();
}

template <class T>
double ParamStore<T>::grad_norm() const {
    double acc = 0.0;
    for (const auto& p : params_) acc += p.grad.template cast<double>().squaredNorm();
    return std::sqrt(acc);
}

template <class T>
template <class U>
void ParamStore<T>::copy_values_from(const ParamStore<U>& src) {
    std::string problems;
    for (auto& p : params_) {
        const auto* s = src.find(p.name);
        if (s == nullptr)
            problems += " missing:" + p.name;
        else if (s->shape != p.shape)
            problems += " shape:" + p.name;
    }
    for (const auto& s : src)
        if (!index_.contains(s.name)) problems += " unexpected:" + s.name;
    if (!problems.empty()) throw ConfigError("incompatible parameters:" + problems);
    for (auto& p : params_) p.value = src.at(p.name).value.template cast<T>();
}

template <class T>
template <class U>
ParamStore<U> ParamStore<T>::cast() const {
    ParamStore<U> out;
    for (const auto& p : params_) {
        auto& q = out.add(p.name, p.shape, p.decay);
        q.value = p.value.template cast<U>();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Functional ops

template <class T>
Matrix<T> linear(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>* b) {
    check(x.cols() == w.rows(), "linear: x columns must equal W rows");
    Matrix<T> y(x.rows(), w.cols());
    y.noalias() = x * w;
    if (b != nullptr) {
        check(b->rows() == 1 && b->cols() == w.cols(), "linear: bias shape mismatch");
        y.rowwise() += b->row(0);
    }
    return y;
}

template <class T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias) {
    check(gain.rows() == 1 && gain.cols() == x.cols() && bias.rows() == 1 && bias.cols() == x.cols(),
          "layer_norm: gain/bias shape mismatch");
    Matrix<T> y(x.rows(), x.cols());
    const T inv_n = T(1) / static_cast<T>(x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const T mean = x.row(i).sum() * inv_n;
        const T var = (x.row(i).array() - mean).square().sum() * inv_n;
        const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        y.row(i) = ((x.row(i).array() - mean) * rstd) * gain.row(0).array() + bias.row(0).array();
    }
    return y;
}

template <class T>
Matrix<T> gelu(const Matrix<T>& x) {
    const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
    return (T(0.5) * x.array() * (T(1) + (x.array() * inv_sqrt2).erf())).matrix();
}

template <class T>
Matrix<T> scaled_dot_product_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, int batch,
                                       int n_heads, MaskMode mask, Matrix<T>* probs) {
    const Eigen::Index width = q.cols();
    if (n_heads < 1 || width % n_heads != 0) throw ConfigError("attention: width not divisible by number of heads");
    check(k.cols() == width && v.cols() == width, "attention: q/k/v width mismatch");
    check(batch >= 1 && q.rows() % batch == 0 && k.rows() % batch == 0, "attention: rows not divisible by batch");
    check(k.rows() == v.rows(), "attention: key and value lengths differ");
    const Eigen::Index tq = q.rows() / batch;
    const Eigen::Index tk = k.rows() / batch;
    check(mask != MaskMode::Causal || tq == tk, "attention: causal mode requires equal query/key lengths");

    const Eigen::Index hd = width / n_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    Matrix<T> out(q.rows(), width);
    Matrix<T> scores(tq, tk);
    if (probs != nullptr) probs->resize(Eigen::Index{batch} * n_heads * tq, tk);

    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < n_heads; ++h) {
            const auto qb = q.block(b * tq, h * hd, tq, hd);
            const auto kb = k.block(b * tk, h * hd, tk, hd);
            const auto vb = v.block(b * tk, h * hd, tk, hd);
            scores.noalias() = qb * kb.transpose();
            for (Eigen::Index i = 0; i < tq; ++i) {
                const Eigen::Index allowed = mask == MaskMode::Causal ? i + 1 : tk;
                T* row = scores.row(i).data();
                Eigen::Map<Eigen::Array<T, 1, Eigen::Dynamic>> seg(row, allowed);
                const T mx = seg.maxCoeff();
                seg = ((seg - mx) * scale).exp();
                seg *= T(1) / seg.sum();
                std::fill(row + allowed, row + tk, T(0));
            }
            out.block(b * tq, h * hd, tq, hd).noalias() = scores * vb;
            if (probs != nullptr) probs->middleRows((Eigen::Index{b} * n_heads + h) * tq, tq) = scores;
        }
    }
    return out;
}

template <class T>
AttentionGrads<T> scaled_dot_product_attention_backward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                                                        const Matrix<T>& probs, const Matrix<T>& dout, int batch,
                                                        int n_heads) {
    const Eigen::Index width = q.cols();
    const Eigen::Index tq = q.rows() / batch;
    const Eigen::Index tk = k.rows() / batch;
    const Eigen::Index hd = width / n_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    check(dout.rows() == q.rows() && dout.cols() == width, "attention backward: gradient shape mismatch");
    check(probs.rows() == Eigen::Index{batch} * n_heads * tq && probs.cols() == tk,
          "attention backward: probability cache shape mismatch");

    AttentionGrads<T> g{Matrix<T>(q.rows(), width), Matrix<T>(k.rows(), width), Matrix<T>(v.rows(), width)};
    Matrix<T> dp(tq, tk);
    ColVector<T> row_dot(tq);
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < n_heads; ++h) {
            const auto p = probs.middleRows((Eigen::Index{b} * n_heads + h) * tq, tq);
            const auto qb = q.block(b * tq, h * hd, tq, hd);
            const auto kb = k.block(b * tk, h * hd, tk, hd);
            const auto vb = v.block(b * tk, h * hd, tk, hd);
            const auto dob = dout.block(b * tq, h * hd, tq, hd);
            g.dv.block(b * tk, h * hd, tk, hd).noalias() = p.transpose() * dob;
            dp.noalias() = dob * vb.transpose();
            row_dot = (p.array() * dp.array()).rowwise().sum();
            dp = ((dp.colwise() - row_dot).array() * p.array() * scale).matrix();
            g.dq.block(b * tq, h * hd, tq, hd).noalias() = dp * kb;
            g.dk.block(b * tk, h * hd, tk, hd).noalias() = dp.transpose() * qb;
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Layers

template <class T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& prefix, int in, int out, bool bias, double init_std,
                  Rng& rng) {
    weight_ = &store.add(prefix + ".weight", {in, out}, true);
    fill_normal(weight_->value, init_std, rng);
    if (bias) bias_ = &store.add(prefix + ".bias", {out}, false);
}

template <class T>
Matrix<T> Linear<T>::forward(const Matrix<T>& x, Cache* cache) const {
    if (cache != nullptr) cache->x = x;
    return linear<T>(x, weight_->value, bias_ != nullptr ? &bias_->value : nullptr);
}

template <class T>
Matrix<T> Linear<T>::backward(const Cache& cache, const Matrix<T>& dy) {
    check(dy.rows() == cache.x.rows() && dy.cols() == weight_->value.cols(), "linear backward: gradient shape mismatch");
    weight_->grad.noalias() += cache.x.transpose() * dy;
    if (bias_ != nullptr) bias_->grad += dy.colwise().sum();
    Matrix<T> dx(dy.rows(), weight_->value.rows());
    dx.noalias() = dy * weight_->value.transpose();
    return dx;
}

template <class T>
LayerNorm<T>::LayerNorm(ParamStore<T>& store, const std::string& prefix, int features) {
    gain_ = &store.add(prefix + ".weight", {features}, false);
    gain_->value.setOnes();
    bias_ = &store.add(prefix + ".bias", {features}, false);
}

template <class T>
Matrix<T> LayerNorm<T>::forward(const Matrix<T>& x, Cache* cache) const {
    const auto& gain = gain_->value;
    const auto& bias = bias_->value;
    check(x.cols() == gain.cols(), "layer_norm: feature width mismatch");
    if (cache == nullptr) return layer_norm<T>(x, gain, bias);

    const T inv_n = T(1) / static_cast<T>(x.cols());
    cache->xhat.resize(x.rows(), x.cols());
    cache->rstd.resize(x.rows());
    Matrix<T> y(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const T mean = x.row(i).sum() * inv_n;
        const T var = (x.row(i).array() - mean).square().sum() * inv_n;
        const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        cache->rstd[i] = rstd;
        cache->xhat.row(i) = (x.row(i).array() - mean) * rstd;
        y.row(i) = cache->xhat.row(i).array() * gain.row(0).array() + bias.row(0).array();
    }
    return y;
}

template <class T>
Matrix<T> LayerNorm<T>::backward(const Cache& cache, const Matrix<T>& dy) {
    check(dy.rows() == cache.xhat.rows() && dy.cols() == cache.xhat.cols(), "layer_norm backward: shape mismatch");
    gain_->grad += (dy.array() * cache.xhat.array()).matrix().colwise().sum();
    bias_->grad += dy.colwise().sum();
    const T inv_n = T(1) / static_cast<T>(dy.cols());
    Matrix<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const auto dxhat = (dy.row(i).array() * gain_->value.row(0).array()).eval();
        const T mean_d = dxhat.sum() * inv_n;
        const T mean_dx = (dxhat * cache.xhat.row(i).array()).sum() * inv_n;
        dx.row(i) = (dxhat - mean_d - cache.xhat.row(i).array() * mean_dx) * cache.rstd[i];
    }
    return dx;
}

template <class T>
Mlp<T>::Mlp(ParamStore<T>& store, const std::string& prefix, int d_model, double proj_std, Rng& rng)
    : fc_(store, prefix + ".fc", d_model, 4 * d_model, true, 0.02, rng),
      proj_(store, prefix + ".proj", 4 * d_model, d_model, true, proj_std, rng) {}

template <class T>
Matrix<T> Mlp<T>::forward(const Matrix<T>& x, Cache* cache) const {
    Matrix<T> h = fc_.forward(x, cache != nullptr ? &cache->fc : nullptr);
    Matrix<T> a = gelu<T>(h);
    if (cache != nullptr) cache->pre_act = std::move(h);
    return proj_.forward(a, cache != nullptr ? &cache->proj : nullptr);
}

template <class T>
Matrix<T> Mlp<T>::backward(const Cache& cache, const Matrix<T>& dy) {
    Matrix<T> da = proj_.backward(cache.proj, dy);
    const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
    const T inv_sqrt2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
    const auto x = cache.pre_act.array();
    const Matrix<T> dh =
        (da.array() * (T(0.5) * (T(1) + (x * inv_sqrt2).erf()) + x * (T(-0.5) * x.square()).exp() * inv_sqrt2pi))
            .matrix();
    return fc_.backward(cache.fc, dh);
}

template <class T>
MultiHeadAttention<T>::MultiHeadAttention(ParamStore<T>& store, const std::string& prefix, int d_model, int n_heads,
                                          MaskMode mask, double proj_std, Rng& rng)
    : n_heads_(n_heads),
      mask_(mask),
      q_proj_(store, prefix + ".q", d_model, d_model, true, 0.02, rng),
      k_proj_(store, prefix + ".k", d_model, d_model, true, 0.02, rng),
      v_proj_(store, prefix + ".v", d_model, d_model, true, 0.02, rng),
      out_proj_(store, prefix + ".proj", d_model, d_model, true, proj_std, rng) {
    if (n_heads < 1 || d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
}

template <class T>
Matrix<T> MultiHeadAttention<T>::forward(const Matrix<T>& x_query, const Matrix<T>& x_memory, int batch,
                                         Cache* cache) const {
    if (cache == nullptr) {
        const Matrix<T> attn = scaled_dot_product_attention<T>(q_proj_.forward(x_query, nullptr),
                                                               k_proj_.forward(x_memory, nullptr),
                                                               v_proj_.forward(x_memory, nullptr), batch, n_heads_, mask_);
        return out_proj_.forward(attn, nullptr);
    }
    cache->batch = batch;
    cache->q = q_proj_.forward(x_query, &cache->q_in);
    cache->k = k_proj_.forward(x_memory, &cache->k_in);
    cache->v = v_proj_.forward(x_memory, &cache->v_in);
    const Matrix<T> attn =
        scaled_dot_product_attention<T>(cache->q, cache->k, cache->v, batch, n_heads_, mask_, &cache->probs);
    return out_proj_.forward(attn, &cache->out);
}

template <class T>
std::pair<Matrix<T>, Matrix<T>> MultiHeadAttention<T>::backward(const Cache& cache, const Matrix<T>& dy) {
    const Matrix<T> dattn = out_proj_.backward(cache.out, dy);
    auto g = scaled_dot_product_attention_backward<T>(cache.q, cache.k, cache.v, cache.probs, dattn, cache.batch,
                                                      n_heads_);
    Matrix<T> dq = q_proj_.backward(cache.q_in, g.dq);
    Matrix<T> dm = k_proj_.backward(cache.k_in, g.dk);
    dm += v_proj_.backward(cache.v_in, g.dv);
    return {std::move(dq), std::move(dm)};
}

template <class T>
TransformerBlock<T>::TransformerBlock(ParamStore<T>& store, const std::string& prefix, int d_model, int n_heads,
                                      MaskMode self_mask, bool cross_attention, int n_layers, Rng& rng)
    : cross_(cross_attention) {
    const double proj_std = 0.02 / std::sqrt(2.0 * n_layers);
    ln_self_ = LayerNorm<T>(store, prefix + ".ln_self", d_model);
    self_attn_ = MultiHeadAttention<T>(store, prefix + ".self_attn", d_model, n_heads, self_mask, proj_std, rng);
    if (cross_) {
        ln_cross_ = LayerNorm<T>(store, prefix + ".ln_cross", d_model);
        cross_attn_ =
            MultiHeadAttention<T>(store, prefix + ".cross_attn", d_model, n_heads, MaskMode::None, proj_std, rng);
    }
    ln_mlp_ = LayerNorm<T>(store, prefix + ".ln_mlp", d_model);
    mlp_ = Mlp<T>(store, prefix + ".mlp", d_model, proj_std, rng);
}

template <class T>
Matrix<T> TransformerBlock<T>::forward(const Matrix<T>& x, const Matrix<T>* memory, int batch, Cache* cache) const {
    const bool keep = cache != nullptr;
    Matrix<T> h = x;
    {
        const Matrix<T> a = ln_self_.forward(h, keep ? &cache->ln_self : nullptr);
        h += self_attn_.forward(a, a, batch, keep ? &cache->self_attn : nullptr);
    }
    if (cross_) {
        if (memory == nullptr) throw std::invalid_argument("TransformerBlock: cross-attention requires a memory input");
        const Matrix<T> a = ln_cross_.forward(h, keep ? &cache->ln_cross : nullptr);
        h += cross_attn_.forward(a, *memory, batch, keep ? &cache->cross_attn : nullptr);
    }
    {
        const Matrix<T> a = ln_mlp_.forward(h, keep ? &cache->ln_mlp : nullptr);
        h += mlp_.forward(a, keep ? &cache->mlp : nullptr);
    }
    return h;
}

template <class T>
Matrix<T> TransformerBlock<T>::backward(const Cache& cache, const Matrix<T>& dy, Matrix<T>* d_memory) {
    Matrix<T> dh = dy;
    dh += ln_mlp_.backward(cache.ln_mlp, mlp_.backward(cache.mlp, dy));
    if (cross_) {
        auto [dq, dm] = cross_attn_.backward(cache.cross_attn, dh);
        if (d_memory != nullptr) {
            if (d_memory->size() == 0)
                *d_memory = std::move(dm);
            else
                *d_memory += dm;
        }
        dh += ln_cross_.backward(cache.ln_cross, dq);
    }
    auto [dq, dkv] = self_attn_.backward(cache.self_attn, dh);
    dq += dkv;
    dh += ln_self_.backward(cache.ln_self, dq);
    return dh;
}

// ---------------------------------------------------------------------------
// Optimization

template <class T>
AdamWState<T> make_adamw_state(const ParamStore<T>& params, const AdamWHyper& hyper) {
    AdamWState<T> s;
    s.hyper = hyper;
    for (const auto& p : params) {
        s.m.add(p.name, p.shape, p.decay);
        s.v.add(p.name, p.shape, p.decay);
    }
    return s;
}

template <class T>
void adamw_step(ParamStore<T>& params, AdamWState<T>& state, double lr) {
    state.step += 1;
    const auto& h = state.hyper;
    const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
    const T b1 = static_cast<T>(h.beta1);
    const T b2 = static_cast<T>(h.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(h.eps);
    for (auto& p : params) {
        auto& m = state.m.at(p.name).value;
        auto& v = state.v.at(p.name).value;
        check(m.rows() == p.value.rows() && m.cols() == p.value.cols(), "adamw_step: optimizer state shape mismatch");
        const T decay = p.decay ? static_cast<T>(lr * h.weight_decay) : T(0);
        T* theta = p.value.data();
        const T* g = p.grad.data();
        T* mp = m.data();
        T* vp = v.data();
        const Eigen::Index n = p.value.size();
        for (Eigen::Index i = 0; i < n; ++i) {
            mp[i] = b1 * mp[i] + (T(1) - b1) * g[i];
            vp[i] = b2 * vp[i] + (T(1) - b2) * g[i] * g[i];
            const T denom = std::sqrt(vp[i]) * inv_sqrt_bc2 + eps;
            theta[i] -= step_size * mp[i] / denom + decay * theta[i];
        }
    }
}

template <class T>
double clip_grad_norm(ParamStore<T>& params, double max_norm) {
    const double norm = params.grad_norm();
    if (max_norm > 0.0 && norm > max_norm) {
        const T factor = static_cast<T>(max_norm / (norm + 1e-12));
        for (auto& p : params) p.grad *= factor;
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Serialization

template <class T>
void write_param_store(std::ostream& out, const ParamStore<T>& store) {
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kParamStoreVersion);
    put<std::uint8_t>(out, dtype_code<T>());
    put<std::uint64_t>(out, store.size());
    for (const auto& p : store) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape.size()));
        for (auto d : p.shape) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
        out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * sizeof(T)));
    }
    if (!out) throw std::runtime_error("parameter store: write failed");
}

template <class T>
ParamStore<T> read_param_store(std::istream& in) {
    char magic[4];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw IntegrityError("parameter store: bad magic");
    const auto version = get<std::uint32_t>(in);
    if (version != kParamStoreVersion) throw UnsupportedVersionError(version, kParamStoreVersion);
    if (get<std::uint8_t>(in) != dtype_code<T>()) throw IntegrityError("parameter store: dtype mismatch");
    const auto count = get<std::uint64_t>(in);
    if (count > (1ULL << 20U)) throw IntegrityError("parameter store: implausible record count");
    ParamStore<T> store;
    for (std::uint64_t r = 0; r < count; ++r) {
        const auto name_len = get<std::uint32_t>(in);
        if (name_len == 0 || name_len > 4096) throw IntegrityError("parameter store: bad name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) throw IntegrityError("parameter store: unexpected end of data");
        const auto rank = get<std::uint32_t>(in);
        if (rank < 1 || rank > 2) throw IntegrityError("parameter store: bad rank for '" + name + "'");
        std::vector<std::int64_t> shape;
        std::uint64_t elems = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto dim = get<std::uint64_t>(in);
            if (dim == 0 || dim > (1ULL << 31U)) throw IntegrityError("parameter store: bad dimension");
            elems *= dim;
            shape.push_back(static_cast<std::int64_t>(dim));
        }
        if (elems > (1ULL << 31U)) throw IntegrityError("parameter store: implausible parameter size");
        Parameter<T>* p = nullptr;
        try {
            p = &store.add(name, shape, false);
        } catch (const std::invalid_argument& e) {
            throw IntegrityError(std::string("parameter store: ") + e.what());
        }
        in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(elems * sizeof(T)));
        if (!in) throw IntegrityError("parameter store: unexpected end of data");
    }
    return store;
}

// ---------------------------------------------------------------------------

#define METASYSID_NN_INSTANTIATE(T)                                                                               \
    template class ParamStore<T>;                                                                                 \
    template Matrix<T> linear<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>*);                          \
    template Matrix<T> layer_norm<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&);                      \
    template Matrix<T> gelu<T>(const Matrix<T>&);                                                                 \
    template Matrix<T> scaled_dot_product_attention<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, int, \
                                                       int, MaskMode, Matrix<T>*);                                \
    template AttentionGrads<T> scaled_dot_product_attention_backward<T>(                                          \
        const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, int, int);      \
    template class Linear<T>;                                                                                     \
    template class LayerNorm<T>;                                                                                  \
    template class Mlp<T>;                                                                                        \
    template class MultiHeadAttention<T>;                                                                         \
    template class TransformerBlock<T>;                                                                           \
    template AdamWState<T> make_adamw_state<T>(const ParamStore<T>&, const AdamWHyper&);                         \
    template void adamw_step<T>(ParamStore<T>&, AdamWState<T>&, double);                                          \
    template double clip_grad_norm<T>(ParamStore<T>&, double);                                                    \
    template void write_param_store<T>(std::ostream&, const ParamStore<T>&);                                      \
    template ParamStore<T> read_param_store<T>(std::istream&);

METASYSID_NN_INSTANTIATE(float)
METASYSID_NN_INSTANTIATE(double)

template void ParamStore<float>::copy_values_from<float>(const ParamStore<float>&);
template void ParamStore<float>::copy_values_from<double>(const ParamStore<double>&);
template void ParamStore<double>::copy_values_from<float>(const ParamStore<float>&);
template void ParamStore<double>::copy_values_from<double>(const ParamStore<double>&);
template ParamStore<float> ParamStore<float>::cast<float>() const;
template ParamStore<double> ParamStore<float>::cast<double>() const;
template ParamStore<float> ParamStore<double>::cast<float>() const;
template ParamStore<double> ParamStore<double>::cast<double>() const;

}  // namespace metasysid::nn
