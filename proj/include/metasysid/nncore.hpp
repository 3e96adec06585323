#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "metasysid/seeding.hpp"
#include "metasysid/tensor.hpp"

/// Minimal differentiable layer set for the meta-models. Every layer keeps
/// its activations in an explicit Cache owned by the caller, so a forward pass
/// without a cache is read-only on the parameters and safe to share across
/// threads. Backward passes are hand-derived and accumulate into
/// Parameter::grad.
///
/// Activations are (batch * steps) x features row-major matrices.
namespace metasysid::nn {

template <class T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <class T>
using ColVector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
struct Parameter {
    std::string name;
    std::vector<std::int64_t> shape;  // rank 1 or 2; rank-1 arrays are stored as 1 x n
    Matrix<T> value;
    Matrix<T> grad;
    bool decay = false;  // AdamW weight decay applies

    [[nodiscard]] std::int64_t numel() const { return value.size(); }
};

/// Named parameter arrays in insertion order. Element addresses are stable.
template <class T>
class ParamStore {
   public:
    Parameter<T>& add(std::string name, std::vector<std::int64_t> shape, bool decay = false);

    [[nodiscard]] Parameter<T>& at(std::string_view name);
    [[nodiscard]] const Parameter<T>& at(std::string_view name) const;
    [[nodiscard]] const Parameter<T>* find(std::string_view name) const;

    [[nodiscard]] std::size_t size() const { return params_.size(); }
    [[nodiscard]] std::int64_t num_elements() const;

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad();
    /// sqrt of the sum of squared gradient entries, accumulated in double.
    [[nodiscard]] double grad_norm() const;

    /// Copies values from `src` by name. Throws ConfigError listing every
    /// missing, extra or mis-shaped parameter.
    template <class U>
    void copy_values_from(const ParamStore<U>& src);

    /// Same names, shapes and decay flags, values cast to U, zero gradients.
    template <class U>
    [[nodiscard]] ParamStore<U> cast() const;

   private:
    std::deque<Parameter<T>> params_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

// ---------------------------------------------------------------------------
// Functional forward ops

/// x W + b with W stored in x out; `b` may be null.
template <class T>
Matrix<T> linear(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>* b);

/// Row-wise normalization, eps = 1e-5, then gain and bias (1 x features).
template <class T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias);

/// Exact (erf-based) GELU.
template <class T>
Matrix<T> gelu(const Matrix<T>& x);

enum class MaskMode { Causal, None };

/// Per-head scaled dot-product attention over already projected q, k, v.
/// q: (batch * tq) x width, k and v: (batch * tk) x width. In causal mode a
/// query at step i sees keys 0..i only (requires tq == tk).
/// If `probs` is given it receives the attention weights, one tq x tk block
/// per (sequence, head), stacked by rows.
template <class T>
Matrix<T> scaled_dot_product_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, int batch,
                                       int n_heads, MaskMode mask, Matrix<T>* probs = nullptr);

template <class T>
struct AttentionGrads {
    Matrix<T> dq;
    Matrix<T> dk;
    Matrix<T> dv;
};

template <class T>
AttentionGrads<T> scaled_dot_product_attention_backward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                                                        const Matrix<T>& probs, const Matrix<T>& dout, int batch,
                                                        int n_heads);

// ---------------------------------------------------------------------------
// Layers

template <class T>
class Linear {
   public:
    struct Cache {
        Matrix<T> x;
    };

    Linear() = default;
    Linear(ParamStore<T>& store, const std::string& prefix, int in, int out, bool bias, double init_std, Rng& rng);

    [[nodiscard]] Matrix<T> forward(const Matrix<T>& x, Cache* cache) const;
    Matrix<T> backward(const Cache& cache, const Matrix<T>& dy);

    [[nodiscard]] int in_features() const { return static_cast<int>(weight_->value.rows()); }
    [[nodiscard]] int out_features() const { return static_cast<int>(weight_->value.cols()); }

   private:
    Parameter<T>* weight_ = nullptr;
    Parameter<T>* bias_ = nullptr;
};

template <class T>
class LayerNorm {
   public:
    struct Cache {
        Matrix<T> xhat;
        ColVector<T> rstd;
    };

    LayerNorm() = default;
    LayerNorm(ParamStore<T>& store, const std::string& prefix, int features);

    [[nodiscard]] Matrix<T> forward(const Matrix<T>& x, Cache* cache) const;
    Matrix<T> backward(const Cache& cache, const Matrix<T>& dy);

   private:
    Parameter<T>* gain_ = nullptr;
    Parameter<T>* bias_ = nullptr;
};

/// fc -> GELU -> proj, hidden width 4 * d_model.
template <class T>
class Mlp {
   public:
    struct Cache {
        typename Linear<T>::Cache fc;
        Matrix<T> pre_act;
        typename Linear<T>::Cache proj;
    };

    Mlp() = default;
    Mlp(ParamStore<T>& store, const std::string& prefix, int d_model, double proj_std, Rng& rng);

    [[nodiscard]] Matrix<T> forward(const Matrix<T>& x, Cache* cache) const;
    Matrix<T> backward(const Cache& cache, const Matrix<T>& dy);

   private:
    Linear<T> fc_;
    Linear<T> proj_;
};

/// Projected multi-head attention. Self-attention passes the same matrix as
/// query and key/value source; cross-attention passes the encoder memory.
template <class T>
class MultiHeadAttention {
   public:
    struct Cache {
        typename Linear<T>::Cache q_in, k_in, v_in, out;
        Matrix<T> q, k, v, probs;
        int batch = 0;
    };

    MultiHeadAttention() = default;
    MultiHeadAttention(ParamStore<T>& store, const std::string& prefix, int d_model, int n_heads, MaskMode mask,
                       double proj_std, Rng& rng);

    [[nodiscard]] Matrix<T> forward(const Matrix<T>& x_query, const Matrix<T>& x_memory, int batch,
                                    Cache* cache) const;
    /// Returns (d x_query, d x_memory).
    std::pair<Matrix<T>, Matrix<T>> backward(const Cache& cache, const Matrix<T>& dy);

   private:
    int n_heads_ = 1;
    MaskMode mask_ = MaskMode::None;
    Linear<T> q_proj_, k_proj_, v_proj_, out_proj_;
};

/// Pre-norm Transformer block:
///   x += SelfAttn(LN(x)); [x += CrossAttn(LN(x), memory)]; x += MLP(LN(x)).
template <class T>
class TransformerBlock {
   public:
    struct Cache {
        typename LayerNorm<T>::Cache ln_self, ln_cross, ln_mlp;
        typename MultiHeadAttention<T>::Cache self_attn, cross_attn;
        typename Mlp<T>::Cache mlp;
    };

    TransformerBlock() = default;
    TransformerBlock(ParamStore<T>& store, const std::string& prefix, int d_model, int n_heads, MaskMode self_mask,
                     bool cross_attention, int n_layers, Rng& rng);

    [[nodiscard]] Matrix<T> forward(const Matrix<T>& x, const Matrix<T>* memory, int batch, Cache* cache) const;
    /// Accumulates the memory gradient into *d_memory when cross-attention is present.
    Matrix<T> backward(const Cache& cache, const Matrix<T>& dy, Matrix<T>* d_memory);

    [[nodiscard]] bool has_cross_attention() const { return cross_; }

   private:
    bool cross_ = false;
    LayerNorm<T> ln_self_, ln_cross_, ln_mlp_;
    MultiHeadAttention<T> self_attn_, cross_attn_;
    Mlp<T> mlp_;
};

// ---------------------------------------------------------------------------
// Optimization

struct AdamWHyper {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.1;

    friend bool operator==(const AdamWHyper&, const AdamWHyper&) = default;
};

template <class T>
struct AdamWState {
    AdamWHyper hyper;
    std::int64_t step = 0;
    ParamStore<T> m;
    ParamStore<T> v;
};

template <class T>
AdamWState<T> make_adamw_state(const ParamStore<T>& params, const AdamWHyper& hyper);

/// Decoupled weight decay with bias correction:
///   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
/// Weight decay only touches parameters flagged `decay`.
template <class T>
void adamw_step(ParamStore<T>& params, AdamWState<T>& state, double lr);

template <class T>
void adamw_step(ParamStore<T>& params, AdamWState<T>& state) {
    adamw_step(params, state, state.hyper.lr);
}

/// Rescales gradients so that their global norm is at most max_norm.
/// Returns the norm before clipping. max_norm <= 0 disables clipping.
template <class T>
double clip_grad_norm(ParamStore<T>& params, double max_norm);

// ---------------------------------------------------------------------------
// Serialization: magic "MSPS", u32 version, u8 dtype code, u64 count, then per
// record u32 name length, name bytes, u32 rank, u64 dims, little-endian values.

inline constexpr std::uint32_t kParamStoreVersion = 1;

template <class T>
void write_param_store(std::ostream& out, const ParamStore<T>& store);

/// Throws IntegrityError on malformed or truncated input and
/// UnsupportedVersionError on a version mismatch.
template <class T>
ParamStore<T> read_param_store(std::istream& in);

}  // namespace metasysid::nn
