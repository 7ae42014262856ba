#pragma once

#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "dm/ops.hpp"
#include "dm/rng.hpp"
#include "dm/signal_io.hpp"
#include "dm/tensor.hpp"

namespace dm::model {

// Every architecture hyperparameter is pinned here so a checkpoint fully
// reproduces the network that wrote it.
struct ModelConfig {
    int width = 40;             // encoder channel width (d)
    int attn_reduction = 4;     // attention bottleneck ratio
    int adapter_reduction = 8;  // adapter bottleneck ratio
    int stacks = 3;             // (D-Inception -> Downsampling) pairs per encoder
    std::vector<int> kernel_schedule = {11, 7, 5, 3}; // one per pair + final block
    int stage2_kernel = 3;
    double dropout_p = 0.1;
    std::uint32_t sample_rate = 2048;  // SR; must be a power of two
    std::uint16_t time_channels = 6;   // C1
    std::uint16_t spectral_channels = 3; // C2
    int max_cuts = 8;
    std::uint64_t seed = 42;

    int stage2_width() const { return 4 * width; }

    void validate() const {
        if (width <= 0 || width % 4 != 0) throw ConfigError("width must be a positive multiple of 4");
        if (attn_reduction <= 0 || width % attn_reduction != 0)
            throw ConfigError("width must be divisible by attn_reduction");
        if (adapter_reduction <= 0 || width % adapter_reduction != 0 ||
            stage2_width() % adapter_reduction != 0)
            throw ConfigError("width and 4*width must be divisible by adapter_reduction");
        if (stacks < 1) throw ConfigError("stacks must be >= 1");
        if (static_cast<int>(kernel_schedule.size()) != stacks + 1)
            throw ConfigError("kernel_schedule must hold stacks+1 entries");
        for (int k : kernel_schedule)
            if (k < 1) throw ConfigError("kernel sizes must be >= 1");
        if (stage2_kernel < 1) throw ConfigError("stage2_kernel must be >= 1");
        if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout_p must satisfy 0 <= p < 1");
        if (sample_rate == 0 || (sample_rate & (sample_rate - 1)) != 0)
            throw ConfigError("sample_rate must be a power of two");
        if (spectral_channels == 0 || spectral_channels >= time_channels)
            throw ConfigError("need 0 < C2 < C1");
        if (max_cuts < 1) throw ConfigError("max_cuts must be >= 1");
    }
};

constexpr float kLayerNormEps = 1e-5f;

// ---------------------------------------------------------------------------
// Named parameter store. Creation order is canonical and defines checkpoint
// tensor order.
// ---------------------------------------------------------------------------
template <typename S>
struct ParamStoreT {
    std::vector<TensorT<S>> tensors;
    std::unordered_map<std::string, std::size_t> index;

    bool has(const std::string& name) const { return index.count(name) != 0; }

    TensorT<S>& at(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw ConfigError("unknown parameter '" + name + "'");
        return tensors[it->second];
    }
    const TensorT<S>& at(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw ConfigError("unknown parameter '" + name + "'");
        return tensors[it->second];
    }

    TensorT<S>& create(const std::string& name, std::vector<int> shape) {
        if (has(name)) throw ConfigError("duplicate parameter '" + name + "'");
        TensorT<S> t = zeros<S>(std::move(shape));
        t.name = name;
        index.emplace(name, tensors.size());
        tensors.push_back(std::move(t));
        return tensors.back();
    }

    std::size_t total_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors) n += t.numel();
        return n;
    }

    // Same data buffers, private zeroed gradients for requires_grad tensors.
    ParamStoreT<S> grad_view() const {
        ParamStoreT<S> v;
        v.index = index;
        v.tensors.reserve(tensors.size());
        for (const auto& t : tensors) v.tensors.push_back(t.grad_view());
        return v;
    }
};

using ParamStore = ParamStoreT<float>;

// ---------------------------------------------------------------------------
// Trainable mask: the train/freeze partition over tensor names.
// ---------------------------------------------------------------------------
inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Fine-tuning trains exactly: adapters, every bias/offset vector (conv and
// linear biases, layer-norm beta), and the projection head.
inline bool finetune_trainable(const std::string& name) {
    if (name.find(".adapter.") != std::string::npos) return true;
    if (name.rfind("head.", 0) == 0) return true;
    if (ends_with(name, ".b")) return true;
    if (ends_with(name, ".beta")) return true;
    return false;
}

struct TrainableMask {
    std::set<std::string> names;
    bool contains(const std::string& name) const { return names.count(name) != 0; }
};

template <typename S>
TrainableMask pretrain_mask(const ParamStoreT<S>& store) {
    TrainableMask m;
    for (const auto& t : store.tensors) m.names.insert(t.name);
    return m;
}

template <typename S>
TrainableMask finetune_mask(const ParamStoreT<S>& store) {
    TrainableMask m;
    for (const auto& t : store.tensors)
        if (finetune_trainable(t.name)) m.names.insert(t.name);
    return m;
}

struct ParamCounts {
    std::size_t total = 0;
    std::size_t trainable = 0;
    double fraction = 0.0;
};

template <typename S>
ParamCounts param_counts(const ParamStoreT<S>& store, const TrainableMask& mask) {
    ParamCounts c;
    for (const auto& t : store.tensors) {
        c.total += t.numel();
        if (mask.contains(t.name)) c.trainable += t.numel();
    }
    c.fraction = c.total ? static_cast<double>(c.trainable) / static_cast<double>(c.total) : 0.0;
    return c;
}

// ---------------------------------------------------------------------------
// Parameter construction.
// ---------------------------------------------------------------------------
namespace detail {

template <typename S>
void init_he_uniform(TensorT<S>& t, int fan_in, std::uint64_t seed) {
    Rng rng(derive_seed(seed, "init/" + t.name));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : *t.data) v = static_cast<S>(rng.uniform(-limit, limit));
}

template <typename S>
void create_linear(ParamStoreT<S>& p, const std::string& prefix, int din, int dout,
                   std::uint64_t seed, bool zero_weight = false) {
    auto& w = p.create(prefix + ".w", {din, dout});
    if (!zero_weight) init_he_uniform(w, din, seed);
    p.create(prefix + ".b", {dout});
}

template <typename S>
void create_conv(ParamStoreT<S>& p, const std::string& prefix, int k, int cin, int cout,
                 std::uint64_t seed) {
    auto& w = p.create(prefix + ".w", {k, cin, cout});
    init_he_uniform(w, k * cin, seed);
    p.create(prefix + ".b", {cout});
}

template <typename S>
void create_layer_norm(ParamStoreT<S>& p, const std::string& prefix, int c) {
    auto& gamma = p.create(prefix + ".gamma", {c});
    std::fill(gamma.data->begin(), gamma.data->end(), S(1));
    p.create(prefix + ".beta", {c});
}

template <typename S>
void create_d_inception(ParamStoreT<S>& p, const std::string& prefix, int c, int s, int r_attn,
                        std::uint64_t seed) {
    const int branch = c / 4;
    create_conv(p, prefix + ".b1.conv1", 1, c, branch, seed);
    create_conv(p, prefix + ".b2.conv1", 1, c, branch, seed);
    create_conv(p, prefix + ".b2.convs", s, branch, branch, seed);
    create_conv(p, prefix + ".b3.conv1", 1, c, branch, seed);
    create_conv(p, prefix + ".b3.dconvs", s, branch, branch, seed);
    create_conv(p, prefix + ".b4.conv1", 1, c, branch, seed);
    create_layer_norm(p, prefix + ".ln", c);
    create_linear(p, prefix + ".fc", c, c, seed);
    // Channel attention consumes avg||max, so the first layer sees 2c inputs.
    create_linear(p, prefix + ".ca.w0", 2 * c, c / r_attn, seed);
    create_linear(p, prefix + ".ca.w1", c / r_attn, c, seed);
    create_conv(p, prefix + ".ta.conv", 1, 2, 1, seed);
}

template <typename S>
void create_downsampling(ParamStoreT<S>& p, const std::string& prefix, int c, std::uint64_t seed) {
    create_linear(p, prefix + ".w0", c, 4 * c, seed);
    create_layer_norm(p, prefix + ".ln", 4 * c);
    create_linear(p, prefix + ".w1", 4 * c, c, seed);
}

template <typename S>
void create_stem(ParamStoreT<S>& p, const std::string& prefix, int cin, int d, std::uint64_t seed) {
    create_linear(p, prefix + ".proj", cin, d, seed);
    create_layer_norm(p, prefix + ".ln", d);
    create_conv(p, prefix + ".conv", 11, d, d, seed);
}

} // namespace detail

inline std::vector<std::string> encoder_prefixes() { return {"time", "spec"}; }

// Prefixes of every block an adapter goes into, with its channel width.
inline std::vector<std::pair<std::string, int>> adapter_sites(const ModelConfig& cfg) {
    std::vector<std::pair<std::string, int>> sites;
    for (const auto& enc : encoder_prefixes()) {
        for (int i = 0; i <= cfg.stacks; ++i) sites.emplace_back(enc + ".di" + std::to_string(i), cfg.width);
        for (int i = 0; i < cfg.stacks; ++i) sites.emplace_back(enc + ".ds" + std::to_string(i), cfg.width);
    }
    sites.emplace_back("stage2.di", cfg.stage2_width());
    return sites;
}

template <typename S>
ParamStoreT<S> build_params(const ModelConfig& cfg) {
    cfg.validate();
    ParamStoreT<S> p;
    const int d = cfg.width;
    for (const auto& enc : encoder_prefixes()) {
        const int cin = enc == "time" ? cfg.time_channels : cfg.spectral_channels;
        detail::create_stem(p, enc + ".stem", cin, d, cfg.seed);
        for (int i = 0; i < cfg.stacks; ++i) {
            detail::create_d_inception(p, enc + ".di" + std::to_string(i), d, cfg.kernel_schedule[i],
                                       cfg.attn_reduction, cfg.seed);
            detail::create_downsampling(p, enc + ".ds" + std::to_string(i), d, cfg.seed);
        }
        detail::create_d_inception(p, enc + ".di" + std::to_string(cfg.stacks), d,
                                   cfg.kernel_schedule[cfg.stacks], cfg.attn_reduction, cfg.seed);
    }
    detail::create_d_inception(p, "stage2.di", cfg.stage2_width(), cfg.stage2_kernel,
                               cfg.attn_reduction, cfg.seed);
    // The head starts at zero so predictions begin at 0 mm and the optimizer
    // never has to unwind a randomly-scaled output layer; machining errors
    // live orders of magnitude below feature scale.
    detail::create_linear(p, "head", 8 * d, 1, cfg.seed, /*zero_weight=*/true);
    return p;
}

// Inserts one zero-initialized adapter per D-Inception and Downsampling
// block. The second linear starts at zero, so insertion preserves the
// network function exactly.
template <typename S>
void insert_adapters(ParamStoreT<S>& store, const ModelConfig& cfg) {
    for (const auto& [prefix, c] : adapter_sites(cfg)) {
        if (store.has(prefix + ".adapter.w0.w"))
            throw ConfigError("adapters already inserted at " + prefix);
        if (c % cfg.adapter_reduction != 0)
            throw ConfigError("adapter width not divisible by reduction at " + prefix);
    }
    for (const auto& [prefix, c] : adapter_sites(cfg)) {
        const int bottleneck = c / cfg.adapter_reduction;
        detail::create_linear(store, prefix + ".adapter.w0", c, bottleneck, cfg.seed);
        detail::create_linear(store, prefix + ".adapter.w1", bottleneck, c, cfg.seed,
                              /*zero_weight=*/true);
    }
}

template <typename S>
bool has_adapters(const ParamStoreT<S>& store) {
    return store.has("stage2.di.adapter.w0.w");
}

// Expected name -> shape map for checkpoint validation.
inline std::unordered_map<std::string, std::vector<int>> expected_shapes(const ModelConfig& cfg,
                                                                         bool with_adapters) {
    auto store = build_params<float>(cfg);
    if (with_adapters) insert_adapters(store, cfg);
    std::unordered_map<std::string, std::vector<int>> m;
    for (const auto& t : store.tensors) m.emplace(t.name, t.shape);
    return m;
}

// ---------------------------------------------------------------------------
// Forward passes.
// ---------------------------------------------------------------------------
template <typename S>
class NetT {
public:
    NetT(ModelConfig cfg, ParamStoreT<S> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
        cfg_.validate();
    }

    const ModelConfig& config() const { return cfg_; }
    ParamStoreT<S>& params() { return params_; }
    const ParamStoreT<S>& params() const { return params_; }
    bool adapters_present() const { return has_adapters(params_); }

    // Marks masked tensors as requiring grad, clears the rest.
    void set_trainable(const TrainableMask& mask) {
        for (auto& t : params_.tensors) {
            if (mask.contains(t.name)) t.ensure_grad();
            else t.drop_grad();
        }
    }

    void zero_grad() {
        for (auto& t : params_.tensors) t.zero_grad();
    }

    // Channel projection, dropout, layer norm, strided conv, GELU.
    TensorT<S> stem_forward(GraphT<S>& g, const TensorT<S>& x, const std::string& enc, Rng& rng) const {
        const std::string p = enc + ".stem";
        TensorT<S> h = linear(g, x, params_.at(p + ".proj.w"), params_.at(p + ".proj.b"));
        h = dropout(g, h, cfg_.dropout_p, rng);
        h = layer_norm(g, h, params_.at(p + ".ln.gamma"), params_.at(p + ".ln.beta"), S(kLayerNormEps));
        h = conv1d(g, h, params_.at(p + ".conv.w"), params_.at(p + ".conv.b"), 5, 1, Pad::same);
        return gelu(g, h);
    }

    TensorT<S> channel_attention(GraphT<S>& g, const TensorT<S>& f, const std::string& prefix) const {
        TensorT<S> avg = global_pool(g, f, PoolKind::avg);
        TensorT<S> mx = global_pool(g, f, PoolKind::max);
        TensorT<S> v = concat(g, {avg, mx}, 0);
        TensorT<S> h = linear(g, v, params_.at(prefix + ".ca.w0.w"), params_.at(prefix + ".ca.w0.b"));
        h = gelu(g, h);
        h = linear(g, h, params_.at(prefix + ".ca.w1.w"), params_.at(prefix + ".ca.w1.b"));
        return sigmoid(g, h); // [c], broadcast along time on application
    }

    TensorT<S> temporal_attention(GraphT<S>& g, const TensorT<S>& f, const std::string& prefix) const {
        TensorT<S> avg = pool_channels(g, f, PoolKind::avg);
        TensorT<S> mx = pool_channels(g, f, PoolKind::max);
        TensorT<S> cat = concat(g, {avg, mx}, 1); // [L, 2]
        TensorT<S> t = conv1d(g, cat, params_.at(prefix + ".ta.conv.w"), params_.at(prefix + ".ta.conv.b"),
                              1, 1, Pad::same);
        return sigmoid(g, t); // [L, 1], broadcast along channels on application
    }

    TensorT<S> adapter_forward(GraphT<S>& g, const TensorT<S>& f, const std::string& prefix) const {
        TensorT<S> h = linear(g, f, params_.at(prefix + ".adapter.w0.w"), params_.at(prefix + ".adapter.w0.b"));
        h = linear(g, h, params_.at(prefix + ".adapter.w1.w"), params_.at(prefix + ".adapter.w1.b"));
        return add(g, f, h);
    }

    // Four bottleneck branches, dropout + layer norm + fused linear, channel
    // then temporal attention, residual connection back to the block input.
    TensorT<S> d_inception_forward(GraphT<S>& g, const TensorT<S>& x, const std::string& prefix, int s,
                                   Rng& rng, bool adapters_enabled) const {
        TensorT<S> b1 = conv1d(g, x, params_.at(prefix + ".b1.conv1.w"), params_.at(prefix + ".b1.conv1.b"),
                               1, 1, Pad::same);
        TensorT<S> b2 = conv1d(g, x, params_.at(prefix + ".b2.conv1.w"), params_.at(prefix + ".b2.conv1.b"),
                               1, 1, Pad::same);
        b2 = conv1d(g, b2, params_.at(prefix + ".b2.convs.w"), params_.at(prefix + ".b2.convs.b"),
                    1, 1, Pad::same);
        TensorT<S> b3 = conv1d(g, x, params_.at(prefix + ".b3.conv1.w"), params_.at(prefix + ".b3.conv1.b"),
                               1, 1, Pad::same);
        b3 = conv1d(g, b3, params_.at(prefix + ".b3.dconvs.w"), params_.at(prefix + ".b3.dconvs.b"),
                    1, 2, Pad::same);
        TensorT<S> b4 = maxpool1d(g, x, s, 1, Pad::same);
        b4 = conv1d(g, b4, params_.at(prefix + ".b4.conv1.w"), params_.at(prefix + ".b4.conv1.b"),
                    1, 1, Pad::same);
        TensorT<S> f = concat(g, {b1, b2, b3, b4}, 1);
        f = dropout(g, f, cfg_.dropout_p, rng);
        f = layer_norm(g, f, params_.at(prefix + ".ln.gamma"), params_.at(prefix + ".ln.beta"),
                       S(kLayerNormEps));
        f = linear(g, f, params_.at(prefix + ".fc.w"), params_.at(prefix + ".fc.b"));
        f = gelu(g, f);
        if (adapters_enabled && params_.has(prefix + ".adapter.w0.w")) f = adapter_forward(g, f, prefix);
        TensorT<S> mc = channel_attention(g, f, prefix);
        TensorT<S> fp = mul_channels(g, f, mc);
        TensorT<S> mt = temporal_attention(g, fp, prefix);
        TensorT<S> fpp = mul_positions(g, fp, mt);
        return add(g, fpp, x);
    }

    // Non-learnable halving max-pool followed by a learnable bottleneck.
    TensorT<S> downsampling_forward(GraphT<S>& g, const TensorT<S>& x, const std::string& prefix,
                                    bool adapters_enabled) const {
        TensorT<S> h = maxpool1d(g, x, 2, 2, Pad::valid);
        h = linear(g, h, params_.at(prefix + ".w0.w"), params_.at(prefix + ".w0.b"));
        h = layer_norm(g, h, params_.at(prefix + ".ln.gamma"), params_.at(prefix + ".ln.beta"),
                       S(kLayerNormEps));
        h = linear(g, h, params_.at(prefix + ".w1.w"), params_.at(prefix + ".w1.b"));
        if (adapters_enabled && params_.has(prefix + ".adapter.w0.w")) h = adapter_forward(g, h, prefix);
        return h;
    }

    // One stream of one cut -> 2d summary (GAP then GMP).
    TensorT<S> signal_encoder_forward(GraphT<S>& g, const TensorT<S>& x, const std::string& enc,
                                      Rng& rng) const {
        const bool ad = adapters_present();
        TensorT<S> h = stem_forward(g, x, enc, rng);
        for (int i = 0; i < cfg_.stacks; ++i) {
            h = d_inception_forward(g, h, enc + ".di" + std::to_string(i), cfg_.kernel_schedule[i], rng, ad);
            h = downsampling_forward(g, h, enc + ".ds" + std::to_string(i), ad);
        }
        h = d_inception_forward(g, h, enc + ".di" + std::to_string(cfg_.stacks),
                                cfg_.kernel_schedule[cfg_.stacks], rng, ad);
        TensorT<S> avg = global_pool(g, h, PoolKind::avg);
        TensorT<S> mx = global_pool(g, h, PoolKind::max);
        return concat(g, {avg, mx}, 0);
    }

    // Per-cut hidden states [N, 4d] -> 8d. The stage-2 block runs with its
    // configured kernel under same padding, which degenerates to the shorter
    // effective kernel when N is small.
    TensorT<S> stage2_forward(GraphT<S>& g, const TensorT<S>& h_seq, Rng& rng) const {
        if (h_seq.ndim() != 2 || h_seq.shape[1] != cfg_.stage2_width())
            throw ShapeError("stage2: expected [N, 4d] hidden states");
        TensorT<S> h = d_inception_forward(g, h_seq, "stage2.di", cfg_.stage2_kernel, rng,
                                           adapters_present());
        TensorT<S> avg = global_pool(g, h, PoolKind::avg);
        TensorT<S> mx = global_pool(g, h, PoolKind::max);
        return concat(g, {avg, mx}, 0);
    }

    TensorT<S> projection_head(GraphT<S>& g, const TensorT<S>& h) const {
        return linear(g, h, params_.at("head.w"), params_.at("head.b"));
    }

    // Full two-stage pass over one workpiece's normalized cut pairs.
    TensorT<S> forward(GraphT<S>& g, const std::vector<TensorT<S>>& time_streams,
                       const std::vector<TensorT<S>>& spectral_streams, Rng& rng) const {
        if (time_streams.empty() || time_streams.size() != spectral_streams.size())
            throw DataError("forward: need matching, nonzero cut streams");
        if (static_cast<int>(time_streams.size()) > cfg_.max_cuts)
            throw DataError("forward: cut count exceeds max_cuts");
        std::vector<TensorT<S>> hidden;
        hidden.reserve(time_streams.size());
        for (std::size_t n = 0; n < time_streams.size(); ++n) {
            TensorT<S> t = signal_encoder_forward(g, time_streams[n], "time", rng);
            TensorT<S> sp = signal_encoder_forward(g, spectral_streams[n], "spec", rng);
            hidden.push_back(concat(g, {t, sp}, 0));
        }
        TensorT<S> h = stack_rows(g, hidden);
        TensorT<S> z = stage2_forward(g, h, rng);
        return projection_head(g, z);
    }

private:
    ModelConfig cfg_;
    ParamStoreT<S> params_;
};

using Net = NetT<float>;

// Expected length after the stem and each downsampling for one stream.
inline std::vector<int> encoder_length_chain(const ModelConfig& cfg, int input_len) {
    std::vector<int> chain;
    int len = (input_len + 4) / 5; // stem: ceil(L/5)
    chain.push_back(len);
    for (int i = 0; i < cfg.stacks; ++i) {
        len = len / 2; // halving max-pool, valid
        chain.push_back(len);
    }
    return chain;
}

template <typename To, typename From>
TensorT<To> cast_tensor(const TensorT<From>& x) {
    TensorT<To> t = zeros<To>(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) (*t.data)[i] = static_cast<To>((*x.data)[i]);
    t.name = x.name;
    return t;
}

template <typename To, typename From>
ParamStoreT<To> cast_store(const ParamStoreT<From>& store) {
    ParamStoreT<To> out;
    out.index = store.index;
    out.tensors.reserve(store.tensors.size());
    for (const auto& t : store.tensors) out.tensors.push_back(cast_tensor<To>(t));
    return out;
}

} // namespace dm::model
