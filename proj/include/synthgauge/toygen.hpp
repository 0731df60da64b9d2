#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dataio.hpp"
#include "errors.hpp"
#include "jsonw.hpp"
#include "numerics.hpp"
#include "rng.hpp"

namespace sg {

// Affine layer with an optional tanh. Identity activation exists so tests can
// build exactly-linear networks.
struct AffineLayer {
    Matrix w;  // out x in
    Vec b;     // out
    bool linear = false;

    std::size_t in_dim() const { return w.cols; }
    std::size_t out_dim() const { return w.rows; }

    Vec forward(std::span<const double> x) const {
        Vec y = w.mul(x);
        for (std::size_t i = 0; i < y.size(); ++i) {
            y[i] += b[i];
            if (!linear) y[i] = std::tanh(y[i]);
        }
        return y;
    }
};

// Seeded two-stage generator: mapping z -> w, synthesis w -> sample, with an
// optional per-class additive embedding in w-space.
struct ToyGenerator {
    std::uint32_t latent_dim = 0;
    std::uint32_t sample_dim = 0;
    std::uint64_t seed = 0;
    AffineLayer mapping;                  // latent -> latent
    std::vector<AffineLayer> synthesis;   // latent -> sample -> sample
    std::vector<Vec> class_embeddings;    // empty in unconditional mode

    bool conditional() const { return !class_embeddings.empty(); }

    void validate() const {
        if (latent_dim == 0 || sample_dim == 0)
            throw ValidationError("ToyGenerator: zero dimension");
        if (mapping.in_dim() != latent_dim || mapping.out_dim() != latent_dim)
            throw ValidationError("ToyGenerator: mapping shape mismatch");
        std::size_t d = latent_dim;
        for (const auto& l : synthesis) {
            if (l.in_dim() != d)
                throw ValidationError("ToyGenerator: synthesis chain mismatch");
            d = l.out_dim();
        }
        if (d != sample_dim)
            throw ValidationError("ToyGenerator: synthesis output dim mismatch");
        for (const auto& e : class_embeddings)
            if (e.size() != latent_dim)
                throw ValidationError("ToyGenerator: embedding dim mismatch");
    }
};

namespace detail {

// Glorot-style uniform init from a dedicated counter stream, so layer layout
// changes never shift another module's draws.
inline AffineLayer init_layer(std::size_t out, std::size_t in,
                              std::uint64_t seed, std::uint64_t layer_tag) {
    AffineLayer l;
    l.w = Matrix(out, in);
    l.b = Vec(out, 0.0);
    double a = std::sqrt(6.0 / double(in + out));
    Prng rng(seed, 0x746f7947656e31ULL, layer_tag);
    for (auto& v : l.w.a) v = rng.uniform(-a, a);
    return l;
}

}  // namespace detail

inline ToyGenerator new_generator(std::uint64_t seed, std::uint32_t latent_dim,
                                  std::uint32_t sample_dim, bool conditional,
                                  std::uint32_t n_classes = 2) {
    if (latent_dim == 0 || sample_dim == 0)
        throw ValidationError("new_generator: dimensions must be positive");
    ToyGenerator g;
    g.latent_dim = latent_dim;
    g.sample_dim = sample_dim;
    g.seed = seed;
    g.mapping = detail::init_layer(latent_dim, latent_dim, seed, 0);
    g.synthesis.push_back(detail::init_layer(sample_dim, latent_dim, seed, 1));
    g.synthesis.push_back(detail::init_layer(sample_dim, sample_dim, seed, 2));
    if (conditional) {
        Prng rng(seed, 0x746f7947656e31ULL, 1000);
        for (std::uint32_t c = 0; c < n_classes; ++c) {
            Vec e(latent_dim);
            for (auto& v : e) v = 0.5 * rng.normal();
            g.class_embeddings.push_back(std::move(e));
        }
    }
    g.validate();
    return g;
}

inline ToyGenerator new_generator(const PipelineConfig& cfg, bool conditional) {
    return new_generator(cfg.seed, cfg.latent_dim, cfg.sample_dim, conditional);
}

inline Vec mapping(const ToyGenerator& g, std::span<const double> z,
                   std::optional<std::uint32_t> cls = std::nullopt) {
    if (z.size() != g.latent_dim)
        throw ValidationError("mapping: latent dim mismatch");
    if (g.conditional() != cls.has_value())
        throw ValidationError(g.conditional()
                                  ? "mapping: conditional generator needs a class id"
                                  : "mapping: unconditional generator takes no class id");
    if (cls && *cls >= g.class_embeddings.size())
        throw ValidationError("mapping: class id out of range");
    Vec w = g.mapping.forward(z);
    if (cls)
        for (std::size_t i = 0; i < w.size(); ++i)
            w[i] += g.class_embeddings[*cls][i];
    return w;
}

inline Vec synthesize(const ToyGenerator& g, std::span<const double> w) {
    if (w.size() != g.latent_dim)
        throw ValidationError("synthesize: latent dim mismatch");
    Vec x(w.begin(), w.end());
    for (const auto& l : g.synthesis) x = l.forward(x);
    return x;
}

// Exact reverse-mode gradient of <synthesize(w), cotangent> w.r.t. w.
inline Vec grad_wrt_w(const ToyGenerator& g, std::span<const double> w,
                      std::span<const double> cotangent) {
    if (w.size() != g.latent_dim)
        throw ValidationError("grad_wrt_w: latent dim mismatch");
    if (cotangent.size() != g.sample_dim)
        throw ValidationError("grad_wrt_w: cotangent dim mismatch");
    std::vector<Vec> acts;  // acts[0] = w, acts[i] = output of layer i-1
    acts.emplace_back(w.begin(), w.end());
    for (const auto& l : g.synthesis) acts.push_back(l.forward(acts.back()));

    Vec u(cotangent.begin(), cotangent.end());
    for (std::size_t li = g.synthesis.size(); li-- > 0;) {
        const AffineLayer& l = g.synthesis[li];
        const Vec& out = acts[li + 1];
        if (!l.linear)
            for (std::size_t i = 0; i < u.size(); ++i)
                u[i] *= (1.0 - out[i] * out[i]);
        u = l.w.mul_t(u);
    }
    return u;
}

// --- flat parameter view (fedsim trains through this) -----------------------

inline std::size_t param_count(const ToyGenerator& g) {
    std::size_t n = g.mapping.w.a.size() + g.mapping.b.size();
    for (const auto& l : g.synthesis) n += l.w.a.size() + l.b.size();
    for (const auto& e : g.class_embeddings) n += e.size();
    return n;
}

inline Vec get_params(const ToyGenerator& g) {
    Vec p;
    p.reserve(param_count(g));
    auto app = [&](const Vec& v) { p.insert(p.end(), v.begin(), v.end()); };
    app(g.mapping.w.a);
    app(g.mapping.b);
    for (const auto& l : g.synthesis) {
        app(l.w.a);
        app(l.b);
    }
    for (const auto& e : g.class_embeddings) app(e);
    return p;
}

inline void set_params(ToyGenerator& g, std::span<const double> p) {
    if (p.size() != param_count(g))
        throw ValidationError("set_params: length mismatch");
    std::size_t off = 0;
    auto take = [&](Vec& v) {
        std::copy(p.begin() + long(off), p.begin() + long(off + v.size()),
                  v.begin());
        off += v.size();
    };
    take(g.mapping.w.a);
    take(g.mapping.b);
    for (auto& l : g.synthesis) {
        take(l.w.a);
        take(l.b);
    }
    for (auto& e : g.class_embeddings) take(e);
}

// Accumulates d<G(z), cotangent>/dparams into grad (same layout as
// get_params), running z through mapping and synthesis.
inline void backprop_params(const ToyGenerator& g, std::span<const double> z,
                            std::optional<std::uint32_t> cls,
                            std::span<const double> cotangent,
                            std::span<double> grad) {
    if (grad.size() != param_count(g))
        throw ValidationError("backprop_params: grad length mismatch");
    // forward with caches
    Vec w = mapping(g, z, cls);
    std::vector<Vec> acts;
    acts.push_back(w);
    for (const auto& l : g.synthesis) acts.push_back(l.forward(acts.back()));

    // offsets into the flat layout
    std::size_t map_w_off = 0;
    std::size_t map_b_off = map_w_off + g.mapping.w.a.size();
    std::size_t off = map_b_off + g.mapping.b.size();
    std::vector<std::pair<std::size_t, std::size_t>> syn_off;  // (w, b)
    for (const auto& l : g.synthesis) {
        syn_off.emplace_back(off, off + l.w.a.size());
        off += l.w.a.size() + l.b.size();
    }
    std::size_t emb_off = off;

    Vec u(cotangent.begin(), cotangent.end());
    for (std::size_t li = g.synthesis.size(); li-- > 0;) {
        const AffineLayer& l = g.synthesis[li];
        const Vec& out = acts[li + 1];
        const Vec& in = acts[li];
        if (!l.linear)
            for (std::size_t i = 0; i < u.size(); ++i)
                u[i] *= (1.0 - out[i] * out[i]);
        // u is now d/d(pre-activation)
        auto [w_off, b_off] = syn_off[li];
        for (std::size_t i = 0; i < l.out_dim(); ++i) {
            grad[b_off + i] += u[i];
            for (std::size_t j = 0; j < l.in_dim(); ++j)
                grad[w_off + i * l.in_dim() + j] += u[i] * in[j];
        }
        u = l.w.mul_t(u);
    }
    // u is now the cotangent at w-space
    if (cls) {
        std::size_t e0 = emb_off + *cls * g.latent_dim;
        for (std::size_t i = 0; i < g.latent_dim; ++i) grad[e0 + i] += u[i];
    }
    Vec pre = g.mapping.w.mul(z);
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += g.mapping.b[i];
    if (!g.mapping.linear) {
        for (std::size_t i = 0; i < u.size(); ++i) {
            double t = std::tanh(pre[i]);
            u[i] *= (1.0 - t * t);
        }
    }
    for (std::size_t i = 0; i < g.mapping.out_dim(); ++i) {
        grad[map_b_off + i] += u[i];
        for (std::size_t j = 0; j < g.mapping.in_dim(); ++j)
            grad[map_w_off + i * g.mapping.in_dim() + j] += u[i] * z[j];
    }
}

// --- data distribution ------------------------------------------------------

// Per-class Gaussian in sample space: x = mean_c + factor_c * n. Desk-scale
// stand-in for the real dataset, with the same heavy class imbalance.
struct DataDistribution {
    std::vector<Vec> means;        // one per class
    std::vector<Matrix> factors;   // covariance factors, one per class
    double class_ratio = 0.02;     // fraction of class 1 (malignant)
    std::uint64_t seed = 0;

    std::size_t dim() const { return means.empty() ? 0 : means[0].size(); }

    SymMatrix covariance(std::size_t cls) const {
        const Matrix& f = factors[cls];
        Matrix c = f.matmul(f.transposed());
        return SymMatrix::from_matrix(c, 1e-9);
    }

    static DataDistribution default_for(const PipelineConfig& cfg) {
        DataDistribution d;
        d.class_ratio = cfg.class_ratio;
        d.seed = cfg.seed;
        Prng rng(cfg.seed, 0x64697374ULL);
        for (int c = 0; c < 2; ++c) {
            Vec m(cfg.sample_dim);
            for (auto& v : m) v = (c == 0 ? -0.25 : 0.25) + 0.1 * rng.normal();
            d.means.push_back(std::move(m));
            Matrix f(cfg.sample_dim, cfg.sample_dim);
            for (std::size_t i = 0; i < cfg.sample_dim; ++i) {
                f(i, i) = 0.12;
                for (std::size_t j = 0; j < i; ++j)
                    f(i, j) = 0.02 * rng.normal();
            }
            d.factors.push_back(std::move(f));
        }
        return d;
    }
};

inline Vec sample_from_class(const DataDistribution& dist, std::size_t cls,
                             Prng& rng) {
    const std::size_t d = dist.dim();
    Vec n = rng.normal_vec(d);
    Vec x = dist.factors[cls].mul(n);
    for (std::size_t i = 0; i < d; ++i) x[i] += dist.means[cls][i];
    return x;
}

// Minority (class 1) count is floor(ratio*n); the remainder is benign.
// Sets *warned when the minority rounds down to zero.
inline EmbeddingSet sample_dataset(const DataDistribution& dist, std::size_t n,
                                   std::uint64_t seed, bool* warned = nullptr) {
    if (n < 1) throw ValidationError("sample_dataset: n must be >= 1");
    std::size_t n_mal = std::size_t(std::floor(dist.class_ratio * double(n)));
    if (warned) *warned = (n_mal == 0);
    EmbeddingSet set;
    set.dim = std::uint32_t(dist.dim());
    set.source = Source::real;
    Prng rng(seed, 0x7265616c64617461ULL);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint8_t label = (i < n - n_mal) ? 0 : 1;
        Vec x = sample_from_class(dist, label, rng);
        set.push_row(x, label, std::uint32_t(i));
    }
    return set;
}

inline std::vector<Vec> sample_latents(std::size_t n, std::size_t dim,
                                       std::uint64_t seed) {
    if (n < 1) throw ValidationError("sample_latents: n must be >= 1");
    std::vector<Vec> zs;
    zs.reserve(n);
    Prng rng(seed, 0x6c6174656e74ULL);
    for (std::size_t i = 0; i < n; ++i) zs.push_back(rng.normal_vec(dim));
    return zs;
}

// --- weight serialization (golden-file support) -----------------------------

inline std::string generator_to_json(const ToyGenerator& g) {
    JsonWriter w;
    w.begin_object();
    w.kv("latent_dim", std::uint64_t(g.latent_dim));
    w.kv("sample_dim", std::uint64_t(g.sample_dim));
    w.kv("seed", std::uint64_t(g.seed));
    auto emit_layer = [&](const AffineLayer& l) {
        w.begin_object();
        w.kv("rows", std::uint64_t(l.w.rows));
        w.kv("cols", std::uint64_t(l.w.cols));
        w.kv("linear", l.linear);
        w.key("weights");
        w.number_array(l.w.a);
        w.key("bias");
        w.number_array(l.b);
        w.end_object();
    };
    w.key("mapping");
    emit_layer(g.mapping);
    w.key("synthesis");
    w.begin_array();
    for (const auto& l : g.synthesis) emit_layer(l);
    w.end_array();
    w.key("class_embeddings");
    w.begin_array();
    for (const auto& e : g.class_embeddings) w.number_array(e);
    w.end_array();
    w.end_object();
    return w.take();
}

}  // namespace sg
