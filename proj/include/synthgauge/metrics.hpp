#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dataio.hpp"
#include "errors.hpp"
#include "jsonw.hpp"
#include "numerics.hpp"
#include "rng.hpp"
#include "toygen.hpp"

namespace sg {

// Fixed map from sample space to feature space. Stands in for the big
// pretrained extractor; identity mode exists for closed-form tests.
struct FeatureExtractor {
    AffineLayer layer;   // unused in identity mode
    bool identity = true;
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;

    static FeatureExtractor make_identity(std::size_t dim) {
        FeatureExtractor f;
        f.identity = true;
        f.in_dim = dim;
        f.out_dim = dim;
        return f;
    }

    static FeatureExtractor make_random(std::size_t in, std::size_t out,
                                        std::uint64_t seed) {
        FeatureExtractor f;
        f.identity = false;
        f.in_dim = in;
        f.out_dim = out;
        f.layer = detail::init_layer(out, in, seed, 77);
        return f;
    }

    Vec apply(std::span<const double> x) const {
        if (x.size() != in_dim)
            throw ValidationError("FeatureExtractor: input dim mismatch");
        if (identity) return Vec(x.begin(), x.end());
        return layer.forward(x);
    }

    // Vector-Jacobian product at x.
    Vec backprop(std::span<const double> x, std::span<const double> u) const {
        if (identity) return Vec(u.begin(), u.end());
        Vec out = layer.forward(x);
        Vec v(u.begin(), u.end());
        if (!layer.linear)
            for (std::size_t i = 0; i < v.size(); ++i)
                v[i] *= (1.0 - out[i] * out[i]);
        return layer.w.mul_t(v);
    }
};

struct DistanceStats {
    double mean = 0, median = 0, q1 = 0, q3 = 0, min = 0, max = 0;
    std::size_t count = 0;
    std::vector<std::uint32_t> flagged_close;
};

struct MetricReport {
    std::string scenario;
    double kid_mean = 0, kid_std = 0;
    double fid = 0;
    double precision = 0, recall = 0;
    double ppl = 0;
    double authenticity = 0;
    std::optional<DistanceStats> distance_stats;
};

// --- FID --------------------------------------------------------------------

// ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^{1/2}), with the cross term
// computed as sqrtm(S_r^{1/2} S_g S_r^{1/2}) so every square root sees an SPD
// matrix.
inline double fid(const EmbeddingSet& real, const EmbeddingSet& gen) {
    if (real.dim != gen.dim)
        throw ValidationError("fid: dimension mismatch");
    if (real.size() < 2 || gen.size() < 2)
        throw ValidationError("fid: need at least 2 samples per set");
    auto [mu_r, cov_r] = mean_cov(real.as_matrix());
    auto [mu_g, cov_g] = mean_cov(gen.as_matrix());

    double d2 = 0.0;
    for (std::size_t i = 0; i < mu_r.size(); ++i) {
        double d = mu_r[i] - mu_g[i];
        d2 += d * d;
    }
    SymMatrix s = sqrtm_spd(cov_r);
    Matrix inner = s.as_matrix().matmul(cov_g.as_matrix()).matmul(s.as_matrix());
    // symmetrize away matmul roundoff before the PSD root
    for (std::size_t i = 0; i < inner.rows; ++i)
        for (std::size_t j = i + 1; j < inner.cols; ++j) {
            double v = 0.5 * (inner(i, j) + inner(j, i));
            inner(i, j) = v;
            inner(j, i) = v;
        }
    SymMatrix cross = sqrtm_spd(SymMatrix::from_matrix(inner, 1e-6));
    double val = d2 + cov_r.trace() + cov_g.trace() - 2.0 * cross.trace();
    return std::max(val, 0.0);
}

// --- KID --------------------------------------------------------------------

namespace detail {

inline double poly3_kernel(std::span<const double> x, std::span<const double> y) {
    double v = dot(x, y) / double(x.size()) + 1.0;
    return v * v * v;
}

// Unbiased MMD^2 with the degree-3 polynomial kernel on one block pair.
inline double unbiased_mmd2(const Matrix& x, const Matrix& y) {
    const std::size_t m = x.rows, n = y.rows;
    std::vector<double> xx, yy, xy;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
            if (i != j) xx.push_back(poly3_kernel(x.row(i), x.row(j)));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j) yy.push_back(poly3_kernel(y.row(i), y.row(j)));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            xy.push_back(poly3_kernel(x.row(i), y.row(j)));
    return pairwise_sum(xx) / double(m * (m - 1)) +
           pairwise_sum(yy) / double(n * (n - 1)) -
           2.0 * pairwise_sum(xy) / double(m * n);
}

inline Matrix take_rows(const Matrix& src, std::span<const std::size_t> idx) {
    Matrix out(idx.size(), src.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
        std::copy(src.row(idx[i]).begin(), src.row(idx[i]).end(),
                  out.row(i).begin());
    return out;
}

}  // namespace detail

// Block estimator: disjoint blocks while samples last, reshuffling when a
// pass over either set is exhausted.
inline std::pair<double, double> kid(const EmbeddingSet& real,
                                     const EmbeddingSet& gen,
                                     std::size_t block_size,
                                     std::size_t n_blocks, std::uint64_t seed) {
    if (real.dim != gen.dim) throw ValidationError("kid: dimension mismatch");
    if (block_size < 2) throw ValidationError("kid: block_size must be >= 2");
    if (block_size > real.size() || block_size > gen.size())
        throw ValidationError("kid: block_size " + std::to_string(block_size) +
                              " exceeds a set size");
    if (n_blocks < 1) throw ValidationError("kid: n_blocks must be >= 1");

    Matrix xr = real.as_matrix(), xg = gen.as_matrix();
    Prng rng(seed, 0x6b6964ULL);
    std::vector<std::size_t> perm_r = rng.permutation(real.size());
    std::vector<std::size_t> perm_g = rng.permutation(gen.size());
    std::size_t pos_r = 0, pos_g = 0;

    std::vector<double> vals;
    for (std::size_t b = 0; b < n_blocks; ++b) {
        if (pos_r + block_size > perm_r.size()) {
            perm_r = rng.permutation(real.size());
            pos_r = 0;
        }
        if (pos_g + block_size > perm_g.size()) {
            perm_g = rng.permutation(gen.size());
            pos_g = 0;
        }
        Matrix br = detail::take_rows(
            xr, std::span(perm_r).subspan(pos_r, block_size));
        Matrix bg = detail::take_rows(
            xg, std::span(perm_g).subspan(pos_g, block_size));
        pos_r += block_size;
        pos_g += block_size;
        vals.push_back(detail::unbiased_mmd2(br, bg));
    }
    double mean = pairwise_sum(vals) / double(vals.size());
    double sd = 0.0;
    if (vals.size() > 1) {
        std::vector<double> sq(vals.size());
        for (std::size_t i = 0; i < vals.size(); ++i) {
            double d = vals[i] - mean;
            sq[i] = d * d;
        }
        sd = std::sqrt(pairwise_sum(sq) / double(vals.size() - 1));
    }
    return {mean, sd};
}

// --- improved precision / recall -------------------------------------------

// A sample is covered by a manifold when it falls inside the ball of radius
// "distance to k-th neighbor" around any point of the other set.
inline double manifold_coverage(const Matrix& manifold_pts,
                                const Matrix& probes, std::size_t k) {
    Vec radii = knn_distance(manifold_pts, manifold_pts, k, Metric::euclidean,
                             /*self_query=*/true);
    std::size_t covered = 0;
    for (std::size_t p = 0; p < probes.rows; ++p) {
        for (std::size_t i = 0; i < manifold_pts.rows; ++i) {
            double d = std::sqrt(sq_dist(manifold_pts.row(i), probes.row(p)));
            if (d <= radii[i]) {
                ++covered;
                break;
            }
        }
    }
    return probes.rows == 0 ? 0.0 : double(covered) / double(probes.rows);
}

inline std::pair<double, double> precision_recall(const EmbeddingSet& real,
                                                  const EmbeddingSet& gen,
                                                  std::size_t k) {
    if (real.dim != gen.dim)
        throw ValidationError("precision_recall: dimension mismatch");
    if (k >= real.size() || k >= gen.size())
        throw ValidationError("precision_recall: k=" + std::to_string(k) +
                              " must be < both set sizes");
    Matrix xr = real.as_matrix(), xg = gen.as_matrix();
    double p = manifold_coverage(xr, xg, k);
    double r = manifold_coverage(xg, xr, k);
    return {p, r};
}

// --- PPL --------------------------------------------------------------------

enum class Interp { lerp_w, slerp_z };

// E[(1/eps^2) * ||F(G(interp(t))) - F(G(interp(t+eps)))||^2] over random
// endpoint pairs and t ~ U(0,1).
inline double ppl(const ToyGenerator& g, const FeatureExtractor& extractor,
                  std::size_t n_paths, double epsilon, Interp interp,
                  std::uint64_t seed,
                  std::optional<std::uint32_t> cls = std::nullopt) {
    if (n_paths < 1) throw ValidationError("ppl: n_paths must be >= 1");
    if (!(epsilon > 0.0)) throw ValidationError("ppl: epsilon must be > 0");
    Prng rng(seed, 0x70706cULL);
    std::vector<double> terms(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) {
        Vec z1 = rng.normal_vec(g.latent_dim);
        Vec z2 = rng.normal_vec(g.latent_dim);
        double t = rng.uniform();
        Vec wa, wb;
        if (interp == Interp::lerp_w) {
            Vec w1 = mapping(g, z1, cls);
            Vec w2 = mapping(g, z2, cls);
            wa.resize(w1.size());
            wb.resize(w1.size());
            for (std::size_t i = 0; i < w1.size(); ++i) {
                wa[i] = w1[i] + t * (w2[i] - w1[i]);
                wb[i] = w1[i] + (t + epsilon) * (w2[i] - w1[i]);
            }
        } else {
            auto slerp = [&](double tt) {
                double n1 = norm2(z1), n2 = norm2(z2);
                double c = dot(z1, z2) / std::max(n1 * n2, 1e-300);
                c = std::clamp(c, -1.0, 1.0);
                double omega = std::acos(c);
                Vec z(z1.size());
                if (omega < 1e-9) {
                    for (std::size_t i = 0; i < z.size(); ++i)
                        z[i] = z1[i] + tt * (z2[i] - z1[i]);
                } else {
                    double s = std::sin(omega);
                    double a = std::sin((1.0 - tt) * omega) / s;
                    double b = std::sin(tt * omega) / s;
                    for (std::size_t i = 0; i < z.size(); ++i)
                        z[i] = a * z1[i] + b * z2[i];
                }
                return z;
            };
            wa = mapping(g, slerp(t), cls);
            wb = mapping(g, slerp(t + epsilon), cls);
        }
        Vec fa = extractor.apply(synthesize(g, wa));
        Vec fb = extractor.apply(synthesize(g, wb));
        terms[p] = sq_dist(fa, fb) / (epsilon * epsilon);
    }
    return pairwise_sum(terms) / double(n_paths);
}

// --- authenticity -----------------------------------------------------------

struct AuthenticityResult {
    double score = 1.0;
    std::vector<bool> memorized;  // one flag per generated sample
};

// A generated sample is memorized when it sits closer to its nearest training
// point than that point's own nearest training neighbor (strict inequality).
inline AuthenticityResult authenticity(const EmbeddingSet& train,
                                       const EmbeddingSet& gen) {
    if (train.dim != gen.dim)
        throw ValidationError("authenticity: dimension mismatch");
    if (train.size() < 2)
        throw ValidationError("authenticity: need >= 2 training samples");
    Matrix xt = train.as_matrix(), xg = gen.as_matrix();
    Vec nn_train = knn_distance(xt, xt, 1, Metric::euclidean, true);
    AuthenticityResult res;
    res.memorized.resize(gen.size(), false);
    std::size_t flagged = 0;
    for (std::size_t s = 0; s < gen.size(); ++s) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < train.size(); ++i) {
            double d = std::sqrt(sq_dist(xt.row(i), xg.row(s)));
            if (d < best) {
                best = d;
                best_i = i;
            }
        }
        if (best < nn_train[best_i]) {
            res.memorized[s] = true;
            ++flagged;
        }
    }
    res.score = gen.size() == 0
                    ? 1.0
                    : 1.0 - double(flagged) / double(gen.size());
    return res;
}

// --- projection distance statistics ----------------------------------------

// Type-7 quantile (linear interpolation) of sorted data.
inline double quantile_type7(const Vec& sorted, double p) {
    if (sorted.empty()) throw ValidationError("quantile of empty data");
    double h = double(sorted.size() - 1) * p;
    std::size_t lo = std::size_t(std::floor(h));
    std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - double(lo)) * (sorted[hi] - sorted[lo]);
}

struct FeaturePair {
    std::uint32_t id = 0;
    Vec real;
    Vec projected;
};

// Distances between real features and their projections. close_threshold
// defaults to the computed Q1 when not given.
inline DistanceStats distance_stats(
    const std::vector<FeaturePair>& pairs,
    std::optional<double> close_threshold = std::nullopt,
    Metric metric = Metric::cosine) {
    if (pairs.empty())
        throw ValidationError("distance_stats: need at least one pair");
    Vec d(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        try {
            d[i] = pair_distance(pairs[i].real, pairs[i].projected, metric);
        } catch (const DomainError&) {
            throw DomainError("distance_stats: zero-norm vector in pair id " +
                              std::to_string(pairs[i].id));
        }
    }
    Vec sorted = d;
    std::sort(sorted.begin(), sorted.end());
    DistanceStats s;
    s.count = d.size();
    s.mean = pairwise_sum(d) / double(d.size());
    s.min = sorted.front();
    s.max = sorted.back();
    s.q1 = quantile_type7(sorted, 0.25);
    s.median = quantile_type7(sorted, 0.5);
    s.q3 = quantile_type7(sorted, 0.75);
    double thr = close_threshold.value_or(s.q1);
    for (std::size_t i = 0; i < pairs.size(); ++i)
        if (d[i] < thr) s.flagged_close.push_back(pairs[i].id);
    return s;
}

// --- aggregate report -------------------------------------------------------

inline MetricReport evaluate_all(const EmbeddingSet& real,
                                 const EmbeddingSet& gen,
                                 const ToyGenerator& g,
                                 const FeatureExtractor& extractor,
                                 const PipelineConfig& cfg,
                                 const std::string& scenario = "default") {
    MetricReport r;
    r.scenario = scenario;
    auto annotate = [](const char* name, auto&& fn) {
        try {
            return fn();
        } catch (const ValidationError& e) {
            throw ValidationError(std::string(name) + ": " + e.what());
        } catch (const NumericalError& e) {
            throw NumericalError(std::string(name) + ": " + e.what());
        }
    };
    r.fid = annotate("fid", [&] { return fid(real, gen); });
    auto [km, ks] = annotate("kid", [&] {
        return kid(real, gen, cfg.kid_block, cfg.kid_blocks, cfg.seed);
    });
    r.kid_mean = km;
    r.kid_std = ks;
    auto [p, rec] = annotate("precision_recall", [&] {
        return precision_recall(real, gen, cfg.k);
    });
    r.precision = p;
    r.recall = rec;
    r.ppl = annotate("ppl", [&] {
        return ppl(g, extractor, cfg.ppl_paths, cfg.ppl_epsilon,
                   Interp::lerp_w, cfg.seed,
                   g.conditional() ? std::optional<std::uint32_t>(0)
                                   : std::nullopt);
    });
    r.authenticity =
        annotate("authenticity", [&] { return authenticity(real, gen).score; });
    return r;
}

inline void distance_stats_to_json(JsonWriter& w, const DistanceStats& s) {
    w.begin_object();
    w.kv("mean", s.mean);
    w.kv("median", s.median);
    w.kv("q1", s.q1);
    w.kv("q3", s.q3);
    w.kv("min", s.min);
    w.kv("max", s.max);
    w.kv("count", std::uint64_t(s.count));
    w.key("flagged_close");
    w.begin_array();
    for (auto id : s.flagged_close) w.value(std::uint64_t(id));
    w.end_array();
    w.end_object();
}

inline std::string report_to_json(const MetricReport& r) {
    JsonWriter w;
    w.begin_object();
    w.kv("scenario", r.scenario);
    w.kv("kid_mean", r.kid_mean);
    w.kv("kid_std", r.kid_std);
    w.kv("fid", r.fid);
    w.kv("precision", r.precision);
    w.kv("recall", r.recall);
    w.kv("ppl", r.ppl);
    w.kv("authenticity", r.authenticity);
    w.key("distance_stats");
    if (r.distance_stats)
        distance_stats_to_json(w, *r.distance_stats);
    else
        w.null_value();
    w.end_object();
    return w.take();
}

}  // namespace sg
