#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "errors.hpp"
#include "jsonw.hpp"
#include "metrics.hpp"
#include "numerics.hpp"
#include "rng.hpp"
#include "toygen.hpp"

namespace sg {

struct ProjectOptions {
    std::size_t max_steps = 2000;
    double lr = 0.1;
    double tol = 1e-12;       // stop once the loss falls below this
    std::uint64_t seed = 42;
    std::size_t restarts = 3;
    std::optional<std::uint32_t> cls;  // class id for conditional generators
};

struct ProjectionResult {
    std::uint32_t target_id = 0;
    Vec w_star;
    Vec loss_curve;          // feature-space squared distance per step
    double final_cosine = 0; // cosine distance between target and projection
    std::size_t steps_used = 0;
};

namespace detail {

// L(w) = ||F(G(w)) - F(target)||^2 and its exact gradient.
inline double projection_loss(const ToyGenerator& g,
                              const FeatureExtractor& extractor,
                              std::span<const double> target_features,
                              std::span<const double> w, Vec* grad_out) {
    Vec sample = synthesize(g, w);
    Vec feat = extractor.apply(sample);
    Vec resid(feat.size());
    for (std::size_t i = 0; i < feat.size(); ++i)
        resid[i] = feat[i] - target_features[i];
    double loss = dot(resid, resid);
    if (grad_out) {
        for (double& r : resid) r *= 2.0;
        Vec cot = extractor.backprop(sample, resid);
        *grad_out = grad_wrt_w(g, w, cot);
    }
    return loss;
}

}  // namespace detail

// Gradient descent on the feature reconstruction loss with a backtracking
// rule: a step that raises the loss is rejected and halves the rate; ten
// consecutive accepts restore it. Best of `restarts` runs wins, ties by
// lowest restart index.
inline ProjectionResult project(std::span<const double> target,
                                const ToyGenerator& g,
                                const FeatureExtractor& extractor,
                                const ProjectOptions& opt,
                                std::uint32_t target_id = 0) {
    if (opt.max_steps < 1)
        throw ValidationError("project: max_steps must be >= 1");
    if (target.size() != g.sample_dim)
        throw ValidationError("project: target dim mismatch");
    Vec target_features = extractor.apply(target);

    ProjectionResult best;
    double best_loss = std::numeric_limits<double>::infinity();
    for (std::size_t restart = 0; restart < opt.restarts; ++restart) {
        Prng rng(opt.seed, 0x70726f6aULL, restart);
        Vec z = rng.normal_vec(g.latent_dim);
        Vec w = mapping(g, z, opt.cls);

        Vec grad;
        double loss =
            detail::projection_loss(g, extractor, target_features, w, &grad);
        if (!std::isfinite(loss))
            throw NumericalError("project: non-finite loss at step 0");

        ProjectionResult res;
        res.target_id = target_id;
        double lr = opt.lr;
        int streak = 0;
        std::size_t step = 0;
        for (; step < opt.max_steps; ++step) {
            Vec w_try(w.size());
            for (std::size_t i = 0; i < w.size(); ++i)
                w_try[i] = w[i] - lr * grad[i];
            Vec grad_try;
            double loss_try = detail::projection_loss(
                g, extractor, target_features, w_try, &grad_try);
            if (!std::isfinite(loss_try))
                throw NumericalError("project: non-finite loss at step " +
                                     std::to_string(step + 1));
            if (loss_try < loss) {
                w = std::move(w_try);
                grad = std::move(grad_try);
                loss = loss_try;
                if (++streak >= 10) {
                    lr = opt.lr;
                    streak = 0;
                }
            } else {
                lr *= 0.5;
                streak = 0;
            }
            res.loss_curve.push_back(loss);
            if (loss < opt.tol || lr < 1e-18) {
                ++step;
                break;
            }
        }
        res.steps_used = step;
        res.w_star = w;
        if (loss < best_loss) {
            best_loss = loss;
            best = std::move(res);
        }
    }
    Vec proj_features = extractor.apply(synthesize(g, best.w_star));
    best.final_cosine = cosine_distance(target_features, proj_features);
    return best;
}

struct BatchProjection {
    std::vector<ProjectionResult> results;  // ordered by input index
    DistanceStats stats;
    std::vector<std::pair<std::size_t, std::string>> failures;
};

// Projects every row of `targets`; individual failures are recorded and the
// batch continues unless more than half fail.
inline BatchProjection batch_project(const EmbeddingSet& targets,
                                     const ToyGenerator& g,
                                     const FeatureExtractor& extractor,
                                     const ProjectOptions& opt) {
    BatchProjection out;
    std::vector<FeaturePair> pairs;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        Vec t = targets.row_double(i);
        ProjectOptions o = opt;
        o.seed = opt.seed + i;  // independent restart streams per target
        try {
            ProjectionResult r = project(t, g, extractor, o, targets.ids[i]);
            FeaturePair fp;
            fp.id = targets.ids[i];
            fp.real = extractor.apply(t);
            fp.projected = extractor.apply(synthesize(g, r.w_star));
            pairs.push_back(std::move(fp));
            out.results.push_back(std::move(r));
        } catch (const std::exception& e) {
            out.failures.emplace_back(i, e.what());
        }
    }
    if (out.failures.size() * 2 > targets.size())
        throw NumericalError("batch_project: " +
                             std::to_string(out.failures.size()) + " of " +
                             std::to_string(targets.size()) +
                             " projections failed");
    out.stats = distance_stats(pairs);
    return out;
}

// n latent vectors at exact L2 distance `radius` from w, uniformly random
// directions.
inline std::vector<Vec> generate_neighbors(std::span<const double> w,
                                           std::size_t n, double radius,
                                           std::uint64_t seed) {
    if (n < 1) throw ValidationError("generate_neighbors: n must be >= 1");
    if (!(radius > 0.0))
        throw ValidationError("generate_neighbors: radius must be > 0");
    Prng rng(seed, 0x6e656967685fULL);
    std::vector<Vec> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec dir = rng.normal_vec(w.size());
        double nrm = norm2(dir);
        while (nrm <= 1e-12) {
            dir = rng.normal_vec(w.size());
            nrm = norm2(dir);
        }
        Vec v(w.size());
        for (std::size_t j = 0; j < w.size(); ++j)
            v[j] = w[j] + radius * dir[j] / nrm;
        out.push_back(std::move(v));
    }
    return out;
}

inline void projection_to_json(JsonWriter& w, const ProjectionResult& r) {
    w.begin_object();
    w.kv("target_id", std::uint64_t(r.target_id));
    w.key("w_star");
    w.number_array(r.w_star);
    w.kv("final_loss", r.loss_curve.back());
    w.kv("final_cosine", r.final_cosine);
    w.kv("steps_used", std::uint64_t(r.steps_used));
    w.end_object();
}

inline std::string batch_to_json(const BatchProjection& b) {
    JsonWriter w;
    w.begin_object();
    w.key("results");
    w.begin_array();
    for (const auto& r : b.results) projection_to_json(w, r);
    w.end_array();
    w.key("distance_stats");
    distance_stats_to_json(w, b.stats);
    w.key("failures");
    w.begin_array();
    for (const auto& [idx, msg] : b.failures) {
        w.begin_object();
        w.kv("index", std::uint64_t(idx));
        w.kv("error", msg);
        w.end_object();
    }
    w.end_array();
    w.end_object();
    return w.take();
}

}  // namespace sg
