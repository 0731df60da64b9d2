#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "synthgauge/projector.hpp"
#include "synthgauge/rng.hpp"

using namespace sg;

namespace {

// Targets drawn from the generator itself, so a perfect projection exists.
Vec generated_target(const ToyGenerator& g, std::uint64_t seed) {
    Prng rng(seed, 0x746172676574ULL);
    Vec z = rng.normal_vec(g.latent_dim);
    return synthesize(g, mapping(g, z));
}

}  // namespace

TEST_CASE("project recovers generator-produced targets") {
    ToyGenerator g = new_generator(42, 6, 10, false);
    FeatureExtractor ex = FeatureExtractor::make_identity(10);
    ProjectOptions opt;
    opt.max_steps = 2000;
    opt.lr = 1.0;  // small generator is stiffer than the default-size one
    for (std::uint64_t s = 1; s <= 5; ++s) {
        Vec target = generated_target(g, s);
        ProjectionResult r = project(target, g, ex, opt);
        CHECK(r.loss_curve.back() < 1e-6);
        // self-inversion oracle: the synthesized projection reproduces the
        // target sample itself
        Vec back = synthesize(g, r.w_star);
        CHECK(std::sqrt(sq_dist(back, target)) < 1e-3);
        CHECK(r.final_cosine < 1e-6);
    }
}

TEST_CASE("project is deterministic in seed") {
    ToyGenerator g = new_generator(7, 4, 8, false);
    FeatureExtractor ex = FeatureExtractor::make_random(8, 6, 7);
    Vec target = generated_target(g, 3);
    ProjectOptions opt;
    opt.max_steps = 200;
    ProjectionResult a = project(target, g, ex, opt);
    ProjectionResult b = project(target, g, ex, opt);
    CHECK(a.w_star == b.w_star);
    CHECK(a.loss_curve == b.loss_curve);
    opt.seed = 43;
    ProjectionResult c = project(target, g, ex, opt);
    CHECK(a.w_star != c.w_star);
}

TEST_CASE("project max_steps=1 produces one curve entry") {
    ToyGenerator g = new_generator(5, 4, 8, false);
    FeatureExtractor ex = FeatureExtractor::make_identity(8);
    Vec target = generated_target(g, 9);
    ProjectOptions opt;
    opt.max_steps = 1;
    ProjectionResult r = project(target, g, ex, opt);
    CHECK(r.loss_curve.size() == 1);
    CHECK(r.steps_used == 1);
    CHECK_THROWS_AS(
        [&] {
            ProjectOptions bad;
            bad.max_steps = 0;
            return project(target, g, ex, bad);
        }(),
        ValidationError);
}

TEST_CASE("recorded loss never increases") {
    ToyGenerator g = new_generator(13, 5, 9, false);
    FeatureExtractor ex = FeatureExtractor::make_random(9, 7, 13);
    Vec target = generated_target(g, 4);
    ProjectOptions opt;
    opt.max_steps = 500;
    ProjectionResult r = project(target, g, ex, opt);
    for (std::size_t i = 1; i < r.loss_curve.size(); ++i)
        CHECK(r.loss_curve[i] <= r.loss_curve[i - 1]);
}

TEST_CASE("projection loss gradient matches finite differences") {
    ToyGenerator g = new_generator(19, 5, 7, false);
    FeatureExtractor ex = FeatureExtractor::make_random(7, 6, 19);
    Vec target = generated_target(g, 2);
    Vec tf = ex.apply(target);
    Prng rng(8);
    const double h = 1e-6;
    for (int probe = 0; probe < 20; ++probe) {
        Vec w = rng.normal_vec(5);
        Vec grad;
        detail::projection_loss(g, ex, tf, w, &grad);
        for (std::size_t i = 0; i < w.size(); ++i) {
            Vec wp = w, wm = w;
            wp[i] += h;
            wm[i] -= h;
            double fd = (detail::projection_loss(g, ex, tf, wp, nullptr) -
                         detail::projection_loss(g, ex, tf, wm, nullptr)) /
                        (2 * h);
            CHECK(std::abs(grad[i] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("project validates target dimension") {
    ToyGenerator g = new_generator(3, 4, 8, false);
    FeatureExtractor ex = FeatureExtractor::make_identity(8);
    Vec bad(7, 0.0);
    CHECK_THROWS_AS(project(bad, g, ex, ProjectOptions{}), ValidationError);
}

TEST_CASE("generate_neighbors places points at the exact radius") {
    Prng rng(31);
    Vec w = rng.normal_vec(6);
    const double radius = 0.75;
    auto nb = generate_neighbors(w, 40, radius, 11);
    CHECK(nb.size() == 40);
    Vec mean(6, 0.0);
    for (const Vec& v : nb) {
        CHECK(std::abs(std::sqrt(sq_dist(v, w)) - radius) < 1e-12);
        for (std::size_t j = 0; j < 6; ++j) mean[j] += v[j] - w[j];
    }
    // directions are isotropic: displacement mean stays near zero
    for (double m : mean) CHECK(std::abs(m / 40.0) < 0.5);

    auto again = generate_neighbors(w, 40, radius, 11);
    CHECK(nb == again);
    CHECK_THROWS_AS(generate_neighbors(w, 0, 1.0, 1), ValidationError);
    CHECK_THROWS_AS(generate_neighbors(w, 1, 0.0, 1), ValidationError);
}

TEST_CASE("batch_project keeps input order and aggregates stats") {
    ToyGenerator g = new_generator(42, 5, 8, false);
    FeatureExtractor ex = FeatureExtractor::make_identity(8);
    EmbeddingSet targets;
    targets.dim = 8;
    for (std::uint32_t i = 0; i < 6; ++i)
        targets.push_row(generated_target(g, 100 + i), 0, 500 + i);

    ProjectOptions opt;
    opt.max_steps = 800;
    BatchProjection b = batch_project(targets, g, ex, opt);
    CHECK(b.failures.empty());
    REQUIRE(b.results.size() == 6);
    for (std::uint32_t i = 0; i < 6; ++i)
        CHECK(b.results[i].target_id == 500 + i);
    CHECK(b.stats.count == 6);
    CHECK(b.stats.min >= 0.0);

    // stats equal a direct recomputation from the per-target results
    std::vector<FeaturePair> pairs;
    for (std::size_t i = 0; i < 6; ++i)
        pairs.push_back({b.results[i].target_id, ex.apply(targets.row_double(i)),
                         ex.apply(synthesize(g, b.results[i].w_star))});
    DistanceStats direct = distance_stats(pairs);
    CHECK(b.stats.mean == direct.mean);
    CHECK(b.stats.median == direct.median);

    std::string json = batch_to_json(b);
    CHECK(json == batch_to_json(b));
    CHECK(json.find("\"target_id\":500") != std::string::npos);
}
