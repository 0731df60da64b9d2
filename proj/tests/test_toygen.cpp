#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "synthgauge/rng.hpp"
#include "synthgauge/toygen.hpp"

using namespace sg;

namespace {

// Layer-by-layer reference evaluation, independent of the library forward
// path.
Vec manual_forward(const std::vector<AffineLayer>& layers, Vec x) {
    for (const auto& l : layers) {
        Vec y(l.out_dim(), 0.0);
        for (std::size_t i = 0; i < l.out_dim(); ++i) {
            double s = l.b[i];
            for (std::size_t j = 0; j < l.in_dim(); ++j)
                s += l.w(i, j) * x[j];
            y[i] = l.linear ? s : std::tanh(s);
        }
        x = std::move(y);
    }
    return x;
}

}  // namespace

TEST_CASE("generator construction is deterministic in seed") {
    ToyGenerator a = new_generator(42, 8, 16, false);
    ToyGenerator b = new_generator(42, 8, 16, false);
    CHECK(get_params(a) == get_params(b));
    ToyGenerator c = new_generator(43, 8, 16, false);
    CHECK(get_params(a) != get_params(c));
}

TEST_CASE("conditional generator carries one embedding per class") {
    ToyGenerator g = new_generator(42, 8, 16, true);
    CHECK(g.class_embeddings.size() == 2);
    CHECK(g.class_embeddings[0].size() == 8);
    CHECK_THROWS_AS(new_generator(42, 0, 16, false), ValidationError);
}

TEST_CASE("mapping with zero bias at z=0 gives tanh(0)=0") {
    ToyGenerator g = new_generator(1, 4, 6, false);
    Vec z(4, 0.0);
    Vec w = mapping(g, z);
    for (double v : w) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("conditional mapping differs exactly by embedding difference") {
    ToyGenerator g = new_generator(5, 6, 10, true);
    Prng rng(9);
    Vec z = rng.normal_vec(6);
    Vec w0 = mapping(g, z, 0u);
    Vec w1 = mapping(g, z, 1u);
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(w1[i] - w0[i] == doctest::Approx(g.class_embeddings[1][i] -
                                               g.class_embeddings[0][i])
                                   .epsilon(1e-12));
}

TEST_CASE("mapping class-id validation") {
    ToyGenerator u = new_generator(1, 4, 6, false);
    ToyGenerator c = new_generator(1, 4, 6, true);
    Vec z(4, 0.0);
    CHECK_THROWS_AS(mapping(u, z, 0u), ValidationError);
    CHECK_THROWS_AS(mapping(c, z), ValidationError);
    CHECK_THROWS_AS(mapping(c, z, 5u), ValidationError);
}

TEST_CASE("mapping and synthesize match layer-by-layer oracle") {
    ToyGenerator g = new_generator(17, 5, 9, false);
    Prng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        Vec z = rng.normal_vec(5);
        CHECK(mapping(g, z) == manual_forward({g.mapping}, z));
        Vec w = mapping(g, z);
        CHECK(synthesize(g, w) == manual_forward(g.synthesis, w));
    }
}

TEST_CASE("synthesize validates dims") {
    ToyGenerator g = new_generator(1, 4, 6, false);
    Vec bad(5, 0.0);
    CHECK_THROWS_AS(synthesize(g, bad), ValidationError);
}

TEST_CASE("grad_wrt_w on identity layer equals cotangent") {
    ToyGenerator g;
    g.latent_dim = 3;
    g.sample_dim = 3;
    g.mapping = {Matrix::identity(3), Vec(3, 0.0), true};
    g.synthesis = {{Matrix::identity(3), Vec(3, 0.0), true}};
    g.validate();
    Vec w = {0.5, -1.0, 2.0};
    Vec cot = {1.0, 2.0, 3.0};
    CHECK(grad_wrt_w(g, w, cot) == cot);
    Vec zero(3, 0.0);
    CHECK(grad_wrt_w(g, w, zero) == zero);
}

TEST_CASE("grad_wrt_w matches central finite differences") {
    ToyGenerator g = new_generator(11, 6, 8, false);
    Prng rng(4);
    const double h = 1e-5;
    for (int probe = 0; probe < 100; ++probe) {
        Vec w = rng.normal_vec(6);
        Vec cot = rng.normal_vec(8);
        Vec grad = grad_wrt_w(g, w, cot);
        for (std::size_t i = 0; i < w.size(); ++i) {
            Vec wp = w, wm = w;
            wp[i] += h;
            wm[i] -= h;
            double fd =
                (dot(synthesize(g, wp), cot) - dot(synthesize(g, wm), cot)) /
                (2 * h);
            CHECK(std::abs(grad[i] - fd) <=
                  1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
}

TEST_CASE("backprop_params matches finite differences") {
    ToyGenerator g = new_generator(13, 4, 5, true);
    Prng rng(6);
    Vec z = rng.normal_vec(4);
    Vec cot = rng.normal_vec(5);
    Vec grad(param_count(g), 0.0);
    backprop_params(g, z, 1u, cot, grad);
    Vec p = get_params(g);
    const double h = 1e-6;
    for (std::size_t i = 0; i < p.size(); i += 3) {
        Vec pp = p, pm = p;
        pp[i] += h;
        pm[i] -= h;
        ToyGenerator gp = g, gm = g;
        set_params(gp, pp);
        set_params(gm, pm);
        double fp = dot(synthesize(gp, mapping(gp, z, 1u)), cot);
        double fm = dot(synthesize(gm, mapping(gm, z, 1u)), cot);
        double fd = (fp - fm) / (2 * h);
        CHECK(std::abs(grad[i] - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("sample_dataset respects class counts") {
    PipelineConfig cfg;
    cfg.sample_dim = 4;
    DataDistribution dist = DataDistribution::default_for(cfg);
    EmbeddingSet set = sample_dataset(dist, 100, 42);
    std::size_t mal = 0;
    for (auto l : set.labels) mal += l;
    CHECK(mal == 2);
    CHECK(set.size() == 100);

    EmbeddingSet again = sample_dataset(dist, 100, 42);
    CHECK(set.vectors == again.vectors);

    bool warned = false;
    sample_dataset(dist, 10, 1, &warned);
    CHECK(warned);  // 0.02 * 10 rounds down to zero minority samples
}

TEST_CASE("sample_dataset empirical mean matches configured mean") {
    PipelineConfig cfg;
    cfg.sample_dim = 4;
    cfg.class_ratio = 0.5;
    DataDistribution dist = DataDistribution::default_for(cfg);
    EmbeddingSet set = sample_dataset(dist, 5000, 7);
    Vec mean(4, 0.0);
    std::size_t n0 = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        if (set.labels[i] != 0) continue;
        ++n0;
        for (std::size_t j = 0; j < 4; ++j)
            mean[j] += double(set.vectors[i * 4 + j]);
    }
    for (std::size_t j = 0; j < 4; ++j)
        CHECK(std::abs(mean[j] / double(n0) - dist.means[0][j]) < 0.1);
}

TEST_CASE("sample_latents determinism and moments") {
    auto a = sample_latents(100, 3, 5);
    auto b = sample_latents(100, 3, 5);
    CHECK(a == b);
    CHECK(a[0].size() == 3);
    CHECK_THROWS_AS(sample_latents(0, 3, 5), ValidationError);
    auto big = sample_latents(5000, 2, 11);
    Vec mean(2, 0.0);
    for (const Vec& z : big)
        for (std::size_t j = 0; j < 2; ++j) mean[j] += z[j];
    for (double m : mean) CHECK(std::abs(m / 5000.0) < 0.1);
}

TEST_CASE("forward determinism across copies") {
    ToyGenerator g = new_generator(21, 6, 12, false);
    ToyGenerator copy = g;
    Prng rng(2);
    Vec z = rng.normal_vec(6);
    CHECK(synthesize(g, mapping(g, z)) == synthesize(copy, mapping(copy, z)));
}

TEST_CASE("generator weight JSON is stable") {
    ToyGenerator g = new_generator(42, 2, 3, false);
    std::string a = generator_to_json(g);
    CHECK(a == generator_to_json(g));
    CHECK(a.find("\"mapping\"") != std::string::npos);
    CHECK(a.find("\"synthesis\"") != std::string::npos);
}
