#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "synthgauge/rng.hpp"
#include "synthgauge/viz.hpp"

using namespace sg;

namespace {

// two 10-D Gaussian blobs, labels 0/1 by half
Matrix two_clusters(std::size_t n_per, double separation, std::uint64_t seed,
                    double noise = 0.5) {
    Prng rng(seed);
    Matrix x(2 * n_per, 10);
    for (std::size_t i = 0; i < x.rows; ++i) {
        double c = i < n_per ? 0.0 : separation;
        for (std::size_t j = 0; j < x.cols; ++j)
            x(i, j) = c + noise * rng.normal();
    }
    return x;
}

// test-side silhouette oracle over two equal halves
double silhouette(const Matrix& y, std::size_t n_per) {
    auto mean_dist = [&](std::size_t i, std::size_t lo, std::size_t hi) {
        double s = 0;
        std::size_t cnt = 0;
        for (std::size_t j = lo; j < hi; ++j) {
            if (j == i) continue;
            s += std::sqrt(sq_dist(y.row(i), y.row(j)));
            ++cnt;
        }
        return s / double(cnt);
    };
    double total = 0;
    for (std::size_t i = 0; i < y.rows; ++i) {
        bool first = i < n_per;
        double a = mean_dist(i, first ? 0 : n_per, first ? n_per : y.rows);
        double b = mean_dist(i, first ? n_per : 0, first ? y.rows : n_per);
        total += (b - a) / std::max(a, b);
    }
    return total / double(y.rows);
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    std::size_t i = 0;
    while (i < text.size()) {
        char c = text[i];
        if (c == '"') {
            ++i;
            while (i < text.size()) {
                if (text[i] == '"' && i + 1 < text.size() &&
                    text[i + 1] == '"') {
                    field += '"';
                    i += 2;
                } else if (text[i] == '"') {
                    ++i;
                    break;
                } else {
                    field += text[i++];
                }
            }
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            ++i;
        } else if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') {
            row.push_back(std::move(field));
            field.clear();
            rows.push_back(std::move(row));
            row.clear();
            i += 2;
        } else {
            field += text[i++];
        }
    }
    return rows;
}

}  // namespace

TEST_CASE("tsne separates two clusters (silhouette oracle)") {
    const std::size_t n_per = 30;
    Matrix x = two_clusters(n_per, 6.0, 1, 0.3);
    TsneConfig cfg;
    cfg.perplexity = 10.0;
    cfg.iterations = 1000;
    Matrix y = tsne(x, cfg);
    CHECK(y.rows == 60);
    CHECK(y.cols == 2);
    CHECK(silhouette(y, n_per) > 0.5);
}

TEST_CASE("tsne is deterministic in the seed") {
    Matrix x = two_clusters(10, 4.0, 2);
    TsneConfig cfg;
    cfg.perplexity = 5.0;
    cfg.iterations = 120;
    Matrix a = tsne(x, cfg);
    Matrix b = tsne(x, cfg);
    CHECK(a.a == b.a);
    cfg.seed = 7;
    Matrix c = tsne(x, cfg);
    CHECK(a.a != c.a);
}

TEST_CASE("tsne KL is non-increasing over the guarded phase") {
    Matrix x = two_clusters(12, 3.0, 3);
    TsneConfig cfg;
    cfg.perplexity = 6.0;
    cfg.iterations = 300;
    Vec trace;
    Matrix y = tsne(x, cfg, &trace);
    REQUIRE(trace.size() == 150);  // second half of the iterations
    for (std::size_t i = 1; i < trace.size(); ++i)
        CHECK(trace[i] <= trace[i - 1]);
    // the trace ends at the KL of the returned layout
    CHECK(tsne_kl_of(x, y, cfg) ==
          doctest::Approx(trace.back()).epsilon(1e-10));
}

TEST_CASE("tsne output is centered") {
    Matrix x = two_clusters(10, 3.0, 4);
    TsneConfig cfg;
    cfg.perplexity = 5.0;
    cfg.iterations = 100;
    cfg.output_dims = 3;
    Matrix y = tsne(x, cfg);
    CHECK(y.cols == 3);
    for (std::size_t k = 0; k < y.cols; ++k) {
        double m = 0;
        for (std::size_t i = 0; i < y.rows; ++i) m += y(i, k);
        CHECK(std::abs(m / double(y.rows)) < 1e-8);
    }
}

TEST_CASE("tsne keeps duplicate inputs together") {
    Matrix x = two_clusters(10, 4.0, 5);
    // make rows 0 and 1 identical
    for (std::size_t j = 0; j < x.cols; ++j) x(1, j) = x(0, j);
    TsneConfig cfg;
    cfg.perplexity = 5.0;
    cfg.iterations = 400;
    Matrix y = tsne(x, cfg);
    double dup = std::sqrt(sq_dist(y.row(0), y.row(1)));
    Vec all;
    for (std::size_t i = 0; i < y.rows; ++i)
        for (std::size_t j = i + 1; j < y.rows; ++j)
            all.push_back(std::sqrt(sq_dist(y.row(i), y.row(j))));
    std::sort(all.begin(), all.end());
    CHECK(dup < all[all.size() / 2]);  // below the median pair distance
}

TEST_CASE("tsne input validation") {
    Matrix small(5, 3);
    TsneConfig cfg;
    CHECK_THROWS_AS(tsne(small, cfg), ValidationError);

    Matrix x = two_clusters(10, 3.0, 6);
    TsneConfig bad_dims;
    bad_dims.output_dims = 4;
    CHECK_THROWS_AS(tsne(x, bad_dims), ValidationError);

    TsneConfig bad_perp;
    bad_perp.perplexity = 0.5;
    CHECK_THROWS_AS(tsne(x, bad_perp), ValidationError);
    bad_perp.perplexity = double(x.rows - 1) / 3.0;
    CHECK_THROWS_AS(tsne(x, bad_perp), ValidationError);

    Matrix huge(2001, 1);
    CHECK_THROWS_AS(tsne(huge, cfg), ValidationError);
}

TEST_CASE("conditional distributions hit the target perplexity") {
    Prng rng(9);
    Matrix x(40, 5);
    for (auto& v : x.a) v = rng.normal();
    Matrix sqd(40, 40);
    for (std::size_t i = 0; i < 40; ++i)
        for (std::size_t j = 0; j < 40; ++j)
            sqd(i, j) = i == j ? 0.0 : sq_dist(x.row(i), x.row(j));
    const double perp = 8.0;
    std::vector<double> row(40);
    for (std::size_t i = 0; i < 40; ++i) {
        detail::perplexity_row(sqd, i, std::log(perp), row);
        double sum = 0, h = 0;
        for (double v : row) sum += v;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        for (double v : row)
            if (v > 0) h -= v * std::log(v);
        CHECK(std::abs(h - std::log(perp)) < 1e-4);  // entropy within tol
        CHECK(row[i] == 0.0);                        // no self-affinity
    }
}

TEST_CASE("scatter SVG structure, markers, and determinism") {
    Matrix y(4, 2);
    y(0, 0) = 0; y(0, 1) = 0;
    y(1, 0) = 1; y(1, 1) = 0;
    y(2, 0) = 0; y(2, 1) = 1;
    y(3, 0) = 1; y(3, 1) = 1;
    std::vector<std::uint8_t> labels = {0, 1, 0, 1};
    std::vector<std::uint8_t> synth = {0, 0, 1, 1};
    std::string svg = scatter_svg(y, labels, synth);
    CHECK(svg == scatter_svg(y, labels, synth));
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.rfind("</svg>\n") == svg.size() - 7);
    // real points are circles, synthetic points X paths
    CHECK(std::count(svg.begin(), svg.end(), 'c') >= 2);
    std::size_t circles = 0, paths = 0, pos = 0;
    while ((pos = svg.find("<circle", pos)) != std::string::npos) {
        ++circles;
        ++pos;
    }
    pos = 0;
    while ((pos = svg.find("<path", pos)) != std::string::npos) {
        ++paths;
        ++pos;
    }
    CHECK(circles == 2);
    CHECK(paths == 2);
    CHECK(svg.find("\"red\"") != std::string::npos);
    CHECK(svg.find("\"blue\"") != std::string::npos);

    std::vector<std::uint8_t> short_labels = {0, 1};
    CHECK_THROWS_AS(scatter_svg(y, short_labels, synth), ValidationError);
}

TEST_CASE("3-D layouts render three panels") {
    Prng rng(10);
    Matrix y(6, 3);
    for (auto& v : y.a) v = rng.normal();
    std::vector<std::uint8_t> labels(6, 0), synth(6, 0);
    std::string svg = scatter_svg(y, labels, synth);
    std::size_t rects = 0, pos = 0;
    while ((pos = svg.find("<rect", pos)) != std::string::npos) {
        ++rects;
        ++pos;
    }
    CHECK(rects == 3);
}

TEST_CASE("csv encoding survives a round trip through a parser") {
    std::vector<std::vector<std::string>> table = {
        {"id", "name", "note"},
        {"1", "plain", "no quoting needed"},
        {"2", "comma, inside", "quote \" inside"},
        {"3", "line\nbreak", "both \",\" and \"\""},
    };
    std::string text = csv_encode(table);
    CHECK(parse_csv(text) == table);
    // CRLF line endings, one per row (plus the embedded LF)
    CHECK(std::count(text.begin(), text.end(), '\r') >= 4);
}
