#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "dataio.hpp"
#include "errors.hpp"
#include "numerics.hpp"
#include "rng.hpp"

namespace sg {

struct TsneConfig {
    std::size_t output_dims = 2;  // 2 or 3
    double perplexity = 30.0;
    std::size_t iterations = 1000;
    double learning_rate = 200.0;
    std::uint64_t seed = 42;
    double exaggeration = 12.0;
    std::size_t exaggeration_iters = 250;
    std::size_t momentum_switch_iter = 250;  // 0.5 before, 0.8 after
};

namespace detail {

// Binary-search the Gaussian bandwidth of row i until the conditional
// distribution hits the target perplexity (entropy in nats).
inline void perplexity_row(const Matrix& sqd, std::size_t i, double target_log_u,
                           std::vector<double>& p_row) {
    const std::size_t n = sqd.rows;
    double beta = 1.0, beta_lo = 0.0,
           beta_hi = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 200; ++iter) {
        double sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            p_row[j] = (j == i) ? 0.0 : std::exp(-beta * sqd(i, j));
            sum += p_row[j];
        }
        double h = 0.0;
        for (std::size_t j = 0; j < n; ++j)
            if (p_row[j] > 0.0) {
                double pj = p_row[j] / sum;
                h -= pj * std::log(pj);
            }
        double diff = h - target_log_u;
        if (std::abs(diff) < 1e-5) break;
        if (diff > 0.0) {  // entropy too high -> sharpen
            beta_lo = beta;
            beta = std::isinf(beta_hi) ? beta * 2.0 : 0.5 * (beta + beta_hi);
        } else {
            beta_hi = beta;
            beta = 0.5 * (beta + beta_lo);
        }
    }
    double sum = 0.0;
    for (double v : p_row) sum += v;
    for (double& v : p_row) v /= sum;
}

inline double tsne_kl(const Matrix& p, const Matrix& y) {
    const std::size_t n = p.rows;
    double sum_q = 0.0;
    Matrix num(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double v = 1.0 / (1.0 + sq_dist(y.row(i), y.row(j)));
            num(i, j) = v;
            sum_q += v;
        }
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j || p(i, j) <= 0.0) continue;
            double q = std::max(num(i, j) / sum_q, 1e-12);
            kl += p(i, j) * std::log(p(i, j) / q);
        }
    return kl;
}

inline Matrix tsne_grad(const Matrix& p, const Matrix& y) {
    const std::size_t n = p.rows, d = y.cols;
    Matrix num(n, n);
    double sum_q = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double v = 1.0 / (1.0 + sq_dist(y.row(i), y.row(j)));
            num(i, j) = v;
            sum_q += v;
        }
    Matrix g(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double q = num(i, j) / sum_q;
            double coeff = 4.0 * (p(i, j) - q) * num(i, j);
            for (std::size_t k = 0; k < d; ++k)
                g(i, k) += coeff * (y(i, k) - y(j, k));
        }
    return g;
}

inline void center_rows(Matrix& y) {
    for (std::size_t k = 0; k < y.cols; ++k) {
        Vec col(y.rows);
        for (std::size_t i = 0; i < y.rows; ++i) col[i] = y(i, k);
        double m = pairwise_sum(col) / double(y.rows);
        for (std::size_t i = 0; i < y.rows; ++i) y(i, k) -= m;
    }
}

}  // namespace detail

// Exact O(N^2) t-SNE. After early exaggeration, the second half of the run
// rejects KL-increasing steps so the objective is monotone by construction.
inline Matrix tsne(const Matrix& x, const TsneConfig& cfg,
                   Vec* kl_trace = nullptr) {
    const std::size_t n = x.rows;
    if (cfg.output_dims != 2 && cfg.output_dims != 3)
        throw ValidationError("tsne: output_dims must be 2 or 3");
    if (n < 10) throw ValidationError("tsne: need at least 10 points");
    if (n > 2000)
        throw ValidationError("tsne: exact solver is capped at N=2000");
    if (!(cfg.perplexity > 1.0) ||
        cfg.perplexity >= double(n - 1) / 3.0)
        throw ValidationError("tsne: perplexity must lie in (1, (N-1)/3)");

    Matrix sqd(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = sq_dist(x.row(i), x.row(j));
            sqd(i, j) = v;
            sqd(j, i) = v;
        }

    Matrix p_cond(n, n);
    std::vector<double> row(n);
    double target = std::log(cfg.perplexity);
    for (std::size_t i = 0; i < n; ++i) {
        detail::perplexity_row(sqd, i, target, row);
        for (std::size_t j = 0; j < n; ++j) p_cond(i, j) = row[j];
    }
    Matrix p(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            p(i, j) = std::max((p_cond(i, j) + p_cond(j, i)) / (2.0 * double(n)),
                               1e-12 / double(n));

    Prng rng(cfg.seed, 0x74736e65ULL);
    Matrix y(n, cfg.output_dims);
    for (auto& v : y.a) v = 1e-2 * rng.normal();
    Matrix velocity(n, cfg.output_dims);

    Matrix p_eff = p;
    const std::size_t monotone_from = cfg.iterations / 2;
    double kl_prev = std::numeric_limits<double>::infinity();
    double step_scale = 1.0;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        bool exaggerated = it < cfg.exaggeration_iters;
        for (std::size_t idx = 0; idx < p.a.size(); ++idx)
            p_eff.a[idx] = exaggerated ? p.a[idx] * cfg.exaggeration : p.a[idx];
        double momentum = it < cfg.momentum_switch_iter ? 0.5 : 0.8;

        Matrix g = detail::tsne_grad(p_eff, y);
        if (!all_finite(g.a))
            throw NumericalError("tsne: non-finite gradient at iteration " +
                                 std::to_string(it));
        if (it < monotone_from) {
            for (std::size_t idx = 0; idx < y.a.size(); ++idx) {
                velocity.a[idx] =
                    momentum * velocity.a[idx] - cfg.learning_rate * g.a[idx];
                y.a[idx] += velocity.a[idx];
            }
            detail::center_rows(y);
        } else {
            if (std::isinf(kl_prev)) kl_prev = detail::tsne_kl(p, y);
            Matrix y_try = y;
            for (std::size_t idx = 0; idx < y.a.size(); ++idx) {
                velocity.a[idx] = momentum * velocity.a[idx] -
                                  step_scale * cfg.learning_rate * g.a[idx];
                y_try.a[idx] += velocity.a[idx];
            }
            detail::center_rows(y_try);
            double kl_try = detail::tsne_kl(p, y_try);
            if (kl_try <= kl_prev) {
                y = std::move(y_try);
                kl_prev = kl_try;
            } else {
                std::fill(velocity.a.begin(), velocity.a.end(), 0.0);
                step_scale *= 0.5;
            }
            if (kl_trace) kl_trace->push_back(kl_prev);
        }
    }
    detail::center_rows(y);
    return y;
}

inline double tsne_kl_of(const Matrix& x, const Matrix& y,
                         const TsneConfig& cfg) {
    // exposed for objective tracking in tests/tools
    const std::size_t n = x.rows;
    Matrix sqd(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = sq_dist(x.row(i), x.row(j));
            sqd(i, j) = v;
            sqd(j, i) = v;
        }
    Matrix p_cond(n, n);
    std::vector<double> row(n);
    for (std::size_t i = 0; i < n; ++i) {
        detail::perplexity_row(sqd, i, std::log(cfg.perplexity), row);
        for (std::size_t j = 0; j < n; ++j) p_cond(i, j) = row[j];
    }
    Matrix p(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            p(i, j) = std::max((p_cond(i, j) + p_cond(j, i)) / (2.0 * double(n)),
                               1e-12 / double(n));
    return detail::tsne_kl(p, y);
}

// --- SVG / CSV emission -----------------------------------------------------

namespace detail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

inline void scatter_panel(std::string& svg, const Matrix& layout,
                          const std::vector<std::uint8_t>& labels,
                          const std::vector<std::uint8_t>& synthetic,
                          std::size_t ax, std::size_t ay, double x0, double y0,
                          double size) {
    double lo_x = 0, hi_x = 1, lo_y = 0, hi_y = 1;
    if (layout.rows > 0) {
        lo_x = hi_x = layout(0, ax);
        lo_y = hi_y = layout(0, ay);
        for (std::size_t i = 0; i < layout.rows; ++i) {
            lo_x = std::min(lo_x, layout(i, ax));
            hi_x = std::max(hi_x, layout(i, ax));
            lo_y = std::min(lo_y, layout(i, ay));
            hi_y = std::max(hi_y, layout(i, ay));
        }
        if (hi_x == lo_x) hi_x = lo_x + 1;
        if (hi_y == lo_y) hi_y = lo_y + 1;
    }
    const double pad = 10.0;
    auto px = [&](double v) {
        return x0 + pad + (v - lo_x) / (hi_x - lo_x) * (size - 2 * pad);
    };
    auto py = [&](double v) {
        return y0 + size - pad - (v - lo_y) / (hi_y - lo_y) * (size - 2 * pad);
    };
    svg += "<rect x=\"" + fmt(x0) + "\" y=\"" + fmt(y0) + "\" width=\"" +
           fmt(size) + "\" height=\"" + fmt(size) +
           "\" fill=\"none\" stroke=\"black\"/>\n";
    for (std::size_t i = 0; i < layout.rows; ++i) {
        const char* color = labels[i] == 0 ? "red" : "blue";
        double cx = px(layout(i, ax)), cy = py(layout(i, ay));
        if (!synthetic[i]) {
            svg += "<circle cx=\"" + fmt(cx) + "\" cy=\"" + fmt(cy) +
                   "\" r=\"2.5\" fill=\"" + color + "\"/>\n";
        } else {
            svg += "<path d=\"M" + fmt(cx - 2.5) + " " + fmt(cy - 2.5) + "L" +
                   fmt(cx + 2.5) + " " + fmt(cy + 2.5) + "M" + fmt(cx - 2.5) +
                   " " + fmt(cy + 2.5) + "L" + fmt(cx + 2.5) + " " +
                   fmt(cy - 2.5) + "\" stroke=\"" + std::string(color) +
                   "\" stroke-width=\"1\"/>\n";
        }
    }
}

}  // namespace detail

// Color by class (benign red, malignant blue), marker shape by source. 3D
// layouts become three pairwise-axis panels.
inline std::string scatter_svg(const Matrix& layout,
                               const std::vector<std::uint8_t>& labels,
                               const std::vector<std::uint8_t>& synthetic) {
    if (layout.rows != labels.size() || layout.rows != synthetic.size())
        throw ValidationError("scatter_svg: row count mismatch");
    const double panel = 300.0;
    std::vector<std::pair<std::size_t, std::size_t>> axes;
    if (layout.cols >= 3)
        axes = {{0, 1}, {0, 2}, {1, 2}};
    else
        axes = {{0, 1}};
    double width = panel * double(axes.size()) + 20.0 * double(axes.size() - 1);
    std::string svg =
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" +
        detail::fmt(width) + "\" height=\"" + detail::fmt(panel) + "\">\n";
    for (std::size_t p = 0; p < axes.size(); ++p)
        detail::scatter_panel(svg, layout, labels, synthetic, axes[p].first,
                              axes[p].second, double(p) * (panel + 20.0), 0.0,
                              panel);
    svg += "</svg>\n";
    return svg;
}

inline void emit_scatter(const Matrix& layout,
                         const std::vector<std::uint8_t>& labels,
                         const std::vector<std::uint8_t>& synthetic,
                         const std::filesystem::path& path) {
    write_text(path, scatter_svg(layout, labels, synthetic));
}

// RFC 4180: CRLF rows; fields with commas, quotes, or newlines get quoted.
inline std::string csv_encode(
    const std::vector<std::vector<std::string>>& table) {
    std::string out;
    for (const auto& row : table) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            const std::string& f = row[i];
            if (f.find_first_of(",\"\r\n") != std::string::npos) {
                out += '"';
                for (char c : f) {
                    if (c == '"') out += '"';
                    out += c;
                }
                out += '"';
            } else {
                out += f;
            }
        }
        out += "\r\n";
    }
    return out;
}

inline void emit_csv(const std::vector<std::vector<std::string>>& table,
                     const std::filesystem::path& path) {
    write_text(path, csv_encode(table));
}

}  // namespace sg
