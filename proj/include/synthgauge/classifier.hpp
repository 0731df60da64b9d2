#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "dataio.hpp"
#include "errors.hpp"
#include "jsonw.hpp"
#include "metrics.hpp"
#include "numerics.hpp"
#include "rng.hpp"
#include "toygen.hpp"

namespace sg {

struct TrainHyper {
    double lr = 0.0005;
    std::uint32_t max_epochs = 20;
    std::uint32_t patience = 3;
    std::uint64_t seed = 42;
    std::uint32_t hidden = 16;
};

struct EpochLog {
    double train_loss = 0;
    double val_loss = 0;
};

// One hidden tanh layer plus a scalar logit head; trained full-batch with
// RMS-scaled steps and early stopping on validation loss.
struct ClassifierModel {
    AffineLayer hidden;  // hidden x input, tanh
    Vec head_w;          // hidden
    double head_b = 0;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;  // 0-based index into log

    std::size_t input_dim() const { return hidden.in_dim(); }
    std::size_t hidden_dim() const { return hidden.out_dim(); }
};

namespace detail {

inline std::size_t cls_param_count(std::size_t in, std::size_t hid) {
    return hid * in + hid + hid + 1;
}

inline void cls_unpack(ClassifierModel& m, std::span<const double> p,
                       std::size_t in, std::size_t hid) {
    m.hidden.w = Matrix(hid, in);
    std::copy(p.begin(), p.begin() + long(hid * in), m.hidden.w.a.begin());
    m.hidden.b.assign(p.begin() + long(hid * in),
                      p.begin() + long(hid * in + hid));
    m.head_w.assign(p.begin() + long(hid * in + hid),
                    p.begin() + long(hid * in + 2 * hid));
    m.head_b = p[hid * in + 2 * hid];
}

inline double cls_logit(std::span<const double> p, std::size_t in,
                        std::size_t hid, std::span<const double> x,
                        Vec* hidden_out = nullptr) {
    Vec h(hid);
    for (std::size_t i = 0; i < hid; ++i) {
        double s = p[hid * in + i];  // bias
        for (std::size_t j = 0; j < in; ++j) s += p[i * in + j] * x[j];
        h[i] = std::tanh(s);
    }
    double z = p[hid * in + 2 * hid];
    for (std::size_t i = 0; i < hid; ++i) z += p[hid * in + hid + i] * h[i];
    if (hidden_out) *hidden_out = std::move(h);
    return z;
}

// Mean logistic loss over the set; accumulates the gradient when asked.
inline double cls_loss(std::span<const double> p, std::size_t in,
                       std::size_t hid, const EmbeddingSet& data,
                       std::span<double> grad) {
    const std::size_t n = data.size();
    std::vector<double> losses(n);
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        Vec x = data.row_double(s);
        Vec h;
        double z = cls_logit(p, in, hid, x, &h);
        double y = double(data.labels[s]);
        // log(1+e^{-|z|}) form keeps the loss finite for large |z|
        losses[s] = std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
        if (!grad.empty()) {
            double sig = 1.0 / (1.0 + std::exp(-z));
            double dz = (sig - y) / double(n);
            grad[hid * in + 2 * hid] += dz;
            for (std::size_t i = 0; i < hid; ++i) {
                grad[hid * in + hid + i] += dz * h[i];
                double dh = dz * p[hid * in + hid + i] * (1.0 - h[i] * h[i]);
                grad[hid * in + i] += dh;
                for (std::size_t j = 0; j < in; ++j)
                    grad[i * in + j] += dh * x[j];
            }
        }
    }
    return pairwise_sum(losses) / double(n);
}

}  // namespace detail

inline ClassifierModel train(const EmbeddingSet& train_set,
                             const EmbeddingSet& val_set,
                             const TrainHyper& hp) {
    if (train_set.size() == 0 || val_set.size() == 0)
        throw ValidationError("train: empty dataset");
    bool has0 = false, has1 = false;
    for (auto l : train_set.labels) (l == 0 ? has0 : has1) = true;
    if (!has0 || !has1)
        throw ValidationError("train: training set must contain both classes");
    if (train_set.dim != val_set.dim)
        throw ValidationError("train: train/val dim mismatch");
    if (hp.patience > hp.max_epochs)
        throw ValidationError("train: patience exceeds max_epochs");

    const std::size_t in = train_set.dim, hid = hp.hidden;
    const std::size_t np = detail::cls_param_count(in, hid);
    Vec p(np);
    {
        double a = std::sqrt(6.0 / double(in + hid));
        Prng rng(hp.seed, 0x636c735f696e6974ULL);
        for (std::size_t i = 0; i < hid * in; ++i) p[i] = rng.uniform(-a, a);
        double ah = std::sqrt(6.0 / double(hid + 1));
        for (std::size_t i = hid * in + hid; i < hid * in + 2 * hid; ++i)
            p[i] = rng.uniform(-ah, ah);
    }

    Vec cache(np, 0.0), grad(np, 0.0);
    ClassifierModel model;
    Vec best_p = p;
    double best_val = std::numeric_limits<double>::infinity();
    std::uint32_t since_improvement = 0;
    for (std::uint32_t epoch = 0; epoch < hp.max_epochs; ++epoch) {
        double tl = detail::cls_loss(p, in, hid, train_set, grad);
        if (!std::isfinite(tl))
            throw NumericalError("train: non-finite loss at epoch " +
                                 std::to_string(epoch + 1));
        // RMS-scaled step, decay 0.99, floor 1e-8
        for (std::size_t i = 0; i < np; ++i) {
            cache[i] = 0.99 * cache[i] + 0.01 * grad[i] * grad[i];
            p[i] -= hp.lr * grad[i] / (std::sqrt(cache[i]) + 1e-8);
        }
        double vl = detail::cls_loss(p, in, hid, val_set, {});
        model.log.push_back({tl, vl});
        if (vl < best_val) {
            best_val = vl;
            best_p = p;
            model.best_epoch = model.log.size() - 1;
            since_improvement = 0;
        } else if (++since_improvement >= hp.patience) {
            break;
        }
    }
    detail::cls_unpack(model, best_p, in, hid);
    return model;
}

inline Vec model_params(const ClassifierModel& m) {
    Vec p;
    p.insert(p.end(), m.hidden.w.a.begin(), m.hidden.w.a.end());
    p.insert(p.end(), m.hidden.b.begin(), m.hidden.b.end());
    p.insert(p.end(), m.head_w.begin(), m.head_w.end());
    p.push_back(m.head_b);
    return p;
}

inline double predict_logit(const ClassifierModel& m,
                            std::span<const double> x) {
    if (x.size() != m.input_dim())
        throw ValidationError("predict: input dim mismatch");
    Vec p = model_params(m);
    return detail::cls_logit(p, m.input_dim(), m.hidden_dim(), x);
}

inline double predict_proba(const ClassifierModel& m,
                            std::span<const double> x) {
    return 1.0 / (1.0 + std::exp(-predict_logit(m, x)));
}

inline Vec predict_proba(const ClassifierModel& m, const EmbeddingSet& set) {
    Vec out(set.size());
    for (std::size_t i = 0; i < set.size(); ++i)
        out[i] = predict_proba(m, set.row_double(i));
    return out;
}

// Hidden-layer activations, the embedding space used for latent inspection.
inline Vec extract_embedding(const ClassifierModel& m,
                             std::span<const double> x) {
    if (x.size() != m.input_dim())
        throw ValidationError("extract_embedding: input dim mismatch");
    Vec p = model_params(m);
    Vec h;
    detail::cls_logit(p, m.input_dim(), m.hidden_dim(), x, &h);
    return h;
}

inline EmbeddingSet extract_embeddings(const ClassifierModel& m,
                                       const EmbeddingSet& set) {
    EmbeddingSet out;
    out.dim = std::uint32_t(m.hidden_dim());
    out.source = set.source;
    for (std::size_t i = 0; i < set.size(); ++i)
        out.push_row(extract_embedding(m, set.row_double(i)), set.labels[i],
                     set.ids[i]);
    return out;
}

// Mann-Whitney rank statistic; ties contribute 1/2.
inline double auc(std::span<const double> scores,
                  std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size())
        throw ValidationError("auc: size mismatch");
    std::size_t n1 = 0;
    for (auto l : labels) n1 += (l != 0);
    std::size_t n0 = labels.size() - n1;
    if (n0 == 0 || n1 == 0)
        throw ValidationError("auc: both classes must be present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] < scores[b];
    });
    // average ranks over tie groups
    Vec rank(scores.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() &&
               scores[order[j + 1]] == scores[order[i]])
            ++j;
        double avg = 0.5 * double(i + j) + 1.0;  // ranks are 1-based
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double rank_sum1 = 0;
    for (std::size_t s = 0; s < labels.size(); ++s)
        if (labels[s] != 0) rank_sum1 += rank[s];
    double u = rank_sum1 - double(n1) * double(n1 + 1) / 2.0;
    return u / (double(n0) * double(n1));
}

struct ClsMetrics {
    double acc = 0, auc = 0, f1 = 0, sensitivity = 0, specificity = 0;
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
};

inline ClsMetrics evaluate(const ClassifierModel& m, const EmbeddingSet& test,
                           double threshold = 0.5) {
    if (test.size() == 0) throw ValidationError("evaluate: empty test set");
    ClsMetrics r;
    Vec scores = predict_proba(m, test);
    for (std::size_t i = 0; i < test.size(); ++i) {
        bool pred = scores[i] >= threshold;
        bool truth = test.labels[i] != 0;
        if (pred && truth) ++r.tp;
        else if (!pred && !truth) ++r.tn;
        else if (pred && !truth) ++r.fp;
        else ++r.fn;
    }
    double total = double(test.size());
    r.acc = double(r.tp + r.tn) / total;
    r.sensitivity = (r.tp + r.fn) ? double(r.tp) / double(r.tp + r.fn) : 0.0;
    r.specificity = (r.tn + r.fp) ? double(r.tn) / double(r.tn + r.fp) : 0.0;
    double prec = (r.tp + r.fp) ? double(r.tp) / double(r.tp + r.fp) : 0.0;
    r.f1 = (prec + r.sensitivity > 0.0)
               ? 2.0 * prec * r.sensitivity / (prec + r.sensitivity)
               : 0.0;
    bool has0 = false, has1 = false;
    for (auto l : test.labels) (l == 0 ? has0 : has1) = true;
    r.auc = (has0 && has1) ? auc(scores, test.labels) : 0.0;
    return r;
}

// A labeled sample source: (class id, count, seed) -> samples. Backed by a
// conditional generator in production, by replay stubs in tests.
using SyntheticSource =
    std::function<std::vector<Vec>(std::uint32_t, std::size_t, std::uint64_t)>;

inline SyntheticSource generator_source(const ToyGenerator& g) {
    return [&g](std::uint32_t cls, std::size_t count, std::uint64_t seed) {
        std::vector<Vec> out;
        out.reserve(count);
        Prng rng(seed, 0x73796e746865ULL, cls);
        for (std::size_t i = 0; i < count; ++i) {
            Vec z = rng.normal_vec(g.latent_dim);
            Vec w = mapping(g, z,
                            g.conditional() ? std::optional<std::uint32_t>(cls)
                                            : std::nullopt);
            out.push_back(synthesize(g, w));
        }
        return out;
    };
}

struct ScenarioRow {
    std::string name;
    std::size_t train_total = 0;
    std::size_t train_malignant = 0;
    ClsMetrics metrics;
};

namespace detail {

inline EmbeddingSet make_synthetic_set(const SyntheticSource& source,
                                       std::uint32_t dim,
                                       std::size_t n_benign,
                                       std::size_t n_malignant,
                                       std::uint64_t seed,
                                       std::uint32_t id_base) {
    EmbeddingSet set;
    set.dim = dim;
    set.source = Source::synthetic;
    std::uint32_t id = id_base;
    for (const Vec& v : source(0, n_benign, seed)) set.push_row(v, 0, id++);
    for (const Vec& v : source(1, n_malignant, seed + 1))
        set.push_row(v, 1, id++);
    return set;
}

inline EmbeddingSet concat_sets(const EmbeddingSet& a, const EmbeddingSet& b) {
    EmbeddingSet out = a;
    out.vectors.insert(out.vectors.end(), b.vectors.begin(), b.vectors.end());
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
    return out;
}

}  // namespace detail

// The three-row protocol: real baseline, balanced synthetic-only, and real
// plus synthetic minority to exact balance. Every row is evaluated on the
// same real validation set. Synthetic-only volume mirrors the 55k figure
// scaled down by cfg.scenario_scale.
inline std::vector<ScenarioRow> run_scenarios(const EmbeddingSet& real_train,
                                              const EmbeddingSet& real_val,
                                              const SyntheticSource& source,
                                              const PipelineConfig& cfg) {
    TrainHyper hp;
    hp.lr = cfg.lr;
    hp.max_epochs = cfg.max_epochs;
    hp.patience = cfg.patience;
    hp.seed = cfg.seed;

    auto count_mal = [](const EmbeddingSet& s) {
        std::size_t m = 0;
        for (auto l : s.labels) m += (l != 0);
        return m;
    };
    auto row = [&](const std::string& name, const EmbeddingSet& train_set,
                   std::uint64_t seed) {
        TrainHyper h = hp;
        h.seed = seed;
        ClassifierModel m = train(train_set, real_val, h);
        ScenarioRow r;
        r.name = name;
        r.train_total = train_set.size();
        r.train_malignant = count_mal(train_set);
        r.metrics = evaluate(m, real_val);
        return r;
    };

    std::vector<ScenarioRow> rows;
    rows.push_back(row("baseline", real_train, cfg.seed));

    std::size_t synth_total = std::max<std::size_t>(55000 / cfg.scenario_scale, 2);
    std::size_t per_class = synth_total / 2;
    EmbeddingSet synth = detail::make_synthetic_set(
        source, real_train.dim, per_class, per_class, cfg.seed + 101, 1u << 24);
    rows.push_back(row("synth", synth, cfg.seed + 1));

    std::size_t n_mal = count_mal(real_train);
    std::size_t n_ben = real_train.size() - n_mal;
    std::size_t need = n_ben > n_mal ? n_ben - n_mal : 0;
    EmbeddingSet extra = detail::make_synthetic_set(
        source, real_train.dim, 0, need, cfg.seed + 202, 1u << 25);
    rows.push_back(row("aug", detail::concat_sets(real_train, extra),
                       cfg.seed + 2));
    return rows;
}

inline std::string scenarios_to_json(const std::vector<ScenarioRow>& rows) {
    JsonWriter w;
    w.begin_array();
    for (const auto& r : rows) {
        w.begin_object();
        w.kv("scenario", r.name);
        w.kv("train_total", std::uint64_t(r.train_total));
        w.kv("train_malignant", std::uint64_t(r.train_malignant));
        w.kv("acc", r.metrics.acc);
        w.kv("auc", r.metrics.auc);
        w.kv("f1", r.metrics.f1);
        w.kv("sensitivity", r.metrics.sensitivity);
        w.kv("specificity", r.metrics.specificity);
        w.kv("tp", std::uint64_t(r.metrics.tp));
        w.kv("tn", std::uint64_t(r.metrics.tn));
        w.kv("fp", std::uint64_t(r.metrics.fp));
        w.kv("fn", std::uint64_t(r.metrics.fn));
        w.end_object();
    }
    w.end_array();
    return w.take();
}

inline std::string scenarios_to_csv(const std::vector<ScenarioRow>& rows) {
    std::string out =
        "scenario,train_total,train_malignant,acc,auc,f1,sensitivity,"
        "specificity\r\n";
    char buf[64];
    for (const auto& r : rows) {
        out += r.name;
        out += ',' + std::to_string(r.train_total);
        out += ',' + std::to_string(r.train_malignant);
        for (double v : {r.metrics.acc, r.metrics.auc, r.metrics.f1,
                         r.metrics.sensitivity, r.metrics.specificity}) {
            std::snprintf(buf, sizeof buf, ",%.9g", v);
            out += buf;
        }
        out += "\r\n";
    }
    return out;
}

}  // namespace sg
