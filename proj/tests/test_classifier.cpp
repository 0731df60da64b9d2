#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "synthgauge/classifier.hpp"
#include "synthgauge/rng.hpp"

using namespace sg;

namespace {

EmbeddingSet labeled_set(const std::vector<Vec>& rows,
                         const std::vector<std::uint8_t>& labels,
                         std::uint32_t id_base = 0) {
    EmbeddingSet s;
    s.dim = std::uint32_t(rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        s.push_row(rows[i], labels[i], id_base + std::uint32_t(i));
    return s;
}

// two well-separated 2-D blobs
EmbeddingSet blobs(std::size_t n_per_class, std::uint64_t seed,
                   std::uint32_t id_base = 0) {
    Prng rng(seed);
    std::vector<Vec> rows;
    std::vector<std::uint8_t> labels;
    for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
        double c = i < n_per_class ? -2.0 : 2.0;
        rows.push_back({c + 0.3 * rng.normal(), c + 0.3 * rng.normal()});
        labels.push_back(i < n_per_class ? 0 : 1);
    }
    return labeled_set(rows, labels, id_base);
}

ClassifierModel hand_model() {
    // logit(x) = 4 * tanh(3 * x0): positive iff x0 > 0
    ClassifierModel m;
    m.hidden.w = Matrix(1, 1);
    m.hidden.w(0, 0) = 3.0;
    m.hidden.b = {0.0};
    m.head_w = {4.0};
    m.head_b = 0.0;
    return m;
}

}  // namespace

TEST_CASE("training separates two blobs perfectly") {
    EmbeddingSet tr = blobs(30, 1);
    EmbeddingSet val = blobs(15, 2, 1000);
    TrainHyper hp;
    hp.lr = 0.05;
    hp.max_epochs = 200;
    hp.patience = 200;
    ClassifierModel m = train(tr, val, hp);
    ClsMetrics r = evaluate(m, val);
    CHECK(r.acc == 1.0);
    CHECK(r.auc == 1.0);
    CHECK(r.f1 == 1.0);
}

TEST_CASE("training is deterministic in the seed") {
    EmbeddingSet tr = blobs(20, 3);
    EmbeddingSet val = blobs(10, 4, 1000);
    TrainHyper hp;
    hp.lr = 0.01;
    hp.max_epochs = 10;
    hp.patience = 10;
    ClassifierModel a = train(tr, val, hp);
    ClassifierModel b = train(tr, val, hp);
    CHECK(model_params(a) == model_params(b));
    hp.seed = 99;
    ClassifierModel c = train(tr, val, hp);
    CHECK(model_params(a) != model_params(c));
}

TEST_CASE("early stopping halts after patience non-improving epochs") {
    // validation labels inverted relative to training: val loss climbs as the
    // model fits, so the stop fires as soon as patience is exhausted
    EmbeddingSet tr = blobs(30, 5);
    EmbeddingSet val = blobs(15, 6, 1000);
    for (auto& l : val.labels) l = l ? 0 : 1;
    TrainHyper hp;
    hp.lr = 0.05;
    hp.max_epochs = 50;
    hp.patience = 3;
    ClassifierModel m = train(tr, val, hp);
    CHECK(m.log.size() < 50);
    // stopping invariant: best epoch sits exactly patience entries from the end
    CHECK(m.best_epoch == m.log.size() - 1 - hp.patience);
    double best = m.log[m.best_epoch].val_loss;
    for (std::size_t e = m.best_epoch + 1; e < m.log.size(); ++e)
        CHECK(m.log[e].val_loss >= best);
}

TEST_CASE("train validation") {
    EmbeddingSet tr = blobs(5, 7);
    EmbeddingSet val = blobs(3, 8, 1000);
    TrainHyper hp;
    hp.patience = 30;
    hp.max_epochs = 20;
    CHECK_THROWS_AS(train(tr, val, hp), ValidationError);
    EmbeddingSet one_class = labeled_set({{0.0, 0.0}, {1.0, 1.0}}, {0, 0});
    CHECK_THROWS_AS(train(one_class, val, TrainHyper{}), ValidationError);
}

TEST_CASE("loss gradient matches finite differences") {
    EmbeddingSet data = blobs(8, 9);
    const std::size_t in = 2, hid = 4;
    const std::size_t np = detail::cls_param_count(in, hid);
    Prng rng(10);
    Vec p = rng.normal_vec(np);
    Vec grad(np);
    detail::cls_loss(p, in, hid, data, grad);
    const double h = 1e-6;
    for (std::size_t i = 0; i < np; ++i) {
        Vec pp = p, pm = p;
        pp[i] += h;
        pm[i] -= h;
        double fd = (detail::cls_loss(pp, in, hid, data, {}) -
                     detail::cls_loss(pm, in, hid, data, {})) /
                    (2 * h);
        CHECK(std::abs(grad[i] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("predict matches a hand computation") {
    ClassifierModel m = hand_model();
    CHECK(predict_logit(m, Vec{0.5}) ==
          doctest::Approx(4.0 * std::tanh(1.5)).epsilon(1e-12));
    CHECK(predict_proba(m, Vec{0.0}) == doctest::Approx(0.5).epsilon(1e-15));
    // proba is a monotone map of the logit
    CHECK(predict_proba(m, Vec{1.0}) > predict_proba(m, Vec{0.2}));
    Vec bad(3, 0.0);
    CHECK_THROWS_AS(predict_logit(m, bad), ValidationError);
}

TEST_CASE("extract_embedding returns the hidden activations") {
    ClassifierModel m = hand_model();
    Vec h = extract_embedding(m, Vec{0.7});
    REQUIRE(h.size() == 1);
    CHECK(h[0] == doctest::Approx(std::tanh(2.1)).epsilon(1e-12));
    EmbeddingSet set = labeled_set({{0.7}, {-0.7}}, {1, 0});
    EmbeddingSet emb = extract_embeddings(m, set);
    CHECK(emb.dim == 1);
    CHECK(emb.labels == set.labels);
    CHECK(emb.ids == set.ids);
}

TEST_CASE("auc separated, tied, and inverted cases") {
    std::vector<double> s1 = {0.1, 0.2, 0.8, 0.9};
    std::vector<std::uint8_t> l = {0, 0, 1, 1};
    CHECK(auc(s1, l) == doctest::Approx(1.0));
    std::vector<double> tied(4, 0.5);
    CHECK(auc(tied, l) == doctest::Approx(0.5));
    std::vector<double> inv = {0.9, 0.8, 0.2, 0.1};
    CHECK(auc(inv, l) == doctest::Approx(0.0));
    std::vector<std::uint8_t> single(4, 1);
    CHECK_THROWS_AS(auc(s1, single), ValidationError);
}

TEST_CASE("auc matches the pair-counting oracle") {
    Prng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 12;
        std::vector<double> scores(n);
        std::vector<std::uint8_t> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            // coarse grid forces plenty of ties
            scores[i] = double(rng.index(5)) / 4.0;
            labels[i] = std::uint8_t(i % 2);
        }
        double pairs = 0, wins = 0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                if (!(labels[i] != 0 && labels[j] == 0)) continue;
                pairs += 1;
                if (scores[i] > scores[j]) wins += 1;
                else if (scores[i] == scores[j]) wins += 0.5;
            }
        CHECK(auc(scores, labels) ==
              doctest::Approx(wins / pairs).epsilon(1e-12));
    }
}

TEST_CASE("auc is invariant under monotone score transforms") {
    Prng rng(12);
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    for (int i = 0; i < 30; ++i) {
        scores.push_back(rng.normal());
        labels.push_back(std::uint8_t(rng.index(2)));
    }
    if (std::count(labels.begin(), labels.end(), 1) == 0) labels[0] = 1;
    if (std::count(labels.begin(), labels.end(), 0) == 0) labels[1] = 0;
    double base = auc(scores, labels);
    std::vector<double> mapped(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        mapped[i] = std::exp(3.0 * scores[i]) - 5.0;
    CHECK(auc(mapped, labels) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("evaluate hand-checked confusion on six samples") {
    ClassifierModel m = hand_model();
    // logit sign follows x0: +,+,-,-,+,-
    EmbeddingSet test = labeled_set(
        {{1.0}, {1.0}, {-1.0}, {-1.0}, {1.0}, {-1.0}}, {1, 0, 0, 1, 1, 0});
    ClsMetrics r = evaluate(m, test);
    CHECK(r.tp == 2);
    CHECK(r.fp == 1);
    CHECK(r.tn == 2);
    CHECK(r.fn == 1);
    CHECK(r.acc == doctest::Approx(4.0 / 6.0));
    CHECK(r.sensitivity == doctest::Approx(2.0 / 3.0));
    CHECK(r.specificity == doctest::Approx(2.0 / 3.0));
    double prec = 2.0 / 3.0;
    CHECK(r.f1 == doctest::Approx(2 * prec * (2.0 / 3.0) /
                                  (prec + 2.0 / 3.0)));
}

TEST_CASE("constant predictor lands on the base rate") {
    ClassifierModel m = hand_model();
    m.head_w = {0.0};
    m.head_b = -1.0;  // proba < 0.5 everywhere: predicts class 0
    EmbeddingSet test = labeled_set({{1.0}, {2.0}, {3.0}, {4.0}}, {1, 0, 0, 0});
    ClsMetrics r = evaluate(m, test);
    CHECK(r.acc == doctest::Approx(0.75));
    CHECK(r.tp == 0);
    CHECK(r.fn == 1);
    CHECK(r.auc == doctest::Approx(0.5));  // all scores tie
}

TEST_CASE("threshold sweep moves the confusion monotonically") {
    EmbeddingSet tr = blobs(20, 13);
    EmbeddingSet val = blobs(10, 14, 1000);
    TrainHyper hp;
    hp.lr = 0.05;
    hp.max_epochs = 100;
    hp.patience = 100;
    ClassifierModel m = train(tr, val, hp);
    std::size_t prev_tp = val.size(), prev_tn = 0;
    for (double thr : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        ClsMetrics r = evaluate(m, val, thr);
        CHECK(r.tp <= prev_tp);
        CHECK(r.tn >= prev_tn);
        prev_tp = r.tp;
        prev_tn = r.tn;
    }
}

TEST_CASE("scenario protocol: replay source, balancing, shared validation") {
    EmbeddingSet real_train = blobs(20, 15);
    // imbalance it: drop most of class 1
    EmbeddingSet imb;
    imb.dim = 2;
    for (std::size_t i = 0; i < real_train.size(); ++i) {
        if (real_train.labels[i] == 1 && i % 5 != 0) continue;
        imb.push_row(real_train.row_double(i), real_train.labels[i],
                     std::uint32_t(imb.size()));
    }
    EmbeddingSet val = blobs(10, 16, 1000);

    // deterministic replay source: fixed blob per class, no model involved
    std::vector<std::uint64_t> seeds_seen;
    SyntheticSource source = [&](std::uint32_t cls, std::size_t count,
                                 std::uint64_t seed) {
        seeds_seen.push_back(seed);
        Prng rng(seed, 0x7265706cULL, cls);
        std::vector<Vec> out;
        double c = cls == 0 ? -2.0 : 2.0;
        for (std::size_t i = 0; i < count; ++i)
            out.push_back({c + 0.3 * rng.normal(), c + 0.3 * rng.normal()});
        return out;
    };

    PipelineConfig cfg;
    cfg.lr = 0.05;
    cfg.max_epochs = 60;
    cfg.patience = 60;
    cfg.scenario_scale = 1000;  // 55 synthetic samples, 27 per class
    auto rows = run_scenarios(imb, val, source, cfg);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].name == "baseline");
    CHECK(rows[1].name == "synth");
    CHECK(rows[2].name == "aug");

    std::size_t n_mal = rows[0].train_malignant;
    std::size_t n_ben = rows[0].train_total - n_mal;
    CHECK(rows[0].train_total == imb.size());

    CHECK(rows[1].train_total == 54);  // 2 * (55 / 2)
    CHECK(rows[1].train_malignant == 27);

    // augmentation adds exactly the count that balances the classes
    CHECK(rows[2].train_total == imb.size() + (n_ben - n_mal));
    CHECK(rows[2].train_malignant == n_ben);

    // every row is scored on the same real validation set
    for (const auto& r : rows)
        CHECK(r.metrics.tp + r.metrics.tn + r.metrics.fp + r.metrics.fn ==
              val.size());

    // separable setup: synthetic data must train a working model too
    CHECK(rows[1].metrics.acc == 1.0);
    CHECK(rows[2].metrics.acc == 1.0);

    // the replay source saw deterministic seeds, so reruns reproduce rows
    auto again = run_scenarios(imb, val, source, cfg);
    CHECK(scenarios_to_json(rows) == scenarios_to_json(again));
    std::string csv = scenarios_to_csv(rows);
    CHECK(csv.find("baseline,") != std::string::npos);
    CHECK(csv.find("\r\n") != std::string::npos);
}
