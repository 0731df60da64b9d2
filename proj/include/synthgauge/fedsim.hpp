#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
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

// Sample-count-weighted parameter mean. Pairwise accumulation keeps the
// result independent of client order to tight tolerance.
inline Vec fedavg(const std::vector<Vec>& params,
                  const std::vector<double>& weights) {
    if (params.empty()) throw ValidationError("fedavg: no clients");
    if (params.size() != weights.size())
        throw ValidationError("fedavg: weight count mismatch");
    const std::size_t len = params[0].size();
    for (const auto& p : params)
        if (p.size() != len)
            throw ValidationError("fedavg: parameter length mismatch");
    double total = 0.0;
    for (double w : weights) {
        if (!(w > 0.0))
            throw ValidationError("fedavg: weights must be positive");
        total += w;
    }
    if (!(total > 0.0)) throw ValidationError("fedavg: zero total weight");
    if (params.size() == 1) return params[0];  // exact identity

    Vec out(len);
    std::vector<double> terms(params.size());
    for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t c = 0; c < params.size(); ++c)
            terms[c] = weights[c] * params[c][i];
        out[i] = pairwise_sum(terms) / total;
    }
    return out;
}

// A client's local training objective over a flat parameter vector.
class Objective {
public:
    virtual ~Objective() = default;
    virtual std::size_t param_size() const = 0;
    // Returns the loss and fills grad (same length as params).
    virtual double loss_and_grad(std::span<const double> params,
                                 std::span<double> grad) = 0;
    // Advances to a new round (fresh latent minibatch etc). Default: no-op.
    virtual void set_round(std::size_t /*round*/) {}
};

// ||theta - c||^2, used by tests as a hand-checkable objective.
class QuadraticObjective final : public Objective {
public:
    explicit QuadraticObjective(Vec center) : center_(std::move(center)) {}
    std::size_t param_size() const override { return center_.size(); }
    double loss_and_grad(std::span<const double> p,
                         std::span<double> grad) override {
        double loss = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            double d = p[i] - center_[i];
            loss += d * d;
            grad[i] = 2.0 * d;
        }
        return loss;
    }

private:
    Vec center_;
};

// Moment-matching loss against target (mean, covariance):
//   ||mu(G(Z)) - mu_t||^2 + lambda * ||Cov(G(Z)) - cov_t||_F^2
// with Z a fixed per-round minibatch of latents. A differentiable stand-in
// for GAN training that keeps the more-data-better-signal mechanism.
class MomentMatchingObjective final : public Objective {
public:
    MomentMatchingObjective(ToyGenerator skeleton, Vec target_mean,
                            SymMatrix target_cov, std::uint64_t seed,
                            std::uint64_t client_id, std::size_t batch = 64,
                            double lambda = 0.5)
        : g_(std::move(skeleton)),
          mean_(std::move(target_mean)),
          cov_(std::move(target_cov)),
          seed_(seed),
          client_id_(client_id),
          batch_(batch),
          lambda_(lambda) {
        set_round(0);
    }

    std::size_t param_size() const override { return param_count(g_); }

    void set_round(std::size_t round) override {
        Prng rng(seed_, 0x6665645fULL ^ client_id_, round);
        latents_.clear();
        for (std::size_t i = 0; i < batch_; ++i)
            latents_.push_back(rng.normal_vec(g_.latent_dim));
    }

    double loss_and_grad(std::span<const double> params,
                         std::span<double> grad) override {
        set_params(g_, params);
        const std::size_t b = latents_.size();
        const std::size_t d = g_.sample_dim;
        std::vector<Vec> ys;
        ys.reserve(b);
        for (const Vec& z : latents_) {
            Vec w = mapping(g_, z, cls_);
            ys.push_back(synthesize(g_, w));
        }
        Vec mu(d, 0.0);
        for (const Vec& y : ys)
            for (std::size_t i = 0; i < d; ++i) mu[i] += y[i];
        for (double& m : mu) m /= double(b);
        Matrix c(d, d);
        for (const Vec& y : ys)
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    c(i, j) += (y[i] - mu[i]) * (y[j] - mu[j]);
        for (double& v : c.a) v /= double(b - 1);

        double loss = 0.0;
        Vec dmu(d);
        for (std::size_t i = 0; i < d; ++i) {
            dmu[i] = mu[i] - mean_[i];
            loss += dmu[i] * dmu[i];
        }
        Matrix dc(d, d);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                dc(i, j) = c(i, j) - cov_(i, j);
                loss += lambda_ * dc(i, j) * dc(i, j);
            }

        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t s = 0; s < b; ++s) {
            // dL/dy_s = (2/b)(mu - mu_t) + (4 lambda/(b-1)) (C - cov_t)(y_s - mu)
            Vec cot(d);
            Vec centered(d);
            for (std::size_t i = 0; i < d; ++i)
                centered[i] = ys[s][i] - mu[i];
            Vec dcx = dc.mul(centered);
            for (std::size_t i = 0; i < d; ++i)
                cot[i] = 2.0 * dmu[i] / double(b) +
                         4.0 * lambda_ * dcx[i] / double(b - 1);
            backprop_params(g_, latents_[s], cls_, cot, grad);
        }
        return loss;
    }

    // Loss of the current parameters against arbitrary reference moments,
    // without touching the gradient path (used for convergence curves).
    double eval_against(std::span<const double> params, const Vec& mean,
                        const SymMatrix& cov) {
        MomentMatchingObjective probe(g_, mean, cov, seed_, client_id_,
                                      batch_, lambda_);
        probe.latents_ = latents_;
        Vec scratch(param_size());
        return probe.loss_and_grad(params, scratch);
    }

private:
    ToyGenerator g_;
    Vec mean_;
    SymMatrix cov_;
    std::uint64_t seed_;
    std::uint64_t client_id_;
    std::size_t batch_;
    double lambda_;
    std::optional<std::uint32_t> cls_;  // unconditional only
    std::vector<Vec> latents_;
};

struct ClientState {
    std::uint64_t id = 0;
    std::size_t sample_count = 0;
    Vec params;
    std::shared_ptr<Objective> objective;
    std::size_t local_steps_done = 0;
    Vec loss_history;  // one entry per local step
};

// Plain gradient descent on the client's local objective.
inline void local_train(ClientState& client, std::size_t steps, double lr) {
    if (steps == 0) return;
    Vec grad(client.params.size());
    for (std::size_t s = 0; s < steps; ++s) {
        double loss = client.objective->loss_and_grad(client.params, grad);
        if (!std::isfinite(loss))
            throw NumericalError("local_train: non-finite loss at step " +
                                 std::to_string(client.local_steps_done + 1) +
                                 " (client " + std::to_string(client.id) + ")");
        for (std::size_t i = 0; i < client.params.size(); ++i)
            client.params[i] -= lr * grad[i];
        client.loss_history.push_back(loss);
        ++client.local_steps_done;
    }
}

struct FedConfig {
    std::vector<std::uint32_t> client_sizes;
    std::size_t rounds = 20;
    std::size_t local_steps = 100;
    double lr = 0.05;
    std::uint64_t seed = 42;
    std::uint32_t latent_dim = 4;
    std::uint32_t sample_dim = 8;
    double class_ratio = 0.02;
};

struct FederationRun {
    FedConfig config;
    std::vector<Vec> round_params;            // aggregated, one per round
    std::vector<Vec> client_losses;           // per client, per local step
    Vec eval_curve;                           // aggregated vs population, per round
    std::vector<std::optional<std::size_t>> rounds_to_threshold;
    double threshold = 0.0;
};

namespace detail {

struct FedProblem {
    DataDistribution dist;
    Vec pop_mean;            // single-class population moments
    SymMatrix pop_cov;
    std::vector<Vec> client_means;
    std::vector<SymMatrix> client_covs;
    ToyGenerator init;
};

// Clients share one distribution and differ only in sample count; each
// client's target moments are its own empirical estimates.
inline FedProblem make_problem(const FedConfig& cfg) {
    FedProblem pr;
    PipelineConfig pc;
    pc.seed = cfg.seed;
    pc.latent_dim = cfg.latent_dim;
    pc.sample_dim = cfg.sample_dim;
    pc.class_ratio = cfg.class_ratio;
    pr.dist = DataDistribution::default_for(pc);
    pr.pop_mean = pr.dist.means[0];
    pr.pop_cov = pr.dist.covariance(0);
    for (std::size_t c = 0; c < cfg.client_sizes.size(); ++c) {
        std::size_t n = cfg.client_sizes[c];
        if (n < 2)
            throw ValidationError("fedsim: client size must be >= 2");
        Prng rng(cfg.seed, 0x636c69656e74ULL, c);
        Matrix x(n, cfg.sample_dim);
        for (std::size_t i = 0; i < n; ++i) {
            Vec v = sample_from_class(pr.dist, 0, rng);
            std::copy(v.begin(), v.end(), x.row(i).begin());
        }
        auto [mu, cov] = mean_cov(x);
        pr.client_means.push_back(std::move(mu));
        pr.client_covs.push_back(std::move(cov));
    }
    pr.init = new_generator(cfg.seed, cfg.latent_dim, cfg.sample_dim, false);
    return pr;
}

}  // namespace detail

// Synchronous FedAvg: every round each client trains local_steps on its own
// moments from the broadcast parameters, then the server aggregates by
// sample count.
inline FederationRun run_federation(const FedConfig& cfg,
                                    double loss_threshold = 0.0) {
    if (cfg.client_sizes.empty())
        throw ValidationError("run_federation: need at least one client");
    if (cfg.rounds < 1)
        throw ValidationError("run_federation: rounds must be >= 1");
    detail::FedProblem pr = detail::make_problem(cfg);

    std::vector<ClientState> clients;
    std::vector<double> weights;
    for (std::size_t c = 0; c < cfg.client_sizes.size(); ++c) {
        ClientState st;
        st.id = c;
        st.sample_count = cfg.client_sizes[c];
        st.params = get_params(pr.init);
        st.objective = std::make_shared<MomentMatchingObjective>(
            pr.init, pr.client_means[c], pr.client_covs[c], cfg.seed, c);
        clients.push_back(std::move(st));
        weights.push_back(double(cfg.client_sizes[c]));
    }

    // big latent batch: the eval curve needs a noise floor well below the
    // moment errors it is meant to resolve
    MomentMatchingObjective evaluator(pr.init, pr.pop_mean, pr.pop_cov,
                                      cfg.seed, 0xe7a1, 512);

    FederationRun run;
    run.config = cfg;
    run.threshold = loss_threshold;
    run.rounds_to_threshold.assign(clients.size(), std::nullopt);
    Vec global = get_params(pr.init);
    for (std::size_t round = 0; round < cfg.rounds; ++round) {
        std::vector<Vec> collected;
        for (auto& cl : clients) {
            cl.params = global;
            cl.objective->set_round(round);
            try {
                local_train(cl, cfg.local_steps, cfg.lr);
            } catch (const NumericalError& e) {
                throw NumericalError("run_federation: round " +
                                     std::to_string(round) + ": " + e.what());
            }
            collected.push_back(cl.params);
        }
        global = fedavg(collected, weights);
        run.round_params.push_back(global);
        double ev = evaluator.eval_against(global, pr.pop_mean, pr.pop_cov);
        run.eval_curve.push_back(ev);
        if (ev <= loss_threshold)
            for (std::size_t c = 0; c < clients.size(); ++c)
                if (!run.rounds_to_threshold[c])
                    run.rounds_to_threshold[c] = round + 1;
    }
    for (auto& cl : clients) run.client_losses.push_back(cl.loss_history);
    return run;
}

struct IsolatedRun {
    Vec loss_history;  // training loss per local step
    Vec eval_curve;    // vs population moments, one entry per round
};

// Same machinery with a single client and no aggregation.
inline IsolatedRun run_isolated(const FedConfig& cfg, std::size_t client_index) {
    if (client_index >= cfg.client_sizes.size())
        throw ValidationError("run_isolated: client index out of range");
    detail::FedProblem pr = detail::make_problem(cfg);

    ClientState st;
    st.id = client_index;
    st.sample_count = cfg.client_sizes[client_index];
    st.params = get_params(pr.init);
    st.objective = std::make_shared<MomentMatchingObjective>(
        pr.init, pr.client_means[client_index], pr.client_covs[client_index],
        cfg.seed, client_index);
    // big latent batch: the eval curve needs a noise floor well below the
    // moment errors it is meant to resolve
    MomentMatchingObjective evaluator(pr.init, pr.pop_mean, pr.pop_cov,
                                      cfg.seed, 0xe7a1, 512);

    IsolatedRun run;
    for (std::size_t round = 0; round < cfg.rounds; ++round) {
        st.objective->set_round(round);
        local_train(st, cfg.local_steps, cfg.lr);
        run.eval_curve.push_back(
            evaluator.eval_against(st.params, pr.pop_mean, pr.pop_cov));
    }
    run.loss_history = st.loss_history;
    return run;
}

struct Speedup {
    bool reached = false;
    double ratio = 0.0;  // isolated steps / federated steps
    std::optional<std::size_t> fed_steps;
    std::optional<std::size_t> iso_steps;
};

// Ratio of local steps to reach `threshold` on the population eval curve.
inline Speedup speedup(const FederationRun& fed, const IsolatedRun& isolated,
                       double threshold) {
    Speedup s;
    for (std::size_t r = 0; r < fed.eval_curve.size(); ++r)
        if (fed.eval_curve[r] <= threshold) {
            s.fed_steps = (r + 1) * fed.config.local_steps;
            break;
        }
    for (std::size_t r = 0; r < isolated.eval_curve.size(); ++r)
        if (isolated.eval_curve[r] <= threshold) {
            s.iso_steps = (r + 1) * fed.config.local_steps;
            break;
        }
    if (s.fed_steps && s.iso_steps) {
        s.reached = true;
        s.ratio = double(*s.iso_steps) / double(*s.fed_steps);
    }
    return s;
}

inline std::string federation_to_json(const FederationRun& run) {
    JsonWriter w;
    w.begin_object();
    w.key("config");
    w.begin_object();
    w.key("client_sizes");
    w.begin_array();
    for (auto s : run.config.client_sizes) w.value(std::uint64_t(s));
    w.end_array();
    w.kv("rounds", std::uint64_t(run.config.rounds));
    w.kv("local_steps", std::uint64_t(run.config.local_steps));
    w.kv("lr", run.config.lr);
    w.kv("seed", std::uint64_t(run.config.seed));
    w.kv("latent_dim", std::uint64_t(run.config.latent_dim));
    w.kv("sample_dim", std::uint64_t(run.config.sample_dim));
    w.end_object();
    w.kv("threshold", run.threshold);
    w.key("eval_curve");
    w.number_array(run.eval_curve);
    w.key("rounds_to_threshold");
    w.begin_array();
    for (const auto& r : run.rounds_to_threshold) {
        if (r) w.value(std::uint64_t(*r));
        else w.null_value();
    }
    w.end_array();
    w.key("final_params");
    w.number_array(run.round_params.back());
    w.end_object();
    return w.take();
}

inline std::string client_losses_to_csv(const FederationRun& run) {
    std::string out = "step";
    for (std::size_t c = 0; c < run.client_losses.size(); ++c)
        out += ",client" + std::to_string(c);
    out += "\r\n";
    std::size_t steps = run.client_losses.empty()
                            ? 0
                            : run.client_losses[0].size();
    char buf[64];
    for (std::size_t s = 0; s < steps; ++s) {
        out += std::to_string(s + 1);
        for (const auto& hist : run.client_losses) {
            std::snprintf(buf, sizeof buf, ",%.9g", hist[s]);
            out += buf;
        }
        out += "\r\n";
    }
    return out;
}

}  // namespace sg
