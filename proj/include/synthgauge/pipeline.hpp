#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "classifier.hpp"
#include "dataio.hpp"
#include "fedsim.hpp"
#include "jsonw.hpp"
#include "metrics.hpp"
#include "projector.hpp"
#include "sefa.hpp"
#include "toygen.hpp"
#include "viz.hpp"

namespace sg {

inline constexpr const char* kToolkitVersion = "0.1.0";

struct RunManifest {
    std::string subcommand;
    PipelineConfig config;
    std::vector<std::string> inputs;
    std::vector<std::string> artifacts;  // names relative to the out dir
    double duration_seconds = 0.0;
    std::optional<std::string> error;
};

inline std::string manifest_to_json(const RunManifest& m) {
    JsonWriter w;
    w.begin_object();
    w.kv("subcommand", m.subcommand);
    w.kv("toolkit_version", kToolkitVersion);
    w.kv("seed", std::uint64_t(m.config.seed));
    w.key("config");
    w.begin_object();
    w.kv("seed", std::uint64_t(m.config.seed));
    w.kv("latent_dim", std::uint64_t(m.config.latent_dim));
    w.kv("sample_dim", std::uint64_t(m.config.sample_dim));
    w.kv("class_ratio", m.config.class_ratio);
    w.key("client_sizes");
    w.begin_array();
    for (auto s : m.config.client_sizes) w.value(std::uint64_t(s));
    w.end_array();
    w.kv("k", std::uint64_t(m.config.k));
    w.kv("kid_block", std::uint64_t(m.config.kid_block));
    w.kv("kid_blocks", std::uint64_t(m.config.kid_blocks));
    w.kv("ppl_epsilon", m.config.ppl_epsilon);
    w.kv("ppl_paths", std::uint64_t(m.config.ppl_paths));
    w.kv("lr", m.config.lr);
    w.kv("max_epochs", std::uint64_t(m.config.max_epochs));
    w.kv("patience", std::uint64_t(m.config.patience));
    w.kv("fed_exchange_every", std::uint64_t(m.config.fed_exchange_every));
    w.kv("fed_rounds", std::uint64_t(m.config.fed_rounds));
    w.kv("fed_lr", m.config.fed_lr);
    w.kv("n_real", std::uint64_t(m.config.n_real));
    w.kv("n_synth", std::uint64_t(m.config.n_synth));
    w.kv("feature_dim", std::uint64_t(m.config.feature_dim));
    w.kv("project_targets", std::uint64_t(m.config.project_targets));
    w.kv("project_steps", std::uint64_t(m.config.project_steps));
    w.kv("project_lr", m.config.project_lr);
    w.kv("scenario_scale", std::uint64_t(m.config.scenario_scale));
    w.end_object();
    w.key("inputs");
    w.begin_array();
    for (const auto& p : m.inputs) w.value(p);
    w.end_array();
    w.key("artifacts");
    w.begin_array();
    for (const auto& p : m.artifacts) w.value(p);
    w.end_array();
    w.kv("duration_seconds", m.duration_seconds);
    w.key("error");
    if (m.error) w.value(*m.error);
    else w.null_value();
    w.end_object();
    return w.take();
}

namespace stages {

namespace fs = std::filesystem;

// Generate the desk-scale real dataset and a matching synthetic set from the
// conditional toy generator.
inline std::pair<fs::path, fs::path> gen(const PipelineConfig& cfg,
                                         const fs::path& out,
                                         RunManifest& manifest) {
    DataDistribution dist = DataDistribution::default_for(cfg);
    EmbeddingSet real = sample_dataset(dist, cfg.n_real, cfg.seed);
    ToyGenerator g = new_generator(cfg, /*conditional=*/true);

    EmbeddingSet synth;
    synth.dim = cfg.sample_dim;
    synth.source = Source::synthetic;
    std::size_t n_mal = std::size_t(cfg.class_ratio * double(cfg.n_synth));
    Prng rng(cfg.seed, 0x67656e73796eULL);
    for (std::size_t i = 0; i < cfg.n_synth; ++i) {
        std::uint32_t cls = (i < cfg.n_synth - n_mal) ? 0 : 1;
        Vec z = rng.normal_vec(cfg.latent_dim);
        synth.push_row(synthesize(g, mapping(g, z, cls)), std::uint8_t(cls),
                       std::uint32_t(i));
    }
    fs::path real_path = out / "real.emb";
    fs::path synth_path = out / "synth.emb";
    write_embeddings(real, real_path);
    write_embeddings(synth, synth_path);
    manifest.artifacts.push_back(real_path.filename().string());
    manifest.artifacts.push_back(synth_path.filename().string());
    return {real_path, synth_path};
}

inline MetricReport metrics(const PipelineConfig& cfg, const EmbeddingSet& real,
                            const EmbeddingSet& synth, const fs::path& out,
                            RunManifest& manifest) {
    ToyGenerator g = new_generator(cfg, true);
    FeatureExtractor ex =
        FeatureExtractor::make_random(cfg.sample_dim, cfg.feature_dim,
                                      cfg.seed);
    MetricReport report = evaluate_all(real, synth, g, ex, cfg);
    fs::path path = out / "report.json";
    write_text(path, report_to_json(report));
    manifest.artifacts.push_back(path.filename().string());
    return report;
}

inline std::vector<ScenarioRow> classify(const PipelineConfig& cfg,
                                         const fs::path& out,
                                         RunManifest& manifest) {
    DataDistribution dist = DataDistribution::default_for(cfg);
    EmbeddingSet train_set = sample_dataset(dist, cfg.n_real, cfg.seed);
    EmbeddingSet val_set = sample_dataset(dist, std::max(cfg.n_real / 4u, 8u),
                                          cfg.seed + 7);
    ToyGenerator g = new_generator(cfg, true);
    auto rows = run_scenarios(train_set, val_set, generator_source(g), cfg);
    fs::path jpath = out / "scenarios.json";
    fs::path cpath = out / "scenarios.csv";
    write_text(jpath, scenarios_to_json(rows));
    write_text(cpath, scenarios_to_csv(rows));
    manifest.artifacts.push_back(jpath.filename().string());
    manifest.artifacts.push_back(cpath.filename().string());
    return rows;
}

inline BatchProjection project(const PipelineConfig& cfg,
                               const EmbeddingSet& real, const fs::path& out,
                               RunManifest& manifest) {
    ToyGenerator g = new_generator(cfg, true);
    FeatureExtractor ex = FeatureExtractor::make_identity(cfg.sample_dim);
    std::size_t n = std::min<std::size_t>(cfg.project_targets, real.size());
    EmbeddingSet targets;
    targets.dim = real.dim;
    targets.source = real.source;
    for (std::size_t i = 0; i < n; ++i)
        targets.push_row(real.row_double(i), real.labels[i], real.ids[i]);
    ProjectOptions opt;
    opt.max_steps = cfg.project_steps;
    opt.lr = cfg.project_lr;
    opt.seed = cfg.seed;
    opt.cls = 0;  // project into the benign branch of the conditional model
    BatchProjection batch = batch_project(targets, g, ex, opt);
    fs::path path = out / "projections.json";
    write_text(path, batch_to_json(batch));
    manifest.artifacts.push_back(path.filename().string());
    return batch;
}

inline fs::path sefa_stage(const PipelineConfig& cfg, const fs::path& out,
                           RunManifest& manifest) {
    ToyGenerator g = new_generator(cfg, true);
    DirectionBasis basis = factorize(g);
    fs::path bpath = out / "sefa_basis.json";
    write_text(bpath, basis_to_json(basis));
    manifest.artifacts.push_back(bpath.filename().string());

    Prng rng(cfg.seed, 0x73656661ULL);
    Vec z = rng.normal_vec(cfg.latent_dim);
    Vec w = mapping(g, z, 0u);
    std::vector<std::size_t> indices;
    for (std::size_t i = 0; i < std::min<std::size_t>(3, basis.size()); ++i)
        indices.push_back(i);
    std::vector<double> alphas = {-2.0, -1.0, 0.0, 1.0, 2.0};
    auto grid = edit_sweep(g, w, basis, indices, alphas);

    std::vector<std::vector<std::string>> table;
    std::vector<std::string> header = {"index", "alpha"};
    for (std::size_t j = 0; j < cfg.sample_dim; ++j)
        header.push_back("c" + std::to_string(j));
    table.push_back(header);
    char buf[40];
    for (const auto& cell : grid) {
        std::vector<std::string> row;
        row.push_back(std::to_string(cell.index));
        std::snprintf(buf, sizeof buf, "%.9g", cell.alpha);
        row.emplace_back(buf);
        for (double v : cell.sample) {
            std::snprintf(buf, sizeof buf, "%.9g", v);
            row.emplace_back(buf);
        }
        table.push_back(std::move(row));
    }
    fs::path cpath = out / "sefa_sweep.csv";
    emit_csv(table, cpath);
    manifest.artifacts.push_back(cpath.filename().string());

    // small-multiples scatter of the first two sample components per cell
    Matrix layout(grid.size(), 2);
    std::vector<std::uint8_t> labels(grid.size()), synth(grid.size(), 1);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        layout(i, 0) = grid[i].sample[0];
        layout(i, 1) = grid[i].sample.size() > 1 ? grid[i].sample[1] : 0.0;
        labels[i] = std::uint8_t(grid[i].index % 2);
    }
    fs::path spath = out / "sefa_sweep.svg";
    emit_scatter(layout, labels, synth, spath);
    manifest.artifacts.push_back(spath.filename().string());
    return bpath;
}

inline FederationRun fedsim_stage(const PipelineConfig& cfg,
                                  const fs::path& out, RunManifest& manifest) {
    FedConfig fc;
    fc.client_sizes = cfg.client_sizes;
    fc.rounds = cfg.fed_rounds;
    fc.local_steps = cfg.fed_exchange_every;
    fc.lr = cfg.fed_lr;
    fc.seed = cfg.seed;
    fc.latent_dim = std::min(cfg.latent_dim, 4u);
    fc.sample_dim = std::min(cfg.sample_dim, 8u);
    FederationRun run = run_federation(fc);
    fs::path jpath = out / "fedrun.json";
    fs::path cpath = out / "fed_losses.csv";
    write_text(jpath, federation_to_json(run));
    write_text(cpath, client_losses_to_csv(run));
    manifest.artifacts.push_back(jpath.filename().string());
    manifest.artifacts.push_back(cpath.filename().string());
    return run;
}

inline fs::path tsne_stage(const PipelineConfig& cfg, const EmbeddingSet& real,
                           const EmbeddingSet& synth, const fs::path& out,
                           RunManifest& manifest) {
    EmbeddingSet all = real;
    std::vector<std::uint8_t> synthetic(real.size(), 0);
    for (std::size_t i = 0; i < synth.size(); ++i) {
        all.push_row(synth.row_double(i), synth.labels[i],
                     std::uint32_t(1u << 26) + synth.ids[i]);
        synthetic.push_back(1);
    }
    TsneConfig tc;
    tc.seed = cfg.seed;
    tc.output_dims = 3;
    tc.perplexity = std::min(30.0, double(all.size() - 1) / 3.0 - 1.0);
    tc.iterations = 500;
    Matrix layout = tsne(all.as_matrix(), tc);

    std::vector<std::vector<std::string>> table;
    table.push_back({"id", "label", "synthetic", "x", "y", "z"});
    char buf[40];
    for (std::size_t i = 0; i < all.size(); ++i) {
        std::vector<std::string> row;
        row.push_back(std::to_string(all.ids[i]));
        row.push_back(std::to_string(int(all.labels[i])));
        row.push_back(std::to_string(int(synthetic[i])));
        for (std::size_t k = 0; k < 3; ++k) {
            std::snprintf(buf, sizeof buf, "%.9g", layout(i, k));
            row.emplace_back(buf);
        }
        table.push_back(std::move(row));
    }
    fs::path cpath = out / "tsne.csv";
    emit_csv(table, cpath);
    manifest.artifacts.push_back(cpath.filename().string());
    fs::path spath = out / "tsne.svg";
    emit_scatter(layout, all.labels, synthetic, spath);
    manifest.artifacts.push_back(spath.filename().string());
    return spath;
}

}  // namespace stages

}  // namespace sg
