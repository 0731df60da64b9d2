#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "synthgauge/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CliOptions {
    std::string config_path;
    std::string out_dir = "out";
    std::string real_path;
    std::string gen_path;
    std::optional<std::uint64_t> seed;
    int threads = 0;  // 0 = auto; accepted for forward compatibility
};

sg::PipelineConfig load_config(const CliOptions& o) {
    sg::PipelineConfig cfg;
    if (!o.config_path.empty()) cfg = sg::read_config(o.config_path);
    if (o.seed) cfg.seed = *o.seed;
    return cfg;
}

void add_common(CLI::App* cmd, CliOptions& o) {
    cmd->add_option("--config", o.config_path, "Pipeline config JSON");
    cmd->add_option("--seed", o.seed, "Seed override (wins over config)");
    cmd->add_option("--out", o.out_dir, "Output directory");
    cmd->add_option("--threads", o.threads, "Worker threads (0 = auto)")
        ->envname("SYNTHGAUGE_THREADS");
}

int run_command(const std::string& name, const CliOptions& o,
                const std::function<void(const sg::PipelineConfig&,
                                         const fs::path&, sg::RunManifest&)>& body) {
    auto start = std::chrono::steady_clock::now();
    sg::RunManifest manifest;
    manifest.subcommand = name;
    fs::path out(o.out_dir);
    int code = 0;
    try {
        manifest.config = load_config(o);
        fs::create_directories(out);
        if (!o.config_path.empty()) manifest.inputs.push_back(o.config_path);
        if (!o.real_path.empty()) manifest.inputs.push_back(o.real_path);
        if (!o.gen_path.empty()) manifest.inputs.push_back(o.gen_path);
        body(manifest.config, out, manifest);
    } catch (const sg::ValidationError& e) {
        manifest.error = e.what();
        std::cerr << "error: " << e.what() << "\n";
        code = 2;
    } catch (const sg::NumericalError& e) {
        manifest.error = e.what();
        std::cerr << "error: " << e.what() << "\n";
        code = 3;
    } catch (const std::exception& e) {
        manifest.error = e.what();
        std::cerr << "error: " << e.what() << "\n";
        code = 1;
    }
    manifest.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    std::error_code ec;
    fs::create_directories(out, ec);
    if (!ec) {
        try {
            sg::write_text(out / "manifest.json",
                           sg::manifest_to_json(manifest));
        } catch (const std::exception&) {
            // the manifest is best-effort on failure paths
        }
    }
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthgauge: generate-and-validate toolkit for synthetic data"};
    app.require_subcommand(1);

    CliOptions o;

    auto* cmd_gen = app.add_subcommand("gen", "Sample real + synthetic sets");
    add_common(cmd_gen, o);

    auto* cmd_metrics =
        app.add_subcommand("metrics", "Run the full metric battery");
    add_common(cmd_metrics, o);
    cmd_metrics->add_option("--real", o.real_path, "Real EMB1 file")
        ->required();
    cmd_metrics->add_option("--gen", o.gen_path, "Generated EMB1 file")
        ->required();

    auto* cmd_project =
        app.add_subcommand("project", "Invert targets into latent space");
    add_common(cmd_project, o);
    cmd_project->add_option("--real", o.real_path, "Targets EMB1 file")
        ->required();

    auto* cmd_sefa =
        app.add_subcommand("sefa", "Latent direction basis and edit sweep");
    add_common(cmd_sefa, o);

    auto* cmd_fedsim =
        app.add_subcommand("fedsim", "Federated averaging simulation");
    add_common(cmd_fedsim, o);

    auto* cmd_classify =
        app.add_subcommand("classify", "Scenario-table classifier protocol");
    add_common(cmd_classify, o);

    auto* cmd_tsne = app.add_subcommand("tsne", "Exact t-SNE embedding");
    add_common(cmd_tsne, o);
    cmd_tsne->add_option("--real", o.real_path, "Input EMB1 file")->required();
    cmd_tsne->add_option("--gen", o.gen_path, "Optional second EMB1 file");

    auto* cmd_pipeline = app.add_subcommand(
        "pipeline", "Full generate -> validate -> explain run");
    add_common(cmd_pipeline, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    if (cmd_gen->parsed())
        return run_command("gen", o, [](const sg::PipelineConfig& cfg,
                                        const fs::path& out,
                                        sg::RunManifest& m) {
            auto [r, s] = sg::stages::gen(cfg, out, m);
            std::cout << "gen: wrote " << r.string() << " and " << s.string()
                      << "\n";
        });

    if (cmd_metrics->parsed())
        return run_command("metrics", o, [&](const sg::PipelineConfig& cfg,
                                             const fs::path& out,
                                             sg::RunManifest& m) {
            sg::EmbeddingSet real = sg::read_embeddings(o.real_path);
            sg::EmbeddingSet gen = sg::read_embeddings(o.gen_path);
            sg::MetricReport rep = sg::stages::metrics(cfg, real, gen, out, m);
            std::printf(
                "metrics: fid=%.6g kid=%.6g p=%.4f r=%.4f ppl=%.6g auth=%.4f\n",
                rep.fid, rep.kid_mean, rep.precision, rep.recall, rep.ppl,
                rep.authenticity);
        });

    if (cmd_project->parsed())
        return run_command("project", o, [&](const sg::PipelineConfig& cfg,
                                             const fs::path& out,
                                             sg::RunManifest& m) {
            sg::EmbeddingSet real = sg::read_embeddings(o.real_path);
            sg::BatchProjection b = sg::stages::project(cfg, real, out, m);
            std::printf("project: %zu targets, mean cosine %.6g, median %.6g\n",
                        b.results.size(), b.stats.mean, b.stats.median);
        });

    if (cmd_sefa->parsed())
        return run_command("sefa", o, [](const sg::PipelineConfig& cfg,
                                         const fs::path& out,
                                         sg::RunManifest& m) {
            sg::stages::sefa_stage(cfg, out, m);
            std::cout << "sefa: basis and sweep written\n";
        });

    if (cmd_fedsim->parsed())
        return run_command("fedsim", o, [](const sg::PipelineConfig& cfg,
                                           const fs::path& out,
                                           sg::RunManifest& m) {
            sg::FederationRun run = sg::stages::fedsim_stage(cfg, out, m);
            std::printf("fedsim: %zu rounds, final eval loss %.6g\n",
                        run.eval_curve.size(), run.eval_curve.back());
        });

    if (cmd_classify->parsed())
        return run_command("classify", o, [](const sg::PipelineConfig& cfg,
                                             const fs::path& out,
                                             sg::RunManifest& m) {
            auto rows = sg::stages::classify(cfg, out, m);
            for (const auto& r : rows)
                std::printf("classify: %-8s acc=%.4f auc=%.4f\n",
                            r.name.c_str(), r.metrics.acc, r.metrics.auc);
        });

    if (cmd_tsne->parsed())
        return run_command("tsne", o, [&](const sg::PipelineConfig& cfg,
                                          const fs::path& out,
                                          sg::RunManifest& m) {
            sg::EmbeddingSet real = sg::read_embeddings(o.real_path);
            sg::EmbeddingSet synth;
            if (!o.gen_path.empty()) synth = sg::read_embeddings(o.gen_path);
            sg::stages::tsne_stage(cfg, real, synth, out, m);
            std::cout << "tsne: layout written\n";
        });

    if (cmd_pipeline->parsed())
        return run_command("pipeline", o, [](const sg::PipelineConfig& cfg,
                                             const fs::path& out,
                                             sg::RunManifest& m) {
            auto [real_path, synth_path] = sg::stages::gen(cfg, out, m);
            std::cout << "pipeline[gen]: datasets written\n";
            sg::EmbeddingSet real = sg::read_embeddings(real_path);
            sg::EmbeddingSet synth = sg::read_embeddings(synth_path);
            sg::MetricReport rep =
                sg::stages::metrics(cfg, real, synth, out, m);
            std::printf("pipeline[metrics]: fid=%.6g auth=%.4f\n", rep.fid,
                        rep.authenticity);
            auto rows = sg::stages::classify(cfg, out, m);
            std::printf("pipeline[classify]: %zu scenario rows\n",
                        rows.size());
            sg::BatchProjection b = sg::stages::project(cfg, real, out, m);
            std::printf("pipeline[project]: mean cosine %.6g\n", b.stats.mean);
            sg::stages::tsne_stage(cfg, real, synth, out, m);
            std::cout << "pipeline[tsne]: layout written\n";
        });

    return 1;
}
