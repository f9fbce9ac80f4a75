// Command-line front end. Every subcommand resolves its upstream artifacts
// through the ensure_* stages, so any one of them is independently runnable
// against a shared output directory.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pauth/harness.hpp"

namespace {

void print_comparison(const std::vector<pauth::ComparisonRow>& table) {
    std::printf("%-16s %8s %8s %8s %8s\n", "policy", "prec@1", "prec@5", "rec@5", "rec@10");
    for (const pauth::ComparisonRow& r : table) {
        std::printf("%-16s %8.4f %8.4f %8.4f %8.4f\n", r.policy.c_str(), r.prec1, r.prec5, r.rec5,
                    r.rec10);
    }
}

void print_ablation(const std::vector<pauth::AblationRow>& table) {
    std::printf("%-12s %8s %8s %8s %8s %14s\n", "variant", "prec@1", "prec@5", "rec@5", "rec@10",
                "chance_prec@1");
    for (const pauth::AblationRow& r : table) {
        std::printf("%-12s %8.4f %8.4f %8.4f %8.4f %14.4f\n", r.variant.c_str(), r.prec1, r.prec5,
                    r.rec5, r.rec10, r.chance_prec1);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"persona authentication pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir;
    std::string preset;
    std::uint64_t seed = 0;
    auto* config_opt = app.add_option("--config", config_path, "configuration file (key = value)");
    auto* seed_opt = app.add_option("--seed", seed, "root RNG seed");
    auto* out_opt = app.add_option("--out", out_dir, "artifact output directory");
    app.add_option("--preset", preset, "config preset applied before --config")
        ->check(CLI::IsMember({"desk", "paper-scale"}));

    app.add_subcommand("print-config", "dump the resolved configuration and exit");
    app.add_subcommand("gen-personas", "sample disjoint train/test persona sets");
    app.add_subcommand("train-identifier", "synthesize the dialog corpus and train the embeddings");
    app.add_subcommand("pretrain-verifier", "imitation-pretrain the question policy on expert data");
    app.add_subcommand("train-verifier", "Q-learning refinement of the question policy");
    app.add_subcommand("evaluate", "score learned + baseline policies on held-out personas");
    app.add_subcommand("ablation", "evaluate the learned policy across generator variants");
    app.add_subcommand("density-check", "density estimator convergence runs against the Gaussian oracle");
    app.add_subcommand("mi-check", "mutual-information sanity runs on an engineered persona pool");

    CLI11_PARSE(app, argc, argv);
    const std::string cmd = app.get_subcommands().front()->get_name();

    try {
        pauth::ExperimentConfig cfg;
        if (!preset.empty()) pauth::apply_preset(cfg, preset);
        if (config_opt->count() > 0) cfg = pauth::load_config_file(config_path, cfg);
        if (seed_opt->count() > 0) cfg.seed = seed;
        if (out_opt->count() > 0) cfg.out_dir = out_dir;

        if (cmd == "print-config") {
            std::cout << pauth::dump_config(cfg);
            return 0;
        }
        if (cmd == "gen-personas") {
            const pauth::PersonaSets sets = pauth::ensure_personas(cfg);
            std::cout << "personas: " << sets.train.size() << " train, " << sets.test.size()
                      << " test\n";
        } else if (cmd == "train-identifier") {
            pauth::ensure_identifier(cfg);
            std::cout << "identifier ready\n";
        } else if (cmd == "pretrain-verifier") {
            pauth::ensure_pretrained_verifier(cfg);
            std::cout << "pretrained verifier ready\n";
        } else if (cmd == "train-verifier") {
            pauth::ensure_verifier(cfg);
            std::cout << "verifier ready\n";
        } else if (cmd == "evaluate") {
            print_comparison(pauth::run_policy_comparison(cfg));
        } else if (cmd == "ablation") {
            print_ablation(pauth::run_ablation(cfg));
        } else if (cmd == "density-check") {
            pauth::run_density_check(cfg);
            std::cout << "density check written\n";
        } else if (cmd == "mi-check") {
            pauth::run_mi_check(cfg);
            std::cout << "mi check written\n";
        }
        pauth::write_manifest(cfg);
        std::cout << "artifacts: " << cfg.out_dir << "\n";
        return 0;
    } catch (const pauth::StageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: [stage=" << cmd << "] " << e.what() << "\n";
        return 2;
    }
}
