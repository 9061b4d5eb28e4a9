#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "rporag/pipeline.hpp"

namespace {

namespace fs = std::filesystem;
namespace pl = rporag::pipeline;

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct GlobalFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::string out;
    std::vector<std::string> overrides;
    bool verbose = false;
};

// Config file first, then --set, then the dedicated flags.
pl::PipelineConfig load_config(const GlobalFlags& flags) {
    auto config = pl::Config::load(flags.config);
    for (const auto& assignment : flags.overrides) config.set_assignment(assignment);
    if (flags.seed) config.set("seed", std::to_string(*flags.seed));
    if (flags.workers) config.set("workers", std::to_string(*flags.workers));
    if (!flags.out.empty()) config.set("out.dir", fs::absolute(flags.out).string());
    return pl::resolve(config);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reasoning-path retrieval and preference-data pipeline for KGQA"};
    app.require_subcommand(1, 1);

    GlobalFlags flags;
    app.add_option("-c,--config", flags.config, "pipeline configuration file")->required()->check(CLI::ExistingFile);
    app.add_option("--seed", flags.seed, "global seed (overrides `seed`)");
    app.add_option("--workers", flags.workers, "per-question worker threads (overrides `workers`)")
        ->check(CLI::PositiveNumber);
    app.add_option("--out", flags.out, "output directory (overrides `out.dir`)");
    app.add_option("--set", flags.overrides, "extra key=value override, repeatable");
    app.add_flag("-v,--verbose", flags.verbose, "debug logging");

    using Stage = std::function<pl::Summary(const pl::PipelineConfig&)>;
    const std::vector<std::tuple<std::string, std::string, Stage>> stages{
        {"sample", "sample high-fidelity reasoning paths per (topic, answer) pair", pl::run_sample},
        {"retrieve", "dynamic beam search from topic entities", pl::run_retrieve},
        {"type-train", "train the answer-type predictor", pl::run_type_train},
        {"build-prefs", "construct weighted preference pairs and the trainer config", pl::run_build_prefs},
        {"build-prompts", "render answer-centered prompts and SFT records", pl::run_build_prompts},
        {"eval", "score predictions, coverage, alignment and ARP", pl::run_eval},
    };
    std::map<CLI::App*, Stage> handlers;
    for (const auto& [name, help, fn] : stages) handlers[app.add_subcommand(name, help)] = fn;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        auto code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    spdlog::set_default_logger(spdlog::stderr_logger_mt("rporag"));
    spdlog::set_level(flags.verbose ? spdlog::level::debug : spdlog::level::warn);

    pl::PipelineConfig config;
    try {
        config = load_config(flags);
    } catch (const rporag::Error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        for (const auto& [sub, fn] : handlers) {
            if (!sub->parsed()) continue;
            std::cout << fn(config).dump(2) << '\n';
        }
    } catch (const rporag::DependencyError& e) {
        std::cerr << "dependency error (" << e.stage() << "): " << e.what() << '\n';
        return kExitRuntime;
    } catch (const rporag::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
