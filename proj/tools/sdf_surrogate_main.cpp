#include <cstdio>
#include <exception>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "sdfsur/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"latent shape codes and a coordinate-network field surrogate"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string out_dir;
    long long seed = 0;
    int jobs = 0;
    app.add_option("--config", config_path, "key = value configuration file");
    app.add_option("--out", out_dir, "output directory (overrides config)");
    auto* seed_opt = app.add_option("--seed", seed, "run seed (overrides config)");
    auto* jobs_opt = app.add_option("--jobs", jobs, "worker count (overrides config)");

    using Stage = int (*)(const sdfsur::RunConfig&);
    const std::vector<std::pair<std::string, Stage>> stages = {
        {"gen", sdfsur::cmd_gen},
        {"train-sdf", sdfsur::cmd_train_sdf},
        {"infer-codes", sdfsur::cmd_infer_codes},
        {"train-phys", sdfsur::cmd_train_phys},
        {"eval", sdfsur::cmd_eval},
        {"reconstruct", sdfsur::cmd_reconstruct},
        {"sweep", sdfsur::cmd_sweep},
    };
    for (const auto& [name, fn] : stages) {
        (void)fn;
        app.add_subcommand(name);
    }

    CLI11_PARSE(app, argc, argv);

    try {
        sdfsur::RunConfig cfg;
        if (!config_path.empty()) cfg = sdfsur::load_config(config_path);
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (seed_opt->count() > 0) cfg.seed = static_cast<uint64_t>(seed);
        if (jobs_opt->count() > 0) cfg.jobs = jobs;
        for (const auto& [name, fn] : stages) {
            if (app.got_subcommand(name)) return fn(cfg);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
