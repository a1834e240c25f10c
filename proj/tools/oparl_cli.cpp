// The oparl command-line tool. Subcommands are listed by `oparl --help`.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "oparl/harness.hpp"

namespace {

using namespace oparl;

struct TrainFlags {
    std::optional<std::string> config;
    std::optional<std::string> env, variant, out, reset_direction, criterion;
    std::optional<std::uint64_t> steps, seed, reset_interval, ensemble_size, candidates;
    std::vector<std::string> sets;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "key=value config file");
        app->add_option("--env", env, "pointmass | pendulum | sparse-mcar");
        app->add_option("--variant", variant, "oparl | opt-only | pes-only | td3 | random-member");
        app->add_option("--steps", steps, "total environment steps");
        app->add_option("--seed", seed, "run seed");
        app->add_option("--out", out, "output directory");
        app->add_option("--reset-interval", reset_interval, "actor reset interval w");
        app->add_option("--reset-direction", reset_direction, "pes-to-opt | opt-to-pes");
        app->add_option("--ensemble-size", ensemble_size, "number of critics N");
        app->add_option("--candidates", candidates, "behavior candidates K");
        app->add_option("--criterion", criterion, "max-q | max-variance");
        app->add_option("--set", sets, "extra override key=value (repeatable)");
    }

    KeyValues overrides() const {
        KeyValues kv;
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError(s, "--set expects key=value");
            kv.emplace_back(parse::trim(s.substr(0, eq)), parse::trim(s.substr(eq + 1)));
        }
        auto put = [&](const char* key, const auto& v) {
            if (!v) return;
            if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, std::string>) kv.emplace_back(key, *v);
            else kv.emplace_back(key, std::to_string(*v));
        };
        put("env", env);
        put("oparl.variant", variant);
        put("total_steps", steps);
        put("seed", seed);
        put("out", out);
        put("oparl.reset_interval", reset_interval);
        put("oparl.reset_direction", reset_direction);
        put("oparl.ensemble_size", ensemble_size);
        put("oparl.candidate_count", candidates);
        put("oparl.selection_criterion", criterion);
        return kv;
    }
};

int cmd_train(const TrainFlags& flags) {
    const RunConfig cfg = resolve_run_config(flags.config, flags.overrides());
    std::cout << "training " << cfg.env << " variant=" << to_string(cfg.oparl.variant) << " steps=" << cfg.total_steps
              << " seed=" << cfg.seed << " -> " << cfg.out << std::endl;
    auto r = run_training(cfg);
    if (r.exit_code != kExitOk) {
        std::cerr << "numeric abort: " << r.message << "\n";
        return r.exit_code;
    }
    if (r.final_eval)
        std::cout << "final eval: mean " << r.final_eval->mean() << " success " << r.final_eval->success_rate() << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, std::size_t episodes, std::uint64_t seed) {
    const auto ck = load_checkpoint(checkpoint_path);
    auto env = make_env(ck.env);
    const auto r = evaluate(*env, ck.evaluation_actor(), episodes, seed);
    std::cout.precision(10);
    for (std::size_t i = 0; i < r.returns.size(); ++i)
        std::cout << "episode " << i << " return " << r.returns[i] << (r.successes[i] ? " success" : "") << "\n";
    std::cout << "mean " << r.mean() << " std " << r.stddev() << " success_rate " << r.success_rate() << "\n";
    return kExitOk;
}

int cmd_compare(const std::vector<std::string>& runs, const std::string& out) {
    std::vector<fs::path> dirs(runs.begin(), runs.end());
    const auto c = write_comparison(dirs, out);
    for (const auto& w : c.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << comparison_report(c);
    return c.groups.empty() ? kExitConfig : kExitOk;
}

int cmd_sweep(const std::string& config, const std::string& out, std::optional<std::size_t> jobs) {
    auto sweep = SweepConfig::from_key_values(read_key_values(config));
    if (jobs) sweep.jobs = *jobs;
    const auto r = run_sweep(sweep, out, &std::cout);
    std::cout << comparison_report(r.comparison);
    std::cout << r.run_dirs.size() << " cells, " << r.skipped << " already complete, " << r.failures.size()
              << " failed\n";
    for (const auto& f : r.failures) std::cerr << "failed: " << f << "\n";
    return r.exit_code();
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"OPARL: optimistic/pessimistic actor training on analytic control tasks"};
    app.require_subcommand(1);

    TrainFlags train_flags;
    auto* train = app.add_subcommand("train", "run one seeded training job");
    train_flags.attach(train);

    std::string checkpoint;
    std::size_t episodes = 10;
    std::uint64_t eval_seed = 0;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint's evaluation actor");
    eval->add_option("checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--episodes", episodes, "evaluation episodes");
    eval->add_option("--seed", eval_seed, "evaluation seed");

    std::vector<std::string> runs;
    std::string compare_out = "compare";
    auto* compare = app.add_subcommand("compare", "summarize finished runs");
    compare->add_option("runs", runs, "run directories")->required();
    compare->add_option("--out", compare_out, "report directory");

    std::string sweep_config, sweep_out = "sweep";
    std::optional<std::size_t> jobs;
    auto* sweep = app.add_subcommand("sweep", "run an env x variant x seed matrix, then compare");
    sweep->add_option("--config", sweep_config, "matrix config file")->required();
    sweep->add_option("--out", sweep_out, "root directory for cells and reports");
    sweep->add_option("--jobs", jobs, "parallel cells");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*train) return cmd_train(train_flags);
        if (*eval) return cmd_eval(checkpoint, episodes, eval_seed);
        if (*compare) return cmd_compare(runs, compare_out);
        if (*sweep) return cmd_sweep(sweep_config, sweep_out, jobs);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericAbort& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitOk;
}
