#pragma once

// Everything above a single training run.
//
// Run directory layout:
//   config.echo       resolved key=value config, one entry per line
//   metrics.jsonl     one JSON record per line (see RunMetrics)
//   checkpoint.final  checkpoint document (written on success)
//   DONE              completion marker (written last)

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <json.hpp>

#include "oparl/checkpoint.hpp"
#include "oparl/config.hpp"
#include "oparl/envs.hpp"
#include "oparl/errors.hpp"
#include "oparl/train.hpp"

namespace oparl {

namespace fs = std::filesystem;

enum ExitCode : int { kExitOk = 0, kExitConfig = 2, kExitNumeric = 3, kExitPartialSweep = 4 };

/// Keeps glibc from serving the per-step layer temporaries (hundreds of KB at
/// 256-wide layers) with fresh mmap/munmap pairs, which otherwise costs a page
/// fault per touched page on every gradient step. Call once from main().
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

// ---------------------------------------------------------------------------
// Key-value documents

/// Parses `key = value` lines; blank lines and lines starting with '#' are skipped.
inline KeyValues parse_key_values(std::istream& in, const std::string& source = "config") {
    KeyValues out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = parse::trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("", source + ":" + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
        out.emplace_back(parse::trim(t.substr(0, eq)), parse::trim(t.substr(eq + 1)));
    }
    return out;
}

inline KeyValues read_key_values(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("", "cannot open config file " + path);
    return parse_key_values(f, path);
}

inline std::string format_key_values(const KeyValues& kv) {
    std::string s;
    for (const auto& [k, v] : kv) s += k + "=" + v + "\n";
    return s;
}

// ---------------------------------------------------------------------------
// RunConfig

struct RunConfig {
    std::string env = "pointmass";
    OparlConfig oparl;
    std::uint64_t total_steps = 30000;
    std::uint64_t eval_interval = 5000;
    std::size_t eval_episodes = 10;
    std::uint64_t seed = 0;
    std::string out = "runs/run";

    friend bool operator==(const RunConfig&, const RunConfig&) = default;

    RunConfig resolved() const {
        RunConfig r = *this;
        r.oparl = oparl.resolved();
        return r;
    }

    void validate() const {
        make_env(env);
        oparl.validate();
        if (eval_episodes < 1) throw ConfigError("eval_episodes", "must be at least 1");
    }

    TrainOptions train_options() const { return {total_steps, eval_interval, eval_episodes}; }

    void set(const std::string& key, const std::string& value) {
        if (key == "env") {
            make_env(value);
            env = value;
        } else if (key == "total_steps") total_steps = parse::to_uint(key, value);
        else if (key == "eval_interval") eval_interval = parse::to_uint(key, value);
        else if (key == "eval_episodes") eval_episodes = parse::to_uint(key, value);
        else if (key == "seed") seed = parse::to_uint(key, value);
        else if (key == "out") out = value;
        else if (!oparl.set(key, value)) throw ConfigError(key, "unknown configuration key");
    }

    void apply(const KeyValues& kv) {
        for (const auto& [k, v] : kv) set(k, v);
    }

    KeyValues to_key_values() const {
        KeyValues kv{{"env", env},
                     {"total_steps", std::to_string(total_steps)},
                     {"eval_interval", std::to_string(eval_interval)},
                     {"eval_episodes", std::to_string(eval_episodes)},
                     {"seed", std::to_string(seed)},
                     {"out", out}};
        auto o = oparl.to_key_values();
        kv.insert(kv.end(), o.begin(), o.end());
        return kv;
    }

    static RunConfig from_key_values(const KeyValues& kv) {
        RunConfig c;
        c.apply(kv);
        return c;
    }
};

/// Config file values first, then overrides; later entries win.
inline RunConfig resolve_run_config(const std::optional<std::string>& config_file, const KeyValues& overrides) {
    RunConfig c;
    if (config_file) c.apply(read_key_values(*config_file));
    c.apply(overrides);
    c = c.resolved();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Single run

struct RunOutcome {
    int exit_code = kExitOk;
    std::string message;
    std::optional<EvalResult> final_eval;
};

/// Runs one training job into `cfg.out`. Metrics are flushed record by record;
/// the checkpoint and the DONE marker are written only when training completes.
inline RunOutcome run_training(const RunConfig& cfg_in) {
    const RunConfig cfg = cfg_in.resolved();
    cfg.validate();
    const fs::path dir(cfg.out);
    fs::create_directories(dir);
    fs::remove(dir / "DONE");
    {
        std::ofstream echo(dir / "config.echo");
        if (!echo) throw FormatError("cannot write " + (dir / "config.echo").string());
        echo << format_key_values(cfg.to_key_values());
    }
    std::ofstream metrics(dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics) throw FormatError("cannot write " + (dir / "metrics.jsonl").string());
    auto env = make_env(cfg.env);
    RunOutcome outcome;
    try {
        auto result = train(*env, cfg.oparl, cfg.seed, cfg.train_options(), [&](const RunMetrics& m) {
            metrics << to_json(m).dump() << '\n';
            metrics.flush();
        });
        save_checkpoint((dir / "checkpoint.final").string(), make_checkpoint(cfg.env, result, cfg.to_key_values()));
        outcome.final_eval = result.final_eval;
        std::ofstream(dir / "DONE") << "ok\n";
    } catch (const NumericAbort& e) {
        outcome.exit_code = kExitNumeric;
        outcome.message = e.what();
    }
    return outcome;
}

// ---------------------------------------------------------------------------
// Metrics reading

inline std::vector<nlohmann::json> read_metrics(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("missing metrics file " + path.string());
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception&) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": corrupt metrics record");
        }
    }
    return out;
}

/// Metrics lines with the wall-clock field removed, for determinism checks.
inline std::vector<std::string> metrics_without_wall_clock(const fs::path& path) {
    std::vector<std::string> out;
    for (auto j : read_metrics(path)) {
        j.erase("wall_ms");
        out.push_back(j.dump());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Comparison

struct RunSummary {
    fs::path dir;
    std::string env;
    std::string variant;
    std::uint64_t seed = 0;
    double final_eval_return = 0.0;
    double final_success_rate = 0.0;
    std::vector<std::pair<std::uint64_t, double>> curve;  // (step, eval_return_mean)
};

/// Reads one finished run directory. Throws FormatError when it is missing
/// pieces or holds no evaluation record.
inline RunSummary summarize_run(const fs::path& dir) {
    if (!fs::exists(dir / "config.echo")) throw FormatError(dir.string() + ": no config.echo");
    const RunConfig cfg = RunConfig::from_key_values(read_key_values((dir / "config.echo").string()));
    RunSummary s;
    s.dir = dir;
    s.env = cfg.env;
    s.variant = to_string(cfg.oparl.variant);
    s.seed = cfg.seed;
    bool any = false;
    for (const auto& rec : read_metrics(dir / "metrics.jsonl")) {
        if (rec.value("kind", "") != "eval") continue;
        if (!rec.contains("eval_return_mean") || !rec["eval_return_mean"].is_number())
            throw FormatError(dir.string() + ": eval record without eval_return_mean");
        s.final_eval_return = rec["eval_return_mean"].get<double>();
        s.final_success_rate = rec.value("eval_success_rate", 0.0);
        s.curve.emplace_back(rec["step"].get<std::uint64_t>(), s.final_eval_return);
        any = true;
    }
    if (!any) throw FormatError(dir.string() + ": no evaluation records");
    return s;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
inline double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double mu = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - mu) * (x - mu);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Trailing moving average over `window` points (shorter at the start).
inline std::vector<double> smooth(const std::vector<double>& v, std::size_t window) {
    std::vector<double> out(v.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        acc += v[i];
        if (i >= window) acc -= v[i - window];
        out[i] = acc / static_cast<double>(std::min(i + 1, window));
    }
    return out;
}

struct GroupSummary {
    std::string env;
    std::string variant;
    std::vector<RunSummary> runs;  // sorted by seed
    double mean = 0.0;
    double std = 0.0;
    double success_median = 0.0;

    std::vector<double> returns() const {
        std::vector<double> r;
        for (const auto& s : runs) r.push_back(s.final_eval_return);
        return r;
    }
};

struct Comparison {
    std::vector<GroupSummary> groups;  // per env, best mean first
    std::vector<std::string> warnings;
};

inline constexpr std::size_t kCurveSmoothingWindow = 10;

inline Comparison compare_runs(const std::vector<fs::path>& dirs) {
    Comparison c;
    std::map<std::pair<std::string, std::string>, std::vector<RunSummary>> cells;
    for (const auto& d : dirs) {
        try {
            auto s = summarize_run(d);
            cells[{s.env, s.variant}].push_back(std::move(s));
        } catch (const std::exception& e) {
            c.warnings.push_back(std::string("skipping ") + d.string() + ": " + e.what());
        }
    }
    for (auto& [key, runs] : cells) {
        std::sort(runs.begin(), runs.end(), [](const auto& a, const auto& b) { return a.seed < b.seed; });
        GroupSummary g{key.first, key.second, std::move(runs)};
        const auto r = g.returns();
        g.mean = mean_of(r);
        g.std = sample_std(r);
        std::vector<double> succ;
        for (const auto& s : g.runs) succ.push_back(s.final_success_rate);
        g.success_median = median_of(succ);
        c.groups.push_back(std::move(g));
    }
    std::stable_sort(c.groups.begin(), c.groups.end(), [](const auto& a, const auto& b) {
        if (a.env != b.env) return a.env < b.env;
        return a.mean > b.mean;
    });
    return c;
}

/// summary.csv: one "summary" row per (env, variant) followed by its "seed" rows.
inline std::string comparison_csv(const Comparison& c) {
    std::ostringstream os;
    os.precision(17);
    os << "row,env,variant,seed,final_eval_return,final_success_rate,n,mean,std,success_median\n";
    for (const auto& g : c.groups) {
        os << "summary," << g.env << ',' << g.variant << ",,,," << g.runs.size() << ',' << g.mean << ',' << g.std
           << ',' << g.success_median << '\n';
        for (const auto& r : g.runs)
            os << "seed," << g.env << ',' << g.variant << ',' << r.seed << ',' << r.final_eval_return << ','
               << r.final_success_rate << ",,,,\n";
    }
    return os.str();
}

inline std::string comparison_report(const Comparison& c) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(3);
    std::string env;
    for (const auto& g : c.groups) {
        if (g.env != env) {
            env = g.env;
            os << "== " << env << "\n";
        }
        os << "  " << g.variant << ": " << g.mean << " +- " << g.std << " (n=" << g.runs.size()
           << ", median success " << g.success_median << ")\n";
        for (const auto& r : g.runs) os << "      seed " << r.seed << ": " << r.final_eval_return << "\n";
    }
    for (const auto& w : c.warnings) os << "warning: " << w << "\n";
    return os.str();
}

/// Learning curves averaged over seeds at each evaluation step, plus the
/// smoothed series.
inline std::string comparison_curves_csv(const Comparison& c) {
    std::ostringstream os;
    os.precision(17);
    os << "env,variant,step,eval_return_mean,smoothed\n";
    for (const auto& g : c.groups) {
        std::map<std::uint64_t, std::vector<double>> by_step;
        for (const auto& r : g.runs)
            for (const auto& [step, v] : r.curve) by_step[step].push_back(v);
        std::vector<std::uint64_t> steps;
        std::vector<double> means;
        for (const auto& [step, vals] : by_step) {
            steps.push_back(step);
            means.push_back(mean_of(vals));
        }
        const auto sm = smooth(means, kCurveSmoothingWindow);
        for (std::size_t i = 0; i < steps.size(); ++i)
            os << g.env << ',' << g.variant << ',' << steps[i] << ',' << means[i] << ',' << sm[i] << '\n';
    }
    return os.str();
}

/// Writes summary.csv, report.txt and curves.csv into `out`.
inline Comparison write_comparison(const std::vector<fs::path>& dirs, const fs::path& out) {
    auto c = compare_runs(dirs);
    fs::create_directories(out);
    std::ofstream(out / "summary.csv") << comparison_csv(c);
    std::ofstream(out / "report.txt") << comparison_report(c);
    std::ofstream(out / "curves.csv") << comparison_curves_csv(c);
    return c;
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepConfig {
    RunConfig base;
    std::vector<std::string> envs;
    std::vector<Variant> variants;
    std::vector<std::uint64_t> seeds;
    std::size_t jobs = 0;  // 0: hardware concurrency

    static SweepConfig from_key_values(const KeyValues& kv) {
        SweepConfig s;
        KeyValues rest;
        for (const auto& [k, v] : kv) {
            if (k == "sweep.envs") {
                s.envs.clear();
                for (const auto& e : parse::split(v, ',')) {
                    make_env(parse::trim(e));
                    s.envs.push_back(parse::trim(e));
                }
            } else if (k == "sweep.variants") {
                s.variants.clear();
                for (const auto& e : parse::split(v, ',')) s.variants.push_back(parse::variant(k, parse::trim(e)));
            } else if (k == "sweep.seeds") {
                s.seeds.clear();
                for (const auto& e : parse::split(v, ',')) s.seeds.push_back(parse::to_uint(k, parse::trim(e)));
            } else if (k == "sweep.jobs") {
                s.jobs = parse::to_uint(k, v);
            } else if (k.rfind("sweep.", 0) == 0) {
                throw ConfigError(k, "unknown sweep key");
            } else {
                rest.emplace_back(k, v);
            }
        }
        s.base.apply(rest);
        if (s.envs.empty()) s.envs.push_back(s.base.env);
        if (s.variants.empty()) s.variants.push_back(s.base.oparl.variant);
        if (s.seeds.empty()) s.seeds.push_back(s.base.seed);
        return s;
    }

    std::vector<RunConfig> cells(const fs::path& root) const {
        std::vector<RunConfig> out;
        for (const auto& env : envs)
            for (auto v : variants)
                for (auto seed : seeds) {
                    RunConfig c = base;
                    c.env = env;
                    c.oparl.variant = v;
                    c.seed = seed;
                    c.out = (root / (env + "__" + to_string(v) + "__seed" + std::to_string(seed))).string();
                    out.push_back(c.resolved());
                }
        return out;
    }
};

struct SweepOutcome {
    std::vector<fs::path> run_dirs;
    std::vector<std::string> failures;
    std::size_t skipped = 0;
    Comparison comparison;

    int exit_code() const { return failures.empty() ? kExitOk : kExitPartialSweep; }
};

/// Runs every cell not already marked DONE (cells in parallel, each cell
/// serial), then compares all cells into `root`.
inline SweepOutcome run_sweep(const SweepConfig& sweep, const fs::path& root, std::ostream* log = nullptr) {
    const auto cells = sweep.cells(root);
    for (const auto& c : cells) c.validate();
    SweepOutcome out;
    std::vector<const RunConfig*> todo;
    for (const auto& c : cells) {
        out.run_dirs.emplace_back(c.out);
        if (fs::exists(fs::path(c.out) / "DONE")) ++out.skipped;
        else todo.push_back(&c);
    }
    std::size_t jobs = sweep.jobs ? sweep.jobs : std::max(1u, std::thread::hardware_concurrency());
    jobs = std::min(jobs, std::max<std::size_t>(todo.size(), 1));
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < todo.size();) {
            const RunConfig& c = *todo[i];
            std::string failure;
            try {
                auto r = run_training(c);
                if (r.exit_code != kExitOk) failure = c.out + ": " + r.message;
            } catch (const std::exception& e) {
                failure = c.out + ": " + e.what();
            }
            std::lock_guard lock(mu);
            if (!failure.empty()) out.failures.push_back(failure);
            if (log) *log << (failure.empty() ? "done " : "FAILED ") << c.out << std::endl;
        }
    };
    std::vector<std::thread> threads;
    for (std::size_t j = 0; j < jobs; ++j) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    std::sort(out.failures.begin(), out.failures.end());
    out.comparison = write_comparison(out.run_dirs, root);
    return out;
}

}  // namespace oparl
