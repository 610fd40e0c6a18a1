#pragma once

// Experiment orchestration: Table-style presets, config file parsing,
// training/eval loops, scenario rendering, flight-path export.

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reforest/io.hpp"
#include "reforest/ppo.hpp"

namespace reforest::harness {

namespace fs = std::filesystem;

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- presets ----------------------------------------------------------------

struct ExperimentPreset {
    std::string name;
    int n_agents = 10;
    int max_neighbors = 0;
    bool seed_cycle = false;  // false: always 0; true: cycle 0..99
    std::uint64_t test_seed = 111;

    std::uint64_t train_seed(long episode) const {
        return seed_cycle ? static_cast<std::uint64_t>(episode % 100) : 0ull;
    }
};

inline const std::vector<ExperimentPreset>& preset_table() {
    static const std::vector<ExperimentPreset> table = {
        {"MA-0", 10, 0, false, 111},
        {"MA-0-99", 10, 0, true, 111},
        {"MAC-0", 10, 3, false, 111},
        {"MAC-0-99", 10, 3, true, 111},
    };
    return table;
}

inline const ExperimentPreset& find_preset(const std::string& name) {
    for (const auto& p : preset_table())
        if (p.name == name) return p;
    throw ConfigError("unknown preset: " + name);
}

// --- config file ------------------------------------------------------------

// `key: value` per line, '#' comments, mandatory schema_version key.
class KvConfig {
public:
    static KvConfig parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file " + path);
        KvConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto colon = trimmed.find(':');
            if (colon == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(lineno) +
                                  ": expected 'key: value'");
            const auto key = trim(trimmed.substr(0, colon));
            const auto value = trim(trimmed.substr(colon + 1));
            if (key.empty())
                throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
            cfg.values_[key] = {value, lineno};
            cfg.path_ = path;
        }
        if (!cfg.has("schema_version"))
            throw ConfigError(path + ": missing schema_version");
        if (cfg.get_long("schema_version") != 1)
            throw ConfigError(path + ": unsupported schema_version");
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, std::optional<std::string> dflt = {}) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            if (dflt) return *dflt;
            throw ConfigError(path_ + ": missing key '" + key + "'");
        }
        return it->second.first;
    }

    double get_double(const std::string& key, std::optional<double> dflt = {}) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            if (dflt) return *dflt;
            throw ConfigError(path_ + ": missing key '" + key + "'");
        }
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second.first, &pos);
            if (pos != it->second.first.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError(path_ + ":" + std::to_string(it->second.second) +
                              ": invalid number for '" + key + "'");
        }
    }

    long get_long(const std::string& key, std::optional<long> dflt = {}) const {
        auto it = values_.find(key);
        if (it == values_.end()) {
            if (dflt) return *dflt;
            throw ConfigError(path_ + ": missing key '" + key + "'");
        }
        try {
            std::size_t pos = 0;
            const long v = std::stol(it->second.first, &pos);
            if (pos != it->second.first.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError(path_ + ":" + std::to_string(it->second.second) +
                              ": invalid integer for '" + key + "'");
        }
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::pair<std::string, int>> values_;
    std::string path_;
};

// --- run configuration ------------------------------------------------------

struct RunConfig {
    ScenarioConfig scenario;  // seed/difficulty set per episode
    EnvConfig env;
    ppo::PpoConfig ppo;
    ObsLayout layout = ObsLayout::Full21;
    bool use_visual = true;
    std::array<int, 3> channels{16, 32, 32};
    int trunk_units = 128;
    std::uint64_t net_seed = 0;

    nn::PolicyConfig policy_config() const {
        nn::PolicyConfig pc;
        pc.vec_obs_dim = 2 * vector_obs_size(layout);
        pc.use_visual = use_visual;
        pc.channels = channels;
        pc.trunk_units = trunk_units;
        return pc;
    }
};

inline RunConfig run_config_from_kv(const KvConfig& kv) {
    RunConfig rc;
    rc.scenario.difficulty = static_cast<int>(kv.get_long("difficulty", 5));
    rc.scenario.world_extent = kv.get_double("world_extent", 1200.0);
    rc.scenario.grid_resolution = static_cast<int>(kv.get_long("grid_resolution", 241));
    rc.env.n_drones = static_cast<int>(kv.get_long("n_drones", 10));
    rc.env.episode_length = static_cast<int>(kv.get_long("episode_length", 5000));
    rc.env.station_radius = kv.get_double("station_radius", 10.0);
    rc.ppo.gamma = kv.get_double("gamma", 0.99);
    rc.ppo.lambda = kv.get_double("lambda", 0.95);
    rc.ppo.epsilon = kv.get_double("epsilon", 0.2);
    rc.ppo.beta = kv.get_double("beta", 0.005);
    rc.ppo.learning_rate = kv.get_double("learning_rate", 3e-4);
    rc.ppo.num_epochs = static_cast<int>(kv.get_long("num_epochs", 3));
    rc.ppo.batch_size = static_cast<int>(kv.get_long("batch_size", 1024));
    rc.ppo.buffer_size = static_cast<int>(kv.get_long("buffer_size", 10240));
    rc.ppo.time_horizon = static_cast<int>(kv.get_long("time_horizon", 100));
    rc.ppo.max_steps = kv.get_long("max_steps", 10'000'000L);
    rc.ppo.summary_freq = kv.get_long("summary_freq", 20000);
    rc.ppo.num_workers = static_cast<int>(kv.get_long("num_workers", 1));
    const auto curiosity = kv.get_string("curiosity", std::string("off"));
    if (curiosity == "forward")
        rc.ppo.curiosity_enabled = true;
    else if (curiosity != "off")
        throw ConfigError("curiosity must be 'off' or 'forward'");
    const auto layout = kv.get_string("obs_layout", std::string("full21"));
    if (layout == "paper15")
        rc.layout = ObsLayout::Paper15;
    else if (layout != "full21")
        throw ConfigError("obs_layout must be 'paper15' or 'full21'");
    const auto vis = kv.get_string("vis_encode", std::string("resnet"));
    if (vis == "none")
        rc.use_visual = false;
    else if (vis != "resnet")
        throw ConfigError("vis_encode must be 'resnet' or 'none'");
    rc.trunk_units = static_cast<int>(kv.get_long("trunk_units", 128));
    rc.net_seed = static_cast<std::uint64_t>(kv.get_long("net_seed", 0));
    return rc;
}

// --- training orchestration -------------------------------------------------

inline ppo::EnvFactory make_env_factory(const ExperimentPreset& preset, RunConfig rc) {
    rc.env.n_drones = rc.env.n_drones > 0 ? rc.env.n_drones : preset.n_agents;
    return [preset, rc](long episode, int worker) -> Env {
        ScenarioConfig sc = rc.scenario;
        sc.seed = preset.train_seed(episode);
        EnvConfig ec = rc.env;
        ec.max_neighbors = preset.max_neighbors;
        return Env(generate_scenario(sc), ec,
                   hash_combine(sc.seed, static_cast<std::uint64_t>(worker)));
    };
}

struct TrainResult {
    std::string last_checkpoint;
    long total_steps = 0;
    long updates = 0;
};

template <typename T = float>
TrainResult train_experiment(const ExperimentPreset& preset, const RunConfig& rc,
                             const std::string& out_dir, long n_updates = -1,
                             const std::string& resume_from = "") {
    fs::create_directories(out_dir);
    ppo::Trainer<T> trainer(rc.policy_config(), rc.ppo, make_env_factory(preset, rc), rc.layout,
                            rc.net_seed);
    if (!resume_from.empty()) {
        auto meta = io::load_checkpoint<T>(resume_from, trainer.net(), &trainer.optimizer());
        trainer.set_total_steps(static_cast<long>(meta.train_step));
        // the checkpoint's aux field carries the episode counter; RNG streams
        // are re-derived from (seed, total_steps) inside reset_workers
        trainer.set_next_episode(static_cast<long>(meta.rng_state));
        trainer.reset_workers();
    }

    io::JsonlWriter metrics(out_dir + "/metrics.jsonl");
    std::deque<std::string> checkpoints;
    long next_summary = ((trainer.total_steps() / rc.ppo.summary_freq) + 1) * rc.ppo.summary_freq;
    std::size_t episodes_seen = 0;

    TrainResult result;
    while (trainer.total_steps() < rc.ppo.max_steps &&
           (n_updates < 0 || result.updates < n_updates)) {
        auto st = trainer.train_iteration();
        result.updates += 1;

        for (; episodes_seen < trainer.episode_metrics().size(); ++episodes_seen) {
            const auto& em = trainer.episode_metrics()[episodes_seen];
            metrics.write({{"record", "episode"},
                           {"preset", preset.name},
                           {"seed", preset.train_seed(0)},
                           {"config_hash", rc.policy_config().hash()},
                           {"step", em.step},
                           {"cumulative_reward", em.cumulative_reward},
                           {"tree_drop_count", em.tree_drop_count},
                           {"distance_reward", em.distance_reward},
                           {"tree_drop_reward", em.tree_drop_reward},
                           {"out_of_energy_count", em.out_of_energy_count},
                           {"recharge_count", em.recharge_count}});
        }
        if (trainer.total_steps() >= next_summary) {
            metrics.write({{"record", "summary"},
                           {"preset", preset.name},
                           {"config_hash", rc.policy_config().hash()},
                           {"step", st.step},
                           {"mean_ratio", st.mean_ratio},
                           {"clip_fraction", st.clip_fraction},
                           {"policy_loss", st.policy_loss},
                           {"value_loss", st.value_loss},
                           {"entropy", st.entropy},
                           {"learning_rate", st.learning_rate}});
            next_summary += rc.ppo.summary_freq;

            const std::string ckpt =
                out_dir + "/ckpt-" + std::to_string(trainer.total_steps()) + ".bin";
            const auto episode_counter = static_cast<std::uint64_t>(trainer.next_episode());
            trainer.reset_workers();
            io::save_checkpoint(ckpt, trainer.net(), trainer.optimizer(),
                                static_cast<std::uint64_t>(trainer.total_steps()),
                                episode_counter);
            checkpoints.push_back(ckpt);
            while (static_cast<int>(checkpoints.size()) > rc.ppo.keep_checkpoints) {
                fs::remove(checkpoints.front());
                checkpoints.pop_front();
            }
            result.last_checkpoint = ckpt;
        }
    }
    if (result.last_checkpoint.empty()) {
        const std::string ckpt = out_dir + "/ckpt-final.bin";
        const auto episode_counter = static_cast<std::uint64_t>(trainer.next_episode());
        trainer.reset_workers();
        io::save_checkpoint(ckpt, trainer.net(), trainer.optimizer(),
                            static_cast<std::uint64_t>(trainer.total_steps()),
                            episode_counter);
        result.last_checkpoint = ckpt;
    }
    result.total_steps = trainer.total_steps();
    return result;
}

// --- evaluation -------------------------------------------------------------

struct EvalRun {
    double cumulative_reward = 0.0;
    double distance_reward = 0.0;
    double tree_drop_reward = 0.0;
    long tree_drop_count = 0;
    long out_of_energy_count = 0;
    long recharge_count = 0;
};

struct EvalReport {
    std::vector<EvalRun> runs;
    long steps_per_run = 0;
    double mean_cumulative = 0.0, stderr_cumulative = 0.0;
    double mean_distance = 0.0, stderr_distance = 0.0;
    double mean_drops = 0.0, stderr_drops = 0.0;

    void aggregate() {
        auto stats = [&](auto get) {
            double m = 0.0;
            for (const auto& r : runs) m += get(r);
            m /= runs.size();
            double s = 0.0;
            for (const auto& r : runs) {
                const double d = get(r) - m;
                s += d * d;
            }
            const double se =
                runs.size() > 1 ? std::sqrt(s / (runs.size() - 1)) / std::sqrt(double(runs.size()))
                                : 0.0;
            return std::pair<double, double>{m, se};
        };
        std::tie(mean_cumulative, stderr_cumulative) =
            stats([](const EvalRun& r) { return r.cumulative_reward; });
        std::tie(mean_distance, stderr_distance) =
            stats([](const EvalRun& r) { return r.distance_reward; });
        std::tie(mean_drops, stderr_drops) =
            stats([](const EvalRun& r) { return double(r.tree_drop_count); });
    }
};

// Policy callback: given per-agent stacked observations, produce actions.
using PolicyFn = std::function<std::vector<Action>(const std::vector<StackedObs>&, Rng&)>;

inline EvalRun run_episode(Env& env, ObsStacker& stacker, const PolicyFn& policy, long steps,
                           Rng& rng, io::TrajectoryRecorder* recorder = nullptr) {
    EvalRun run;
    const int n = env.config().n_drones;
    for (long t = 0; t < steps; ++t) {
        std::vector<StackedObs> obs(n);
        for (int a = 0; a < n; ++a) obs[a] = stacker.observe(a, env.drones()[a], env.scenario());
        auto actions = policy(obs, rng);
        auto res = env.step(actions);
        for (int a = 0; a < n; ++a) {
            run.cumulative_reward += res.rewards[a].total();
            run.distance_reward += res.rewards[a].return_reward;
            run.tree_drop_reward += res.rewards[a].drop_reward;
        }
        if (recorder) recorder->record(static_cast<int>(t), env, res);
    }
    run.cumulative_reward /= n;
    run.tree_drop_count = env.counters().tree_drops;
    run.out_of_energy_count = env.counters().out_of_energy;
    run.recharge_count = env.counters().recharges;
    return run;
}

template <typename T>
PolicyFn greedy_policy(nn::PolicyNet<T>& net) {
    return [&net](const std::vector<StackedObs>& obs, Rng&) {
        const int n = static_cast<int>(obs.size());
        const int dim = net.input_dim();
        std::vector<double> batch(static_cast<std::size_t>(n) * dim);
        for (int a = 0; a < n; ++a)
            std::copy(obs[a].flat.begin(), obs[a].flat.end(),
                      batch.begin() + static_cast<std::size_t>(a) * dim);
        auto fwd = net.forward(batch, n);
        std::vector<Action> actions(n);
        for (int a = 0; a < n; ++a) {
            auto s = nn::greedy_action(net.eval_row(fwd, a));
            actions[a].cont = s.cont;
            actions[a].disc = s.disc;
        }
        return actions;
    };
}

inline PolicyFn random_policy() {
    return [](const std::vector<StackedObs>& obs, Rng& rng) {
        std::vector<Action> actions(obs.size());
        for (auto& a : actions) {
            for (auto& c : a.cont) c = rng.uniform(-1.0, 1.0);
            for (auto& d : a.disc) d = rng.uniform() < 0.5 ? 1 : 0;
        }
        return actions;
    };
}

template <typename T>
EvalReport evaluate(nn::PolicyNet<T>& net, const RunConfig& rc, const ExperimentPreset& preset,
                    std::uint64_t scenario_seed, int runs, long steps,
                    const std::string& flightpath_dir = "") {
    EvalReport report;
    report.steps_per_run = steps;
    auto policy = greedy_policy(net);
    for (int r = 0; r < runs; ++r) {
        ScenarioConfig sc = rc.scenario;
        sc.seed = scenario_seed;
        EnvConfig ec = rc.env;
        ec.max_neighbors = preset.max_neighbors;
        ec.episode_length = static_cast<int>(steps);
        Env env(generate_scenario(sc), ec, hash_combine(scenario_seed, r));
        ObsStacker stacker(ec.n_drones, rc.layout, rc.use_visual);
        Rng rng(hash_combine(scenario_seed, 5000 + r));
        std::unique_ptr<io::TrajectoryRecorder> rec;
        if (!flightpath_dir.empty()) {
            fs::create_directories(flightpath_dir);
            rec = std::make_unique<io::TrajectoryRecorder>(flightpath_dir + "/run-" +
                                                           std::to_string(r) + ".csv");
        }
        report.runs.push_back(run_episode(env, stacker, policy, steps, rng, rec.get()));
    }
    report.aggregate();
    return report;
}

// --- rendering and flight paths ---------------------------------------------

inline void render_scenario(std::uint64_t seed, int difficulty, const std::string& out_dir,
                            const ScenarioConfig& base = {}) {
    fs::create_directories(out_dir);
    ScenarioConfig sc = base;
    sc.seed = seed;
    sc.difficulty = difficulty;
    const Scenario s = generate_scenario(sc);
    const auto stem = out_dir + "/seed" + std::to_string(seed) + "-d" + std::to_string(difficulty);
    io::write_pgm(stem + "-height.pgm", io::height_map_pixels(s), s.res(), s.res());
    io::write_pgm(stem + "-reforestation.pgm", io::reforestation_map_pixels(s), s.res(), s.res());
    io::write_tree_csv(stem + "-trees.csv", s);
}

inline void render_matrix(const std::string& out_dir, const std::vector<int>& difficulties,
                          const std::vector<std::uint64_t>& seeds) {
    fs::create_directories(out_dir);
    std::ofstream index(out_dir + "/matrix.csv");
    index << "difficulty,seed,height_pgm,reforestation_pgm\n";
    for (int d : difficulties)
        for (std::uint64_t s : seeds) {
            render_scenario(s, d, out_dir);
            const auto stem = "seed" + std::to_string(s) + "-d" + std::to_string(d);
            index << d << "," << s << "," << stem << "-height.pgm," << stem
                  << "-reforestation.pgm\n";
        }
}

struct FlightPathError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Rasterizes trajectory polylines over the height map and writes an
// altitude-vs-step series per agent.
inline void export_flightpath(const std::string& traj_csv, const Scenario& scenario,
                              const std::string& out_stem) {
    std::ifstream f(traj_csv);
    if (!f) throw FlightPathError("cannot open " + traj_csv);
    std::string line;
    if (!std::getline(f, line)) throw FlightPathError(traj_csv + ": empty file");

    struct Sample {
        int step, agent;
        double x, y, z;
    };
    std::vector<Sample> samples;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() < 5)
            throw FlightPathError(traj_csv + ":" + std::to_string(lineno) + ": malformed row");
        try {
            samples.push_back({std::stoi(fields[0]), std::stoi(fields[1]), std::stod(fields[2]),
                               std::stod(fields[3]), std::stod(fields[4])});
        } catch (...) {
            throw FlightPathError(traj_csv + ":" + std::to_string(lineno) + ": malformed row");
        }
    }

    const int n = scenario.res();
    auto px = io::height_map_pixels(scenario);
    const double half = scenario.config.half_extent();
    const double sp = scenario.config.grid_spacing();
    auto to_px = [&](double x, double z) {
        return std::pair<int, int>{
            std::clamp(static_cast<int>(std::lround((x + half) / sp)), 0, n - 1),
            std::clamp(static_cast<int>(std::lround((z + half) / sp)), 0, n - 1)};
    };
    auto plot = [&](int cx, int cz) { px[static_cast<std::size_t>(cz) * n + cx] = 255; };

    std::map<int, std::pair<int, int>> last;  // agent -> last pixel
    std::ofstream alt(out_stem + "-altitude.csv");
    alt << "step,agent,altitude\n" << std::fixed << std::setprecision(3);
    for (const auto& s : samples) {
        const auto [cx, cz] = to_px(s.x, s.z);
        if (auto it = last.find(s.agent); it != last.end()) {
            // Bresenham between consecutive samples
            int x0 = it->second.first, z0 = it->second.second;
            const int dx = std::abs(cx - x0), dz = std::abs(cz - z0);
            const int sx = x0 < cx ? 1 : -1, sz = z0 < cz ? 1 : -1;
            int err = dx - dz;
            while (true) {
                plot(x0, z0);
                if (x0 == cx && z0 == cz) break;
                const int e2 = 2 * err;
                if (e2 > -dz) {
                    err -= dz;
                    x0 += sx;
                }
                if (e2 < dx) {
                    err += dx;
                    z0 += sz;
                }
            }
        } else {
            plot(cx, cz);
        }
        last[s.agent] = {cx, cz};
        alt << s.step << "," << s.agent << "," << s.y << "\n";
    }
    io::write_pgm(out_stem + "-overlay.pgm", px, n, n);
}

// --- desk-scale smoke protocol ----------------------------------------------

struct SmokeResult {
    double trained_mean = 0.0;
    double random_mean = 0.0;
    double random_stderr = 0.0;
    long trained_drop_count = 0;
    bool improved = false;
};

inline RunConfig smoke_run_config() {
    RunConfig rc;
    rc.scenario.world_extent = 300.0;
    rc.scenario.grid_resolution = 61;
    rc.scenario.difficulty = 5;
    rc.env.n_drones = 3;
    rc.env.episode_length = 256;
    rc.ppo.batch_size = 256;
    rc.ppo.buffer_size = 768;
    rc.ppo.time_horizon = 64;
    rc.ppo.num_epochs = 3;
    rc.ppo.max_steps = 50L * 768;
    rc.layout = ObsLayout::Paper15;
    rc.use_visual = false;
    rc.trunk_units = 64;
    return rc;
}

template <typename T = float>
SmokeResult smoke_run(std::uint64_t net_seed, int neighbors, int n_updates = 50) {
    RunConfig rc = smoke_run_config();
    rc.net_seed = net_seed;
    ExperimentPreset preset{"smoke", rc.env.n_drones, neighbors, false, 0};

    // random-policy baseline on the same scenario
    SmokeResult out;
    {
        std::vector<double> rewards;
        for (int r = 0; r < 10; ++r) {
            ScenarioConfig sc = rc.scenario;
            sc.seed = 0;
            EnvConfig ec = rc.env;
            ec.max_neighbors = neighbors;
            Env env(generate_scenario(sc), ec, r);
            ObsStacker stacker(ec.n_drones, rc.layout, rc.use_visual);
            Rng rng(hash_combine(net_seed, 9000 + r));
            rewards.push_back(
                run_episode(env, stacker, random_policy(), rc.env.episode_length, rng)
                    .cumulative_reward);
        }
        double m = 0.0;
        for (double v : rewards) m += v;
        m /= rewards.size();
        double s = 0.0;
        for (double v : rewards) s += (v - m) * (v - m);
        out.random_mean = m;
        out.random_stderr = std::sqrt(s / (rewards.size() - 1)) / std::sqrt(double(rewards.size()));
    }

    ppo::Trainer<T> trainer(rc.policy_config(), rc.ppo, make_env_factory(preset, rc), rc.layout,
                            net_seed);
    auto policy = greedy_policy(trainer.net());
    std::vector<double> final_evals;
    long final_drops = 0;
    for (int u = 0; u < n_updates; ++u) {
        trainer.train_iteration();
        if (u >= n_updates - 5) {
            ScenarioConfig sc = rc.scenario;
            sc.seed = 0;
            EnvConfig ec = rc.env;
            ec.max_neighbors = neighbors;
            Env env(generate_scenario(sc), ec, 0);
            ObsStacker stacker(ec.n_drones, rc.layout, rc.use_visual);
            Rng rng(hash_combine(net_seed, 7000 + u));
            auto run = run_episode(env, stacker, policy, rc.env.episode_length, rng);
            final_evals.push_back(run.cumulative_reward);
            final_drops += run.tree_drop_count;
        }
    }
    double m = 0.0;
    for (double v : final_evals) m += v;
    out.trained_mean = m / final_evals.size();
    out.trained_drop_count = final_drops;
    out.improved = out.trained_mean > out.random_mean + 3.0 * out.random_stderr;
    return out;
}

}  // namespace reforest::harness
