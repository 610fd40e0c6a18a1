// Command-line entry point for training, evaluation, scenario rendering,
// matrix export, and flight-path overlays.
//
// Exit codes: 0 ok, 2 config error, 3 numeric failure.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "reforest/harness.hpp"

namespace rf = reforest;
namespace rh = reforest::harness;

namespace {

rh::RunConfig load_run_config(const std::string& config_file) {
    if (config_file.empty()) return rh::RunConfig{};
    return rh::run_config_from_kv(rh::KvConfig::parse_file(config_file));
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoull(tok));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"reforest: multi-agent drone reforestation simulator and PPO trainer"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "Train a preset with PPO");
    std::string preset_name = "MA-0", config_file, out_dir = "out", resume;
    long updates = -1;
    train->add_option("--preset", preset_name, "MA-0 | MA-0-99 | MAC-0 | MAC-0-99");
    train->add_option("--config", config_file, "key: value config file");
    train->add_option("--out", out_dir, "output directory");
    train->add_option("--updates", updates, "stop after N updates (default: run to max_steps)");
    train->add_option("--resume", resume, "checkpoint to resume from");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a test scenario");
    std::string ckpt;
    std::uint64_t eval_seed = 111;
    int runs = 10;
    long steps = 20000;
    eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
    eval->add_option("--config", config_file, "config file matching the checkpoint");
    eval->add_option("--seed", eval_seed, "test scenario seed");
    eval->add_option("--runs", runs, "number of evaluation runs");
    eval->add_option("--steps", steps, "steps per run");
    eval->add_option("--out", out_dir, "output directory");
    eval->add_option("--preset", preset_name, "preset controlling comms during eval");

    // render
    auto* render = app.add_subcommand("render", "Render a scenario to PGM + CSV");
    std::uint64_t render_seed = 0;
    int difficulty = 5;
    render->add_option("--seed", render_seed, "scenario seed");
    render->add_option("--difficulty", difficulty, "difficulty 1..10");
    render->add_option("--out", out_dir, "output directory");

    // matrix
    auto* matrix = app.add_subcommand("matrix", "Render a difficulty x seed matrix");
    std::string seed_csv = "0,1,2,3,4";
    int max_difficulty = 10;
    matrix->add_option("--seeds", seed_csv, "comma-separated scenario seeds");
    matrix->add_option("--max-difficulty", max_difficulty, "render difficulties 1..N");
    matrix->add_option("--out", out_dir, "output directory");

    // flightpath
    auto* flight = app.add_subcommand("flightpath", "Overlay a trajectory CSV on the height map");
    std::string traj_csv, out_stem = "flightpath";
    flight->add_option("--traj", traj_csv, "trajectory CSV from the env recorder")->required();
    flight->add_option("--seed", render_seed, "scenario seed");
    flight->add_option("--difficulty", difficulty, "difficulty 1..10");
    flight->add_option("--out", out_stem, "output file stem");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            const auto& preset = rh::find_preset(preset_name);
            auto rc = load_run_config(config_file);
            auto result = rh::train_experiment<float>(preset, rc, out_dir, updates, resume);
            std::cout << "trained " << result.total_steps << " steps, " << result.updates
                      << " updates, last checkpoint: " << result.last_checkpoint << "\n";
        } else if (*eval) {
            const auto& preset = rh::find_preset(preset_name);
            auto rc = load_run_config(config_file);
            rf::nn::PolicyNet<float> net(rc.policy_config());
            rf::nn::Adam<float> opt;
            rf::io::load_checkpoint(ckpt, net, &opt);
            auto report = rh::evaluate(net, rc, preset, eval_seed, runs, steps, out_dir);
            rf::io::JsonlWriter out(out_dir + "/eval.jsonl");
            for (std::size_t r = 0; r < report.runs.size(); ++r) {
                const auto& run = report.runs[r];
                out.write({{"record", "eval_run"},
                           {"run", r},
                           {"seed", eval_seed},
                           {"steps", steps},
                           {"cumulative_reward", run.cumulative_reward},
                           {"shaping_distance_reward", run.distance_reward},
                           {"tree_drop_reward", run.tree_drop_reward},
                           {"tree_drop_count", run.tree_drop_count},
                           {"out_of_energy_count", run.out_of_energy_count},
                           {"recharge_count", run.recharge_count}});
            }
            out.write({{"record", "eval_aggregate"},
                       {"seed", eval_seed},
                       {"runs", report.runs.size()},
                       {"steps", steps},
                       {"mean_cumulative_reward", report.mean_cumulative},
                       {"stderr_cumulative_reward", report.stderr_cumulative},
                       {"mean_shaping_distance_reward", report.mean_distance},
                       {"stderr_shaping_distance_reward", report.stderr_distance},
                       {"mean_tree_drop_count", report.mean_drops},
                       {"stderr_tree_drop_count", report.stderr_drops}});
            std::cout << "eval: cumulative " << report.mean_cumulative << " +/- "
                      << report.stderr_cumulative << ", drops " << report.mean_drops << " +/- "
                      << report.stderr_drops << "\n";
        } else if (*render) {
            rh::render_scenario(render_seed, difficulty, out_dir);
            std::cout << "rendered seed " << render_seed << " difficulty " << difficulty
                      << " into " << out_dir << "\n";
        } else if (*matrix) {
            std::vector<int> difficulties;
            for (int d = 1; d <= max_difficulty; ++d) difficulties.push_back(d);
            rh::render_matrix(out_dir, difficulties, parse_seed_list(seed_csv));
            std::cout << "matrix written to " << out_dir << "\n";
        } else if (*flight) {
            rf::ScenarioConfig sc;
            sc.seed = render_seed;
            sc.difficulty = difficulty;
            const auto scenario = rf::generate_scenario(sc);
            rh::export_flightpath(traj_csv, scenario, out_stem);
            std::cout << "flight path written to " << out_stem << "-overlay.pgm\n";
        }
    } catch (const rh::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const rf::io::CheckpointMismatch& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const rh::FlightPathError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const rf::ppo::NonFiniteLoss& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const rf::nn::NonFiniteGradient& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
