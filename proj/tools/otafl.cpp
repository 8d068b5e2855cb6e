// SPDX-License-Identifier: Apache-2.0
//
// otafl: mixed-precision over-the-air federated learning simulator
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

// Command-line front end: run | sweep | demo-eq3 | summarize

#include "otafl/axnum.hpp"
#include "otafl/errors.hpp"
#include "otafl/harness.hpp"
#include "otafl/phy.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iterator>

using namespace otafl;

namespace
{

struct CommonOptions
{
    std::string config_path;
    std::vector<std::string> settings; // key=value
    std::string scheme;
    int rounds = 0;
    std::string snr;
    int seeds = 0;
    std::string master_seed;
    int workers = 0;
    std::string output_dir;
};

void add_common(CLI::App *cmd, CommonOptions &o)
{
    cmd->add_option("-c,--config", o.config_path, "key=value config file")->check(CLI::ExistingFile);
    cmd->add_option("-s,--set", o.settings, "override a config key, e.g. --set lr=0.1 (repeatable)");
    cmd->add_option("--scheme", o.scheme, "scheme or ';'-separated scheme list, e.g. \"[16,4,4]\"");
    cmd->add_option("--rounds", o.rounds, "communication rounds");
    cmd->add_option("--snr", o.snr, "comma-separated SNR values in dB ('inf' = noiseless)");
    cmd->add_option("--seeds", o.seeds, "number of replicate seeds");
    cmd->add_option("--master-seed", o.master_seed, "master seed");
    cmd->add_option("--workers", o.workers, "worker threads per run");
    cmd->add_option("-o,--output-dir", o.output_dir, "output directory (overrides OTAFL_OUTPUT_DIR)");
}

harness::ExperimentConfig build_config(const CommonOptions &o, harness::ExperimentConfig base)
{
    std::string text;
    if (!o.config_path.empty()) {
        std::ifstream in(o.config_path);
        text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    auto cfg = harness::parse_config(text, std::move(base));
    if (const char *env = std::getenv("OTAFL_OUTPUT_DIR"); env && *env)
        cfg.output_dir = env;
    for (const auto &kv : o.settings) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        harness::apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!o.scheme.empty())
        harness::apply_setting(cfg, "schemes", o.scheme);
    if (o.rounds)
        harness::apply_setting(cfg, "rounds", std::to_string(o.rounds));
    if (!o.snr.empty())
        harness::apply_setting(cfg, "snr_db", o.snr);
    if (o.seeds)
        harness::apply_setting(cfg, "seeds", std::to_string(o.seeds));
    if (!o.master_seed.empty())
        harness::apply_setting(cfg, "master_seed", o.master_seed);
    if (o.workers)
        harness::apply_setting(cfg, "workers", std::to_string(o.workers));
    if (!o.output_dir.empty())
        cfg.output_dir = o.output_dir;
    harness::validate(cfg);
    return cfg;
}

int run_and_write(const harness::ExperimentConfig &cfg, const std::string &stem)
{
    std::filesystem::create_directories(cfg.output_dir);
    const auto table = harness::run_experiment(cfg);
    const auto metrics_path = cfg.output_dir / (stem + ".csv");
    harness::write_metrics(table, metrics_path);
    const auto summary =
        harness::format_summary(harness::summarize(table, cfg.convergence_window, cfg.convergence_fraction));
    {
        std::ofstream out(cfg.output_dir / (stem + "_summary.csv"), std::ios::binary);
        out << summary;
    }
    std::cout << "wrote " << metrics_path.string() << " (" << table.rows.size() << " rows)\n" << summary;
    return 0;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Mixed-precision over-the-air federated learning simulator"};
    app.require_subcommand(1);

    CommonOptions run_opts, sweep_opts;
    auto *run = app.add_subcommand("run", "run one configuration and write metrics.csv");
    add_common(run, run_opts);
    auto *sweep = app.add_subcommand("sweep", "run a scheme sweep (default: mixed schemes and uniform baselines)");
    add_common(sweep, sweep_opts);

    int bits_a = 4, bits_b = 8;
    auto *demo = app.add_subcommand("demo-eq3", "digital QAM vs analog superposition over all code pairs");
    demo->add_option("--bits-a", bits_a, "width of the first tensor (4, 8, 12, 16)");
    demo->add_option("--bits-b", bits_b, "width of the second tensor (4, 8, 12, 16)");

    std::string summary_input;
    int window = 5;
    double fraction = 0.95;
    auto *summ = app.add_subcommand("summarize", "summarize a metrics CSV per scheme");
    summ->add_option("csv", summary_input, "metrics CSV")->required()->check(CLI::ExistingFile);
    summ->add_option("--window", window, "convergence moving-average window");
    summ->add_option("--fraction", fraction, "convergence fraction of the final moving average");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run)
            return run_and_write(build_config(run_opts, {}), "metrics");
        if (*sweep) {
            harness::ExperimentConfig base;
            base.schemes = harness::default_sweep();
            return run_and_write(build_config(sweep_opts, base), "sweep");
        }
        if (*demo) {
            if (bits_a > 16 || bits_b > 16)
                throw ConfigError("demo-eq3: widths above 16 bits are not supported");
            const auto [a, b] = phy::exhaustive_code_pairs(bits_a, bits_b);
            const auto report = phy::qam_superposition_demo(a, b);
            std::cout << "pairs: " << a.size() << " (" << bits_a << "-bit x " << bits_b << "-bit codes)\n"
                      << "decode constellation: " << report.wide_bits << "-bit square QAM\n"
                      << "digital_mismatch_fraction: " << report.mismatch_fraction << '\n'
                      << "analog_mismatch_fraction: " << report.analog_mismatch_fraction << '\n'
                      << "offset_constellation: " << (report.offset_constellation ? "true" : "false") << '\n';
            return report.mismatch_fraction > report.analog_mismatch_fraction ? 0 : 1;
        }
        if (*summ) {
            const auto table = harness::read_metrics(summary_input);
            std::cout << harness::format_summary(harness::summarize(table, window, fraction));
            return 0;
        }
    } catch (const Error &err) {
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    } catch (const std::filesystem::filesystem_error &err) {
        std::cerr << "error: " << err.what() << '\n';
        return 2;
    }
    return 0;
}
