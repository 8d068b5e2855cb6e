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

// Acceptance suite: one PASS/FAIL line per top-level criterion. Exit status is
// nonzero if any criterion fails. An optional argument names a CSV path for the
// trend sweep's metrics.

#include "oracles.hpp"

#include <otafl/axnum.hpp>
#include <otafl/fedcore.hpp>
#include <otafl/harness.hpp>
#include <otafl/phy.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>

using namespace otafl;

namespace
{

int failures = 0;

void report(bool ok, const std::string &name, const std::string &detail,
            std::chrono::steady_clock::time_point started)
{
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    std::printf("%s %s: %s [%.1fs]\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str(), secs);
    std::fflush(stdout);
    failures += ok ? 0 : 1;
}

std::string fmt(const char *f, double a, double b = 0, double c = 0, double d = 0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

fedcore::FederationInputs desk_inputs(std::uint64_t replicate)
{
    harness::ExperimentConfig cfg;
    const auto [train, test] = data::generate_synthetic(harness::replicate_seed(cfg.master_seed, static_cast<int>(replicate), Purpose::Data),
                                                        cfg.data.synthetic);
    fedcore::FederationInputs in;
    in.arch = {{48, 64, 32, 10}};
    in.train = std::make_shared<const data::Dataset>(train);
    in.test = std::make_shared<const data::Dataset>(test);
    Rng shard_rng(harness::replicate_seed(cfg.master_seed, static_cast<int>(replicate), Purpose::Shard));
    in.shards = data::shard_uniform(train, 15, shard_rng);
    Rng init_rng(harness::replicate_seed(cfg.master_seed, static_cast<int>(replicate), Purpose::Init));
    in.initial = model::init_params(in.arch, init_rng);
    return in;
}

void ota_digital_equivalence()
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto in = desk_inputs(0);
    double worst = 0.0;
    int rounds_checked = 0, clips = 0;
    for (auto levels : {std::array{16, 4, 4}, std::array{4, 4, 4}}) {
        fedcore::SchemeConfig scheme;
        scheme.levels = levels;
        fedcore::FederationConfig cfg;
        cfg.channel.noise = phy::NoiseSpec::noiseless();
        cfg.channel.csi = fedcore::CsiMode::Perfect;
        cfg.channel.gain_cap = INFINITY;
        // digital FedAvg oracle: plain mean of the dequantized client models
        // that entered the uplink this round
        cfg.observer = [&](const fedcore::RoundTrace &t) {
            Eigen::VectorXd mean = Eigen::VectorXd::Zero(t.global.flat.size());
            for (const auto &c : t.trained)
                mean += axnum::dequantize(c.params);
            mean /= static_cast<double>(t.trained.size());
            worst = std::max(worst, (t.global.flat - mean).norm() / mean.norm());
            ++rounds_checked;
        };
        for (const auto &r : fedcore::run_federation(scheme, 10, cfg, in, {1, 0, 0}))
            clips += r.clip_events;
    }
    report(worst <= 1e-6 && rounds_checked == 20 && clips == 0, "ota_digital_equivalence",
           fmt("max relative error %.3g over %g rounds of [16,4,4] and [4,4,4], %g clip events", worst,
               rounds_checked, clips),
           t0);
}

void quantizer_oracle()
{
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed({9001}));
    long mismatches = 0, scalars = 0;
    for (int bits : {4, 6, 8}) {
        for (int t = 0; t < 100; ++t) {
            Eigen::VectorXd x(1000);
            const double mag = std::exp(rng.uniform(-5.0, 5.0));
            for (auto &v : x)
                v = rng.uniform(-mag, mag);
            const auto q = axnum::quantize_tensor(x, axnum::QuantSpec::fixed(bits));
            for (Eigen::Index i = 0; i < x.size(); ++i)
                mismatches += q.codes[i] != oracle::nearest_fixed_code(x[i], q.scale, bits);
            scalars += x.size();
        }
    }

    std::vector<axnum::QuantSpec> specs;
    for (int b : axnum::allowed_levels()) {
        specs.push_back(axnum::make_spec(b, false));
        if (b >= 8)
            specs.push_back(axnum::make_spec(b, true));
    }
    specs.push_back(axnum::QuantSpec::fixed_range(8, 0.5));
    long idem_fail = 0, tensors = 0;
    for (int t = 0; t < 1000; ++t) {
        Eigen::VectorXd x(64);
        const double mag = std::exp(rng.uniform(-8.0, 8.0));
        for (auto &v : x)
            v = rng.uniform(-mag, mag);
        for (const auto &s : specs) {
            const auto q = axnum::quantize_tensor(x, s);
            idem_fail += axnum::quantize_tensor(axnum::dequantize(q), s).codes != q.codes;
        }
        ++tensors;
    }
    report(mismatches == 0 && idem_fail == 0 && scalars >= 100000, "quantizer_oracle",
           fmt("%g oracle mismatches over %g scalars (bits 4, 6, 8); %g idempotence failures over %g tensors",
               static_cast<double>(mismatches), static_cast<double>(scalars), static_cast<double>(idem_fail),
               static_cast<double>(tensors)) +
               " x " + std::to_string(specs.size()) + " specs",
           t0);
}

void qam_demo()
{
    const auto t0 = std::chrono::steady_clock::now();
    // run the shipped command and read its report
    const std::string cmd = std::string("\"") + OTAFL_CLI_PATH + "\" demo-eq3 --bits-a 4 --bits-b 8";
    std::FILE *pipe = popen(cmd.c_str(), "r");
    std::string out;
    if (pipe) {
        char buf[512];
        while (std::fgets(buf, sizeof buf, pipe))
            out += buf;
    }
    const int status = pipe ? pclose(pipe) : -1;
    const auto field = [&](const std::string &key) {
        const auto pos = out.find(key + ": ");
        return pos == std::string::npos ? NAN : std::stod(out.substr(pos + key.size() + 2));
    };
    const double digital = field("digital_mismatch_fraction");
    const double analog = field("analog_mismatch_fraction");
    const bool pairs_ok = out.find("pairs: 4096") != std::string::npos;
    report(status == 0 && pairs_ok && digital > analog && analog == 0.0, "demo_eq3_noncommutativity",
           fmt("digital QAM mismatch %.6f vs analog %.6f over 16 x 256 code pairs", digital, analog), t0);
}

void channel_estimation()
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto mse = [](double snr) {
        Rng rng(derive_seed({9002, static_cast<std::uint64_t>(snr)}));
        const auto pilot = phy::PilotSequence::constant(8);
        double err = 0.0;
        for (int t = 0; t < 10000; ++t) {
            const auto ch = phy::sample_channel(rng);
            err += std::norm(phy::estimate_channel(ch, pilot, {snr, phy::NoiseReference::MeasuredSignal}, rng).h_hat - ch.h);
        }
        return err / 10000;
    };
    const double m10 = mse(10.0), m30 = mse(30.0);
    report(m30 <= m10 / 10, "channel_estimation_scaling",
           fmt("MSE %.3g at 30 dB vs %.3g at 10 dB (ratio %.1f, need >= 10)", m30, m10, m10 / m30), t0);
}


void trends(const std::filesystem::path &csv_out)
{
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = harness::parse_config("schemes = [16,4,4]; [4,4,4]; [32,4,4]\n"
                                     "rounds = 50\nsnr_db = 20\nseeds = 5\n");
    cfg.workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    const auto table = harness::run_experiment(cfg);
    if (!csv_out.empty())
        harness::write_metrics(table, csv_out);
    std::map<std::string, harness::SchemeSummary> by;
    for (const auto &s : harness::summarize(table, cfg.convergence_window, cfg.convergence_fraction))
        by[s.scheme] = s;
    const auto &s16 = by["[16,4,4]"], &s4 = by["[4,4,4]"], &s32 = by["[32,4,4]"];

    const double c16 = s16.converged_round.value_or(NAN), c4 = s4.converged_round.value_or(NAN);
    report(s16.converged_runs == 5 && s4.converged_runs == 5 && c16 < c4 && s16.jitter < s4.jitter,
           "convergence_speed_trend",
           fmt("converged round %.1f vs %.1f; post-convergence jitter %.4f vs %.4f ([16,4,4] vs [4,4,4], 5 seeds)",
               c16, c4, s16.jitter, s4.jitter),
           t0);

    const double a16 = s16.mean_4bit_client_acc.value_or(NAN), a4 = s4.mean_4bit_client_acc.value_or(NAN),
                 a32 = s32.mean_4bit_client_acc.value_or(NAN);
    report(a16 - a4 > 0.0, "free_lunch_trend",
           fmt("mean final 4-bit client accuracy %.4f vs %.4f: +%.2f points (%.1f%% relative)", a16, a4,
               100 * (a16 - a4), 100 * (a16 - a4) / a4),
           t0);

    report(std::abs(a32 - a16) < a16 - a4, "diminishing_returns",
           fmt("|[32,4,4] - [16,4,4]| = %.4f < [16,4,4] - [4,4,4] = %.4f", std::abs(a32 - a16), a16 - a4), t0);
}

void determinism()
{
    const auto t0 = std::chrono::steady_clock::now();
    auto cfg = harness::parse_config("schemes = [16,4,4]; [8,8,8]\nrounds = 5\nsnr_db = 10, 30\nseeds = 2\n");
    const auto dir = std::filesystem::temp_directory_path();
    std::vector<std::string> texts;
    for (int workers : {1, 1, 4}) {
        cfg.workers = workers;
        const auto path = dir / ("otafl_determinism_" + std::to_string(texts.size()) + ".csv");
        harness::write_metrics(harness::run_experiment(cfg), path);
        std::ifstream in(path, std::ios::binary);
        texts.emplace_back(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
        std::filesystem::remove(path);
    }
    const bool ok = texts[0] == texts[1] && texts[0] == texts[2] && texts[0].size() > 1000;
    report(ok, "determinism",
           fmt("%g-byte CSV identical across two runs (1 worker) and a 4-worker run",
               static_cast<double>(texts[0].size())),
           t0);
}

} // namespace

int main(int argc, char **argv)
{
    const std::filesystem::path csv_out = argc > 1 ? argv[1] : "";
    try {
        ota_digital_equivalence();
        quantizer_oracle();
        qam_demo();
        channel_estimation();
        determinism();
        trends(csv_out);
    } catch (const std::exception &e) {
        std::printf("FAIL aborted: %s\n", e.what());
        return 1;
    }
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
