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

#include <otafl/errors.hpp>
#include <otafl/harness.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

using namespace otafl;
using namespace otafl::harness;

namespace
{

// Seconds-scale experiment: 3 clients on a 4-class, 16-feature task.
ExperimentConfig tiny_config()
{
    return parse_config(R"(
        schemes = [16,4,4]; [4,4,4]
        rounds = 10
        clients_per_level = 1
        snr_db = 20
        n_train = 300
        n_test = 100
        classes = 4
        dim = 16
        hidden = 8
        seeds = 2
    )");
}

std::string slurp(const std::filesystem::path &p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

MetricsRow server_row(const std::string &scheme, int seed, int round, double acc)
{
    MetricsRow r;
    r.scheme = scheme;
    r.seed = seed;
    r.round = round;
    r.snr_db = 20;
    r.server_acc = acc;
    return r;
}

MetricsRow client_row(const MetricsRow &server, int id, int bits, double acc)
{
    MetricsRow r = server;
    r.client_id = id;
    r.client_bits = bits;
    r.client_acc = acc;
    return r;
}

} // namespace

TEST(Config, EmptyDocumentGivesDefaults)
{
    const auto cfg = parse_config("");
    ASSERT_EQ(cfg.schemes.size(), 1u);
    EXPECT_EQ(cfg.schemes[0], (std::array{16, 4, 4}));
    EXPECT_EQ(cfg.rounds, 100);
    EXPECT_EQ(cfg.clients_per_level, 5);
    EXPECT_EQ(cfg.lr, 0.05);
    EXPECT_EQ(cfg.epochs, 2);
    EXPECT_EQ(cfg.batch, 32);
    EXPECT_EQ(cfg.hidden, (std::vector{64, 32}));
    EXPECT_EQ(cfg.data.synthetic.classes, 10);
    EXPECT_EQ(cfg.data.synthetic.dim, 48);
    EXPECT_NO_THROW(validate(cfg));
}

TEST(Config, ParsesKeysCommentsAndLists)
{
    const auto cfg = parse_config(R"(
        # comment line
        scheme = [4, 12, 4]
        snr_db = 5, inf   # trailing comment
        noise_reference = unit
        csi = perfect
        prefer_float = true
        rounds = 7
    )");
    EXPECT_EQ(cfg.schemes[0], (std::array{4, 12, 4}));
    ASSERT_EQ(cfg.snr_db.size(), 2u);
    EXPECT_TRUE(std::isinf(cfg.snr_db[1]));
    EXPECT_EQ(cfg.noise_reference, phy::NoiseReference::UnitSignal);
    EXPECT_EQ(cfg.csi, fedcore::CsiMode::Perfect);
    EXPECT_TRUE(cfg.prefer_float);
    EXPECT_EQ(cfg.rounds, 7);
    EXPECT_EQ(parse_config("scheme = [16,16,16]").schemes[0], (std::array{16, 16, 16}));
    EXPECT_EQ(parse_config("scheme = [12,4,4]").schemes[0], (std::array{12, 4, 4}));
}

TEST(Config, RejectsUnknownKeysAndBadSchemes)
{
    EXPECT_THROW(parse_config("colour = blue"), ConfigError);
    EXPECT_THROW(parse_config("rounds"), ConfigError);
    EXPECT_THROW(parse_config("rounds = many"), ConfigError);
    try {
        parse_config("scheme = [10,4,4]");
        FAIL();
    } catch (const ConfigError &e) {
        EXPECT_NE(std::string(e.what()).find("[32, 24, 16, 12, 8, 6, 4]"), std::string::npos) << e.what();
    }
    EXPECT_THROW(validate(parse_config("rounds = 0")), ConfigError);
}

TEST(Config, OverridesLayerOnBase)
{
    auto base = parse_config("rounds = 3\nseeds = 4");
    const auto cfg = parse_config("rounds = 9", base);
    EXPECT_EQ(cfg.rounds, 9);
    EXPECT_EQ(cfg.seeds, 4);
    apply_setting(base, "workers", "4");
    EXPECT_EQ(base.workers, 4);
}

TEST(Experiment, CountsServerRows)
{
    const auto table = run_experiment(tiny_config());
    const auto servers = std::count_if(table.rows.begin(), table.rows.end(), [](const MetricsRow &r) { return !r.client_id; });
    EXPECT_EQ(servers, 2 * 2 * 10);
    EXPECT_EQ(table.rows.size(), 2u * 2 * 10 * (1 + 3));
    // canonical order: scheme, seed, snr, round, client
    EXPECT_EQ(table.rows.front().scheme, "[16,4,4]");
    EXPECT_FALSE(table.rows.front().client_id.has_value());
    EXPECT_EQ(table.rows[1].client_id, 0);
    EXPECT_EQ(table.rows[1].client_bits, 16);
    EXPECT_EQ(table.rows.back().scheme, "[4,4,4]");
    EXPECT_EQ(table.rows.back().seed, 1);
    EXPECT_EQ(table.rows.back().round, 10);
}

TEST(Experiment, ByteIdenticalAcrossRunsAndWorkers)
{
    auto cfg = tiny_config();
    const auto a = format_metrics(run_experiment(cfg));
    const auto b = format_metrics(run_experiment(cfg));
    cfg.workers = 4;
    const auto c = format_metrics(run_experiment(cfg));
    EXPECT_EQ(a, b);
    EXPECT_EQ(a, c);
}

TEST(Experiment, UniformBaselinesRunAtDefaults)
{
    auto cfg = parse_config("schemes = [16,16,16]; [8,8,8]; [4,4,4]\nrounds = 2\nsnr_db = 20");
    const auto table = run_experiment(cfg);
    EXPECT_EQ(table.rows.size(), 3u * 2 * 16);
}

TEST(Experiment, ErrorsNameSchemeAndSeed)
{
    auto cfg = tiny_config();
    cfg.lr = 1e308;
    try {
        run_experiment(cfg);
        FAIL();
    } catch (const Error &e) {
        const std::string what = e.what();
        EXPECT_NE(what.find("scheme [16,4,4]"), std::string::npos) << what;
        EXPECT_NE(what.find("seed 0"), std::string::npos) << what;
        EXPECT_NE(what.find("round 1"), std::string::npos) << what;
    }
}

TEST(Experiment, LoadsExternalCsvData)
{
    const auto dir = std::filesystem::path(testing::TempDir());
    const auto [train, test] = data::generate_synthetic(3, {60, 20, 3, 5, 0.15});
    data::write_csv(train, dir / "otafl_train.csv");
    data::write_csv(test, dir / "otafl_test.csv");
    auto cfg = parse_config("rounds = 2\nclients_per_level = 1\nsnr_db = 20\nhidden = 4");
    apply_setting(cfg, "train_path", (dir / "otafl_train.csv").string());
    apply_setting(cfg, "test_path", (dir / "otafl_test.csv").string());
    const auto table = run_experiment(cfg);
    EXPECT_EQ(table.rows.size(), 2u * 4);
}

TEST(Metrics, EmptyTableIsHeaderOnly)
{
    const auto path = std::filesystem::path(testing::TempDir()) / "otafl_empty.csv";
    write_metrics({}, path);
    EXPECT_EQ(slurp(path), std::string(kMetricsHeader) + "\n");
    EXPECT_TRUE(read_metrics(path).rows.empty());
    std::filesystem::remove(path);
}

TEST(Metrics, SixDecimalFixedFormat)
{
    MetricsTable t;
    t.rows.push_back(server_row("[16,4,4]", 0, 1, 0.97));
    t.rows.push_back(client_row(t.rows[0], 3, 4, 0.5));
    const auto text = format_metrics(t);
    EXPECT_EQ(text, std::string(kMetricsHeader) + "\n" + "\"[16,4,4]\",0,1,20,0.970000,,,,,0\n" +
                        "\"[16,4,4]\",0,1,20,0.970000,3,4,0.500000,,0\n");
    EXPECT_EQ(text.find('\r'), std::string::npos);
}

TEST(Metrics, RoundTripsThroughReader)
{
    const auto table = run_experiment(parse_config("rounds = 6\nclients_per_level = 1\nsnr_db = 10, inf\n"
                                                   "n_train = 120\nn_test = 40\nclasses = 3\ndim = 6\nhidden = 4"));
    const auto path = std::filesystem::path(testing::TempDir()) / "otafl_rt.csv";
    write_metrics(table, path);
    EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    const auto back = read_metrics(path);
    ASSERT_EQ(back.rows.size(), table.rows.size());
    for (std::size_t i = 0; i < back.rows.size(); ++i) {
        const auto &a = table.rows[i], &b = back.rows[i];
        EXPECT_EQ(a.scheme, b.scheme);
        EXPECT_EQ(a.round, b.round);
        EXPECT_EQ(a.snr_db, b.snr_db);
        EXPECT_NEAR(a.server_acc, b.server_acc, 5e-7);
        EXPECT_EQ(a.client_id, b.client_id);
        EXPECT_EQ(a.client_bits, b.client_bits);
        EXPECT_EQ(a.converged_round, b.converged_round);
        EXPECT_EQ(a.clip_events, b.clip_events);
    }
    // a second format of the reread table is stable
    EXPECT_EQ(format_metrics(back), slurp(path));
    std::filesystem::remove(path);
}

TEST(Metrics, UnwritablePathLeavesNothing)
{
    const auto path = std::filesystem::path(testing::TempDir()) / "otafl_missing_dir" / "m.csv";
    EXPECT_THROW(write_metrics({}, path), IoError);
    EXPECT_FALSE(std::filesystem::exists(path));
    EXPECT_THROW(parse_metrics("not,a,header\n"), ParseError);
}

TEST(Summary, OneRowPerSchemeWithKnownPlateau)
{
    // accuracy 0.1 through round 15, 0.9 afterwards: convergence at round 20
    MetricsTable t;
    for (int k = 1; k <= 30; ++k) {
        const auto s = server_row("[16,4,4]", 0, k, k <= 15 ? 0.1 : 0.9);
        t.rows.push_back(s);
        t.rows.push_back(client_row(s, 0, 16, 0.95));
        t.rows.push_back(client_row(s, 1, 4, k == 30 ? 0.8 : 0.0));
        t.rows.push_back(client_row(s, 2, 4, k == 30 ? 0.6 : 0.0));
    }
    const auto summary = summarize(t);
    ASSERT_EQ(summary.size(), 1u);
    EXPECT_EQ(summary[0].runs, 1);
    ASSERT_TRUE(summary[0].converged_round.has_value());
    EXPECT_EQ(*summary[0].converged_round, 20.0);
    EXPECT_DOUBLE_EQ(summary[0].final_server_acc, 0.9);
    ASSERT_TRUE(summary[0].mean_4bit_client_acc.has_value());
    EXPECT_DOUBLE_EQ(*summary[0].mean_4bit_client_acc, 0.7);
    EXPECT_EQ(summary[0].jitter, 0.0);
}

TEST(Summary, NoFourBitClientsMeansAbsent)
{
    MetricsTable t;
    for (int k = 1; k <= 6; ++k) {
        const auto s = server_row("[16,16,16]", 0, k, 0.5);
        t.rows.push_back(s);
        t.rows.push_back(client_row(s, 0, 16, 0.5));
    }
    const auto summary = summarize(t);
    ASSERT_EQ(summary.size(), 1u);
    EXPECT_FALSE(summary[0].mean_4bit_client_acc.has_value());
    const auto text = format_summary(summary);
    EXPECT_NE(text.find(",0.500000,,"), std::string::npos) << text;
}

TEST(Summary, AveragesOverSeeds)
{
    MetricsTable t;
    for (int seed = 0; seed < 2; ++seed)
        for (int k = 1; k <= 5; ++k)
            t.rows.push_back(server_row("[4,4,4]", seed, k, seed == 0 ? 0.4 : 0.6));
    const auto summary = summarize(t);
    ASSERT_EQ(summary.size(), 1u);
    EXPECT_EQ(summary[0].runs, 2);
    EXPECT_DOUBLE_EQ(summary[0].final_server_acc, 0.5);
    EXPECT_EQ(summary[0].converged_round, 5.0);
}
