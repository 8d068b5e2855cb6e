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

#ifndef OTAFL_HARNESS_HPP
#define OTAFL_HARNESS_HPP

#include "otafl/data.hpp"
#include "otafl/fedcore.hpp"
#include "otafl/phy.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace otafl::harness
{

/// Where training and test data come from.
struct DataSource
{
    data::SyntheticParams synthetic;
    /// When set, data is read from files instead of generated.
    std::filesystem::path train_path;
    std::filesystem::path train_labels_path; ///< IDX only
    std::filesystem::path test_path;
    std::filesystem::path test_labels_path; ///< IDX only
    data::FileFormat format = data::FileFormat::CSV;
};

struct ExperimentConfig
{
    std::vector<std::array<int, 3>> schemes{{16, 4, 4}};
    int rounds = 100;
    int clients_per_level = 5;
    std::vector<double> snr_db{5.0, 10.0, 20.0, 30.0};
    phy::NoiseReference noise_reference = phy::NoiseReference::MeasuredSignal;
    fedcore::CsiMode csi = fedcore::CsiMode::Estimated;
    double gain_cap = phy::kDefaultGainCap;
    int pilot_length = 8;
    bool prefer_float = false;
    double lr = 0.05;
    int epochs = 2;
    int batch = 32;
    std::vector<int> hidden{64, 32};
    DataSource data;
    std::uint64_t master_seed = 1;
    int seeds = 1;
    int workers = 1;
    int convergence_window = 5;
    double convergence_fraction = 0.95;
    std::filesystem::path output_dir = "results";
};

/// Schemes run by `sweep` when none are configured: the mixed schemes
/// [32,4,4], [24,4,4], [16,4,4], [12,4,4] and the uniform baselines
/// [16,16,16], [8,8,8], [4,4,4].
std::vector<std::array<int, 3>> default_sweep();

/// Flat "key = value" text, '#' starts a comment. Unknown keys are rejected.
///
/// Keys: scheme / schemes (";"-separated list such as "[16,4,4]; [4,4,4]"),
/// rounds, clients_per_level, snr_db (comma list, "inf" = noiseless),
/// noise_reference (unit|measured), csi (estimated|perfect), gain_cap,
/// pilot_length, prefer_float, lr, epochs, batch, hidden (comma list),
/// n_train, n_test, classes, dim, spread, train_path, train_labels_path,
/// test_path, test_labels_path, data_format (csv|idx), master_seed, seeds,
/// workers, convergence_window, convergence_fraction, output_dir.
ExperimentConfig parse_config(std::string_view text);

/// As above, starting from `base` instead of the defaults.
ExperimentConfig parse_config(std::string_view text, ExperimentConfig base);

/// Applies one key/value to cfg with the same rules as parse_config.
void apply_setting(ExperimentConfig &cfg, std::string_view key, std::string_view value);

/// Throws ConfigError if any field breaks its module's invariants.
void validate(const ExperimentConfig &cfg);

struct MetricsRow
{
    std::string scheme;
    int seed = 0;
    int round = 1;
    double snr_db = 0.0;
    double server_acc = 0.0;
    std::optional<int> client_id; ///< empty on the server row
    std::optional<int> client_bits;
    std::optional<double> client_acc;
    std::optional<int> converged_round;
    int clip_events = 0;

    friend bool operator==(const MetricsRow &, const MetricsRow &) = default;
};

/// One server row followed by N client rows per round per run, ordered by
/// (scheme, seed, snr, round, client_id).
struct MetricsTable
{
    std::vector<MetricsRow> rows;
};

inline constexpr std::string_view kMetricsHeader =
    "scheme,seed,round,snr_db,server_acc,client_id,client_bits,client_acc,converged_round,clip_events";

/// Seed of a replicate-level stream shared by every scheme of that replicate
/// (dataset, shard plan, initial parameters).
std::uint64_t replicate_seed(std::uint64_t master, int replicate, Purpose purpose);

MetricsTable run_experiment(const ExperimentConfig &cfg);

/// CSV text of the table: fixed header, accuracies with 6 decimals, LF endings.
std::string format_metrics(const MetricsTable &table);

/// Writes to a sibling temp file and renames it into place.
void write_metrics(const MetricsTable &table, const std::filesystem::path &path);

MetricsTable parse_metrics(std::string_view csv);
MetricsTable read_metrics(const std::filesystem::path &path);

struct SchemeSummary
{
    std::string scheme;
    double snr_db = 0.0;
    int runs = 0;
    int converged_runs = 0;
    std::optional<double> converged_round; ///< mean over runs that converged
    double final_server_acc = 0.0;
    std::optional<double> mean_4bit_client_acc; ///< absent when the scheme has no 4-bit clients
    double jitter = 0.0;                        ///< mean post-convergence round-to-round std
};

/// Per (scheme, snr), averaged over seeds, in order of first appearance.
std::vector<SchemeSummary> summarize(const MetricsTable &table, int window = 5, double fraction = 0.95);

std::string format_summary(const std::vector<SchemeSummary> &summary);

} // namespace otafl::harness

#endif
