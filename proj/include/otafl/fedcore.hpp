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

#ifndef OTAFL_FEDCORE_HPP
#define OTAFL_FEDCORE_HPP

#include "otafl/axnum.hpp"
#include "otafl/data.hpp"
#include "otafl/model.hpp"
#include "otafl/phy.hpp"
#include "otafl/random.hpp"

#include <array>
#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

/// Federated rounds over the simulated air interface: local quantized training,
/// analog uplink aggregation, server averaging, downlink broadcast and client
/// re-quantization.
namespace otafl::fedcore
{

// --- precision schemes --------------------------------------------------------

std::span<const int> higher_levels() noexcept; ///< {32, 24, 16, 12}
std::span<const int> lower_levels() noexcept;  ///< {8, 6, 4}

/// Three precision levels, each shared by clients_per_level consecutive client
/// ids. Valid schemes hold one level from the higher list and two from the
/// lower list (in any order), or one level repeated three times.
struct SchemeConfig
{
    std::array<int, 3> levels{16, 4, 4};
    int clients_per_level = 5;
    bool prefer_float = false;

    int client_count() const noexcept { return 3 * clients_per_level; }
    int bits_of(int client_id) const { return levels.at(static_cast<std::size_t>(client_id / clients_per_level)); }
    bool is_uniform() const noexcept { return levels[0] == levels[1] && levels[1] == levels[2]; }
};

/// Throws ConfigError citing the level lists when the scheme is outside the grammar.
void validate(const SchemeConfig &scheme);

/// "[16,4,4]" -> levels, validated.
SchemeConfig parse_scheme(std::string_view text, int clients_per_level = 5, bool prefer_float = false);
std::string scheme_string(const SchemeConfig &scheme);

// --- clients ---------------------------------------------------------------------

struct ClientState
{
    int id = 0;
    axnum::QuantSpec spec;
    axnum::QuantizedTensor params;
    std::shared_ptr<const data::Dataset> shard;
    double weight = 1.0; ///< uniform; folded into the 1/N of the average
};

struct TrainingConfig
{
    int epochs = 2;
    double lr = 0.05;
    int batch = 32;
};

enum class CsiMode
{
    Estimated, ///< pilot-based least-squares estimate
    Perfect    ///< estimate equals the true coefficient
};

struct ChannelConfig
{
    phy::NoiseSpec noise;
    double gain_cap = phy::kDefaultGainCap;
    CsiMode csi = CsiMode::Estimated;
    phy::PilotSequence pilot = phy::PilotSequence::constant();
    bool fading = true; ///< false pins every h to 1
};

/// Seed source for one federated run: every stream is
/// derive_seed({master, scheme_index, replicate, client, round, purpose}).
struct StreamSeeds
{
    std::uint64_t master = 0;
    std::uint64_t scheme_index = 0;
    std::uint64_t replicate = 0;

    Rng stream(std::uint64_t client, int round, Purpose purpose) const
    {
        return Rng(derive_seed({master, scheme_index, replicate, client, static_cast<std::uint64_t>(round),
                                static_cast<std::uint64_t>(purpose)}));
    }
};

/// Channel and estimate of one client link, held for the whole round.
struct LinkState
{
    phy::ChannelState channel;
    phy::ChannelEstimate estimate;
};

/// `epochs` passes of train_step over the client's shard in seeded minibatch order.
ClientState local_round(const ClientState &client, const model::Architecture &arch, const TrainingConfig &training,
                        Rng &rng, int round_index = -1);

/// Draws each client's link for the round (Channel and Pilot streams).
std::vector<LinkState> draw_links(std::span<const ClientState> clients, const ChannelConfig &channel,
                                  const StreamSeeds &seeds, int round_index);

struct UplinkResult
{
    Eigen::VectorXd received; ///< real part of the server's received samples
    int clip_events = 0;
};

/// Modulate, precode and superpose every client's parameters; server noise is
/// drawn from the server's UplinkNoise stream. Sums in ascending client order.
UplinkResult uplink_aggregate(std::span<const ClientState> clients, std::span<const LinkState> links,
                              const ChannelConfig &channel, const StreamSeeds &seeds, int round_index);

/// received / N at full precision.
model::ModelParams server_update(const Eigen::VectorXd &received, int n_clients, const model::Architecture &arch);

struct DownlinkUpdate
{
    std::vector<ClientState> clients;
    int clip_events = 0;
};

/// Broadcast of the aggregate r_s through each client's link, recovery of
/// r_s / N and re-quantization to the client's own spec.
DownlinkUpdate downlink_update(const Eigen::VectorXd &aggregate, std::span<const ClientState> clients,
                               std::span<const LinkState> links, const ChannelConfig &channel,
                               const StreamSeeds &seeds, int round_index);

/// Same, for a server that holds only the averaged model: broadcasts N * global.
DownlinkUpdate downlink_update(const model::ModelParams &global, std::span<const ClientState> clients,
                               std::span<const LinkState> links, const ChannelConfig &channel,
                               const StreamSeeds &seeds, int round_index);

// --- orchestration ----------------------------------------------------------------

struct RoundRecord
{
    int round = 1;
    double server_accuracy = 0.0;
    std::vector<double> per_client_accuracy;
    std::vector<int> per_client_bits;
    int clip_events = 0;
    double snr_db = 0.0;
    std::chrono::duration<double> wall_time{};
};

/// Snapshot handed to an observer after each round.
struct RoundTrace
{
    int round;
    std::span<const ClientState> trained;   ///< client params entering the uplink
    const model::ModelParams &global;       ///< server model after averaging
    std::span<const ClientState> refreshed; ///< client params after downlink re-quantization
};

struct FederationConfig
{
    TrainingConfig training;
    ChannelConfig channel;
    int workers = 1;
    std::function<void(const RoundTrace &)> observer;
};

/// Everything a run needs besides the scheme.
struct FederationInputs
{
    model::Architecture arch;
    std::shared_ptr<const data::Dataset> train;
    std::shared_ptr<const data::Dataset> test;
    data::ShardPlan shards;
    model::ModelParams initial; ///< common starting point, quantized per client
};

/// Clients at their scheme precision, holding `initial` re-quantized.
std::vector<ClientState> make_clients(const SchemeConfig &scheme, const FederationInputs &inputs);

std::vector<RoundRecord> run_federation(const SchemeConfig &scheme, int rounds, const FederationConfig &config,
                                        const FederationInputs &inputs, const StreamSeeds &seeds);

/// First round whose trailing `window`-round mean server accuracy reaches
/// `fraction` of the final trailing mean.
std::optional<int> detect_convergence(std::span<const RoundRecord> records, int window, double fraction);
std::optional<int> detect_convergence(std::span<const double> accuracy, int window, double fraction);

/// Standard deviation of round-to-round accuracy changes from round `from` on.
double post_convergence_jitter(std::span<const double> accuracy, int from);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index writes its
/// own slot, so results do not depend on the worker count.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)> &fn);

} // namespace otafl::fedcore

#endif
