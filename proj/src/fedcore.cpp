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

#include "otafl/fedcore.hpp"
#include "otafl/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

namespace otafl::fedcore
{

namespace
{

constexpr std::array<int, 4> kHigher = {32, 24, 16, 12};
constexpr std::array<int, 3> kLower = {8, 6, 4};

template <typename Range>
bool contains(const Range &r, int v)
{
    return std::find(std::begin(r), std::end(r), v) != std::end(r);
}

std::string grammar_hint()
{
    return "allowed levels are [32, 24, 16, 12, 8, 6, 4]; a scheme takes one level from the higher list "
           "[32, 24, 16, 12] and two from the lower list [8, 6, 4], or repeats one level three times";
}

} // namespace

std::span<const int> higher_levels() noexcept { return kHigher; }
std::span<const int> lower_levels() noexcept { return kLower; }

void validate(const SchemeConfig &scheme)
{
    for (int b : scheme.levels)
        if (!contains(kHigher, b) && !contains(kLower, b))
            throw ConfigError("scheme " + scheme_string(scheme) + ": bad level " + std::to_string(b) + "; " +
                              grammar_hint());
    if (scheme.clients_per_level < 1)
        throw ConfigError("scheme: clients_per_level must be at least 1");
    if (scheme.is_uniform())
        return;
    const auto high = std::count_if(scheme.levels.begin(), scheme.levels.end(),
                                     [](int b) { return contains(kHigher, b); });
    if (high != 1)
        throw ConfigError("scheme " + scheme_string(scheme) + " is not a valid permutation; " + grammar_hint());
}

SchemeConfig parse_scheme(std::string_view text, int clients_per_level, bool prefer_float)
{
    std::string s;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c)))
            s += c;
    const auto fail = [&] {
        return ConfigError("malformed scheme '" + std::string(text) + "'; expected e.g. [16,4,4]; " + grammar_hint());
    };
    if (s.size() < 2 || s.front() != '[' || s.back() != ']')
        throw fail();
    SchemeConfig scheme;
    scheme.clients_per_level = clients_per_level;
    scheme.prefer_float = prefer_float;
    std::size_t count = 0;
    std::string_view body(s.data() + 1, s.size() - 2);
    while (true) {
        const auto comma = body.find(',');
        const auto item = body.substr(0, comma);
        int value = 0;
        auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
        if (ec != std::errc() || end != item.data() + item.size() || count >= 3)
            throw fail();
        scheme.levels[count++] = value;
        if (comma == std::string_view::npos)
            break;
        body.remove_prefix(comma + 1);
    }
    if (count != 3)
        throw fail();
    validate(scheme);
    return scheme;
}

std::string scheme_string(const SchemeConfig &scheme)
{
    return "[" + std::to_string(scheme.levels[0]) + "," + std::to_string(scheme.levels[1]) + "," +
           std::to_string(scheme.levels[2]) + "]";
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)> &fn)
{
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(n);
    {
        std::vector<std::jthread> pool;
        const auto threads = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
        for (std::size_t t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
    }
    for (auto &e : errors)
        if (e)
            std::rethrow_exception(e);
}

ClientState local_round(const ClientState &client, const model::Architecture &arch, const TrainingConfig &training,
                        Rng &rng, int round_index)
{
    if (training.epochs < 1)
        throw ConfigError("local_round: epochs must be at least 1");
    if (!(training.lr >= 0.0) || !std::isfinite(training.lr))
        throw ConfigError("local_round: learning rate must be non-negative and finite");
    if (training.batch < 1)
        throw ConfigError("local_round: batch must be at least 1");
    if (!client.shard || client.shard->size() == 0)
        throw ValidationError("local_round: client " + std::to_string(client.id) + " has an empty shard");
    const data::Dataset &shard = *client.shard;
    const auto n = static_cast<std::size_t>(shard.size());

    ClientState out = client;
    // Forward and backward passes run on the quantized weights; updates
    // accumulate in a full-precision working copy that lives for this round only.
    Eigen::VectorXd working = axnum::dequantize(client.params);
    model::ModelParams current{working, arch};
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    try {
        for (int e = 0; e < training.epochs; ++e) {
            for (std::size_t i = n; i > 1; --i)
                std::swap(order[i - 1], order[rng.below(i)]);
            for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(training.batch)) {
                const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(training.batch), n - start);
                Eigen::MatrixXd x(static_cast<Eigen::Index>(len), shard.dim());
                Eigen::VectorXi y(static_cast<Eigen::Index>(len));
                for (std::size_t r = 0; r < len; ++r) {
                    x.row(static_cast<Eigen::Index>(r)) = shard.features.row(static_cast<Eigen::Index>(order[start + r]));
                    y[static_cast<Eigen::Index>(r)] = shard.labels[static_cast<Eigen::Index>(order[start + r])];
                }
                working -= training.lr * model::gradient(current, x, y);
                if (!working.allFinite())
                    throw TrainingDivergence("local_round: parameters diverged");
                out.params = axnum::quantize_tensor(working, client.spec);
                current.flat = axnum::dequantize(out.params);
            }
        }
    } catch (const TrainingDivergence &err) {
        throw TrainingDivergence(std::string(err.what()) + " (client " + std::to_string(client.id) + ", round " +
                                     std::to_string(round_index) + ")",
                                 round_index, client.id);
    }
    return out;
}

std::vector<LinkState> draw_links(std::span<const ClientState> clients, const ChannelConfig &channel,
                                  const StreamSeeds &seeds, int round_index)
{
    std::vector<LinkState> links(clients.size());
    for (std::size_t i = 0; i < clients.size(); ++i) {
        const auto id = static_cast<std::uint64_t>(clients[i].id);
        if (channel.fading) {
            Rng rng = seeds.stream(id, round_index, Purpose::Channel);
            links[i].channel = phy::sample_channel(rng);
        }
        if (channel.csi == CsiMode::Perfect) {
            links[i].estimate = {links[i].channel.h};
        } else {
            Rng rng = seeds.stream(id, round_index, Purpose::Pilot);
            links[i].estimate = phy::estimate_channel(links[i].channel, channel.pilot, channel.noise, rng);
        }
    }
    return links;
}

UplinkResult uplink_aggregate(std::span<const ClientState> clients, std::span<const LinkState> links,
                              const ChannelConfig &channel, const StreamSeeds &seeds, int round_index)
{
    if (clients.empty())
        throw ProtocolError("uplink: no clients");
    if (links.size() != clients.size())
        throw ProtocolError("uplink: link count does not match client count");
    const Eigen::Index n = clients.front().params.size();
    std::vector<Eigen::VectorXcd> tx;
    std::vector<phy::ChannelState> channels;
    UplinkResult out;
    for (std::size_t i = 0; i < clients.size(); ++i) {
        if (clients[i].params.size() != n)
            throw ProtocolError("uplink: client " + std::to_string(clients[i].id) + " holds " +
                                std::to_string(clients[i].params.size()) + " parameters, expected " +
                                std::to_string(n));
        auto pre = phy::precode(phy::modulate_amplitude(clients[i].params), links[i].estimate, channel.gain_cap);
        out.clip_events += pre.clipped ? 1 : 0;
        tx.push_back(std::move(pre.samples));
        channels.push_back(links[i].channel);
    }
    Rng noise_rng = seeds.stream(kServerStream, round_index, Purpose::UplinkNoise);
    out.received = phy::ota_superpose(tx, channels, channel.noise, noise_rng).samples.real();
    return out;
}

model::ModelParams server_update(const Eigen::VectorXd &received, int n_clients, const model::Architecture &arch)
{
    if (n_clients < 1)
        throw ProtocolError("server_update: client count must be at least 1");
    if (received.size() != arch.parameter_count())
        throw ProtocolError("server_update: received vector length does not match architecture");
    return {received / static_cast<double>(n_clients), arch};
}

DownlinkUpdate downlink_update(const Eigen::VectorXd &aggregate, std::span<const ClientState> clients,
                               std::span<const LinkState> links, const ChannelConfig &channel,
                               const StreamSeeds &seeds, int round_index)
{
    if (!aggregate.allFinite())
        throw NumericInputError("downlink: aggregate is not finite");
    if (links.size() != clients.size())
        throw ProtocolError("downlink: link count does not match client count");
    const int n = static_cast<int>(clients.size());
    const phy::ReceivedSignal broadcast{aggregate.cast<phy::complex>()};
    DownlinkUpdate out;
    out.clients.assign(clients.begin(), clients.end());
    for (std::size_t i = 0; i < clients.size(); ++i) {
        Rng rng = seeds.stream(static_cast<std::uint64_t>(clients[i].id), round_index, Purpose::DownlinkNoise);
        const auto rec =
            phy::downlink_recover(broadcast, n, links[i].channel, links[i].estimate, channel.noise, rng, channel.gain_cap);
        out.clip_events += rec.clipped ? 1 : 0;
        out.clients[i].params = axnum::quantize_tensor(rec.values, clients[i].spec);
    }
    return out;
}

DownlinkUpdate downlink_update(const model::ModelParams &global, std::span<const ClientState> clients,
                               std::span<const LinkState> links, const ChannelConfig &channel,
                               const StreamSeeds &seeds, int round_index)
{
    return downlink_update(Eigen::VectorXd(global.flat * static_cast<double>(clients.size())), clients, links,
                           channel, seeds, round_index);
}

std::vector<ClientState> make_clients(const SchemeConfig &scheme, const FederationInputs &inputs)
{
    validate(scheme);
    const int n = scheme.client_count();
    if (static_cast<int>(inputs.shards.shards.size()) != n)
        throw ConfigError("federation: shard plan has " + std::to_string(inputs.shards.shards.size()) +
                          " shards for " + std::to_string(n) + " clients");
    std::vector<ClientState> clients(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        auto &c = clients[static_cast<std::size_t>(i)];
        c.id = i;
        c.spec = axnum::make_spec(scheme.bits_of(i), scheme.prefer_float);
        c.params = axnum::quantize_tensor(inputs.initial.flat, c.spec);
        c.shard = std::make_shared<const data::Dataset>(data::subset(*inputs.train, inputs.shards.shards[static_cast<std::size_t>(i)]));
        c.weight = 1.0 / n;
        if (c.shard->size() == 0)
            throw ValidationError("federation: client " + std::to_string(i) + " has an empty shard");
    }
    return clients;
}

std::vector<RoundRecord> run_federation(const SchemeConfig &scheme, int rounds, const FederationConfig &config,
                                        const FederationInputs &inputs, const StreamSeeds &seeds)
{
    if (rounds < 1)
        throw ConfigError("federation: rounds must be at least 1");
    inputs.arch.validate();
    std::vector<ClientState> clients = make_clients(scheme, inputs);
    const int n = static_cast<int>(clients.size());

    std::vector<RoundRecord> records;
    records.reserve(static_cast<std::size_t>(rounds));
    for (int k = 1; k <= rounds; ++k) {
        const auto started = std::chrono::steady_clock::now();
        try {
            std::vector<ClientState> trained(clients.size());
            parallel_for(clients.size(), config.workers, [&](std::size_t i) {
                Rng rng = seeds.stream(static_cast<std::uint64_t>(clients[i].id), k, Purpose::Train);
                trained[i] = local_round(clients[i], inputs.arch, config.training, rng, k);
            });

            const auto links = draw_links(trained, config.channel, seeds, k);
            const auto up = uplink_aggregate(trained, links, config.channel, seeds, k);
            const auto global = server_update(up.received, n, inputs.arch);
            auto down = downlink_update(up.received, trained, links, config.channel, seeds, k);

            RoundRecord rec;
            rec.round = k;
            rec.snr_db = config.channel.noise.snr_db;
            rec.clip_events = up.clip_events + down.clip_events;
            rec.server_accuracy = model::evaluate(global, *inputs.test);
            rec.per_client_accuracy.resize(clients.size());
            rec.per_client_bits.resize(clients.size());
            parallel_for(clients.size(), config.workers, [&](std::size_t i) {
                const model::ModelParams p{axnum::dequantize(down.clients[i].params), inputs.arch};
                rec.per_client_accuracy[i] = model::evaluate(p, *inputs.test);
                rec.per_client_bits[i] = down.clients[i].spec.bits;
            });
            if (config.observer)
                config.observer(RoundTrace{k, trained, global, down.clients});
            clients = std::move(down.clients);
            rec.wall_time = std::chrono::steady_clock::now() - started;
            records.push_back(std::move(rec));
        } catch (const TrainingDivergence &) {
            throw;
        } catch (const Error &err) {
            throw Error("round " + std::to_string(k) + ": " + err.what());
        }
    }
    return records;
}

std::optional<int> detect_convergence(std::span<const double> accuracy, int window, double fraction)
{
    if (window < 1)
        throw ConfigError("convergence: window must be at least 1");
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ConfigError("convergence: fraction must lie in (0, 1]");
    const auto n = static_cast<int>(accuracy.size());
    if (n < window)
        return std::nullopt;
    std::vector<double> mean(static_cast<std::size_t>(n), 0.0);
    for (int k = window; k <= n; ++k) {
        double s = 0.0;
        for (int j = k - window; j < k; ++j)
            s += accuracy[static_cast<std::size_t>(j)];
        mean[static_cast<std::size_t>(k - 1)] = s / window;
    }
    const double target = fraction * mean[static_cast<std::size_t>(n - 1)];
    for (int k = window; k <= n; ++k)
        if (mean[static_cast<std::size_t>(k - 1)] >= target)
            return k;
    return std::nullopt;
}

std::optional<int> detect_convergence(std::span<const RoundRecord> records, int window, double fraction)
{
    std::vector<double> acc;
    acc.reserve(records.size());
    for (const auto &r : records)
        acc.push_back(r.server_accuracy);
    return detect_convergence(acc, window, fraction);
}

double post_convergence_jitter(std::span<const double> accuracy, int from)
{
    std::vector<double> diffs;
    for (std::size_t k = static_cast<std::size_t>(std::max(from, 1)); k < accuracy.size(); ++k)
        diffs.push_back(accuracy[k] - accuracy[k - 1]);
    if (diffs.size() < 2)
        return 0.0;
    const double mean = std::accumulate(diffs.begin(), diffs.end(), 0.0) / static_cast<double>(diffs.size());
    double ss = 0.0;
    for (double d : diffs)
        ss += (d - mean) * (d - mean);
    return std::sqrt(ss / static_cast<double>(diffs.size() - 1));
}

} // namespace otafl::fedcore
