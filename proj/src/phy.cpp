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

#include "otafl/phy.hpp"
#include "otafl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace otafl::phy
{

namespace
{

std::uint64_t gray_encode(std::uint64_t m) { return m ^ (m >> 1); }

std::uint64_t gray_decode(std::uint64_t g)
{
    std::uint64_t m = g;
    for (std::uint64_t shift = 1; shift < 64; shift <<= 1)
        m ^= m >> shift;
    return m;
}

void require_qam_width(const axnum::QuantizedTensor &t, const char *name)
{
    const int b = t.spec.bits;
    if (t.spec.format != axnum::Format::FixedPoint)
        throw ConfigError(std::string("qam demo: tensor ") + name + " must be fixed-point");
    if (b != 4 && b != 8 && b != 12 && b != 16)
        throw ConfigError(std::string("qam demo: tensor ") + name + " has " + std::to_string(b) +
                          " bits; square QAM demo supports widths 4, 8, 12, 16");
}

Eigen::VectorXcd add_noise(Eigen::VectorXcd signal, const NoiseSpec &noise, Rng &rng)
{
    if (noise.is_noiseless())
        return signal;
    const double power = signal.size() ? signal.squaredNorm() / static_cast<double>(signal.size()) : 0.0;
    const double var = noise.variance(power);
    for (Eigen::Index j = 0; j < signal.size(); ++j)
        signal[j] += rng.complex_normal(var);
    return signal;
}

} // namespace

PilotSequence PilotSequence::constant(Eigen::Index length, double symbol_power)
{
    return {Eigen::VectorXcd::Constant(length, complex(std::sqrt(symbol_power), 0.0))};
}

double NoiseSpec::variance(double signal_power) const noexcept
{
    if (is_noiseless())
        return 0.0;
    const double ref = reference == NoiseReference::UnitSignal ? 1.0 : signal_power;
    return ref * std::pow(10.0, -snr_db / 10.0);
}

ChannelState sample_channel(Rng &rng)
{
    const double a = rng.normal();
    const double b = rng.normal();
    return {complex(a, b) / std::sqrt(2.0)};
}

ChannelEstimate estimate_channel(const ChannelState &channel, const PilotSequence &pilot, const NoiseSpec &noise,
                                 Rng &rng)
{
    const double energy = pilot.energy();
    if (pilot.symbols.size() == 0 || !(energy > 0.0))
        throw ProtocolError("channel estimation: pilot sequence has zero energy");
    // without noise the LS estimate is h itself; skip the round-off of the division
    if (noise.is_noiseless())
        return {channel.h};
    const double var = noise.variance(pilot.symbol_power());
    complex acc{0.0, 0.0};
    for (Eigen::Index l = 0; l < pilot.symbols.size(); ++l) {
        complex y = channel.h * pilot.symbols[l];
        if (var > 0.0)
            y += rng.complex_normal(var);
        acc += y * std::conj(pilot.symbols[l]);
    }
    return {acc / energy};
}

InversionGain inversion_gain(complex h_hat, double gain_cap) noexcept
{
    if (h_hat == complex(0.0, 0.0))
        return {complex(gain_cap, 0.0), true, true};
    const complex inv = 1.0 / h_hat;
    const double mag = std::abs(inv);
    if (mag <= gain_cap)
        return {inv, false, false};
    return {gain_cap * inv / mag, true, false};
}

PrecodeResult precode(const Eigen::Ref<const Eigen::VectorXd> &theta, const ChannelEstimate &est, double gain_cap)
{
    if (!std::isfinite(est.h_hat.real()) || !std::isfinite(est.h_hat.imag()))
        throw NumericInputError("precode: non-finite channel estimate");
    const auto g = inversion_gain(est.h_hat, gain_cap);
    PrecodeResult out;
    out.samples = theta.cast<complex>() * g.gain;
    out.clipped = g.clipped;
    out.deep_fade = g.deep_fade;
    return out;
}

Eigen::VectorXd modulate_amplitude(const axnum::QuantizedTensor &t) { return axnum::dequantize(t); }

ReceivedSignal ota_superpose(std::span<const Eigen::VectorXcd> precoded, std::span<const ChannelState> channels,
                             const NoiseSpec &noise, Rng &rng)
{
    if (precoded.empty())
        throw ProtocolError("ota superposition: no transmitters");
    if (precoded.size() != channels.size())
        throw ProtocolError("ota superposition: " + std::to_string(precoded.size()) + " signals but " +
                            std::to_string(channels.size()) + " channels");
    const Eigen::Index n = precoded.front().size();
    Eigen::VectorXcd sum = Eigen::VectorXcd::Zero(n);
    for (std::size_t i = 0; i < precoded.size(); ++i) {
        if (precoded[i].size() != n)
            throw ProtocolError("ota superposition: client " + std::to_string(i) + " sent " +
                                std::to_string(precoded[i].size()) + " samples, expected " + std::to_string(n));
        sum += channels[i].h * precoded[i];
    }
    return {add_noise(std::move(sum), noise, rng)};
}

DownlinkResult downlink_recover(const ReceivedSignal &r_s, int n_clients, const ChannelState &channel,
                                const ChannelEstimate &estimate, const NoiseSpec &noise, Rng &rng, double gain_cap)
{
    if (n_clients < 1)
        throw ProtocolError("downlink: client count must be at least 1");
    const double n = static_cast<double>(n_clients);
    const auto g = inversion_gain(estimate.h_hat, gain_cap);
    // g h is exactly one under perfect, unclipped inversion; apply it
    // symbolically so the recovered values equal real(r_s) / N bit for bit
    const bool cancels = !g.clipped && estimate.h_hat == channel.h;
    Eigen::VectorXd values = cancels ? Eigen::VectorXd(r_s.samples.real() / n)
                                     : Eigen::VectorXd((g.gain * channel.h / n * r_s.samples).real());
    if (!noise.is_noiseless()) {
        const Eigen::VectorXcd arriving = (channel.h / n) * r_s.samples;
        const Eigen::VectorXcd noisy = add_noise(arriving, noise, rng);
        values += (g.gain * (noisy - arriving)).real();
    }
    return {std::move(values), g.clipped, g.deep_fade};
}

DownlinkResult downlink_recover(const ReceivedSignal &r_s, int n_clients, const ChannelState &channel,
                                const NoiseSpec &noise, Rng &rng, double gain_cap)
{
    return downlink_recover(r_s, n_clients, channel, ChannelEstimate{channel.h}, noise, rng, gain_cap);
}

complex qam_map(std::int64_t code, int bits)
{
    const int half = bits / 2;
    const std::uint64_t mask = (std::uint64_t{1} << half) - 1;
    const auto pattern = static_cast<std::uint64_t>(code) & ((std::uint64_t{1} << bits) - 1);
    const double levels = static_cast<double>(std::uint64_t{1} << half);
    const auto level = [&](std::uint64_t label) {
        return 2.0 * static_cast<double>(gray_decode(label)) - (levels - 1.0);
    };
    return {level(pattern >> half), level(pattern & mask)};
}

std::int64_t qam_demap(complex point, int bits)
{
    const int half = bits / 2;
    const double levels = static_cast<double>(std::uint64_t{1} << half);
    const auto label = [&](double x) {
        const double m = std::clamp(std::nearbyint((x + levels - 1.0) / 2.0), 0.0, levels - 1.0);
        return gray_encode(static_cast<std::uint64_t>(m));
    };
    const std::uint64_t pattern = (label(point.real()) << half) | label(point.imag());
    // sign-extend the two's-complement pattern
    const std::uint64_t sign = std::uint64_t{1} << (bits - 1);
    return static_cast<std::int64_t>(pattern ^ sign) - static_cast<std::int64_t>(sign);
}

QamDemoReport qam_superposition_demo(const axnum::QuantizedTensor &a, const axnum::QuantizedTensor &b)
{
    require_qam_width(a, "a");
    require_qam_width(b, "b");
    if (a.codes.size() != b.codes.size() || a.shape != b.shape)
        throw ProtocolError("qam demo: tensors differ in shape");

    const int wide = std::max(a.spec.bits, b.spec.bits);
    const auto wide_spec = axnum::QuantSpec::fixed(wide);
    const Eigen::VectorXd da = axnum::dequantize(a);
    const Eigen::VectorXd db = axnum::dequantize(b);

    const auto truth = axnum::quantize_tensor(da + db, wide_spec);

    // Digital path: constellation points add on air, receiver slices on the
    // wider constellation and reads the label as a code on the true-sum grid.
    const Eigen::Index n = a.codes.size();
    axnum::CodeVector digital(n);
    for (Eigen::Index j = 0; j < n; ++j)
        digital[j] = qam_demap(qam_map(a.codes[j], a.spec.bits) + qam_map(b.codes[j], b.spec.bits), wide);

    // Analog path: amplitudes superpose over unit channels without noise.
    const std::vector<Eigen::VectorXcd> tx = {modulate_amplitude(a).cast<complex>(),
                                              modulate_amplitude(b).cast<complex>()};
    const std::vector<ChannelState> unit(2);
    Rng unused(0);
    const auto rx = ota_superpose(tx, unit, NoiseSpec::noiseless(), unused);
    const auto analog = axnum::quantize_with_scale(rx.samples.real(), wide_spec, truth.scale);

    QamDemoReport report;
    report.wide_bits = wide;
    report.true_sum = axnum::dequantize(truth);
    report.digital_sum_decoded = digital.cast<double>() * truth.scale;
    report.analog_sum = axnum::dequantize(analog);
    report.mismatch_fraction =
        static_cast<double>((digital.array() != truth.codes.array()).count()) / static_cast<double>(n);
    report.analog_mismatch_fraction =
        static_cast<double>((analog.codes.array() != truth.codes.array()).count()) / static_cast<double>(n);
    return report;
}

std::pair<axnum::QuantizedTensor, axnum::QuantizedTensor> exhaustive_code_pairs(int bits_a, int bits_b)
{
    const auto spec_a = axnum::QuantSpec::fixed(bits_a);
    const auto spec_b = axnum::QuantSpec::fixed(bits_b);
    axnum::validate(spec_a);
    axnum::validate(spec_b);
    if (bits_a > 16 || bits_b > 16)
        throw ConfigError("exhaustive code pairs: widths above 16 bits are too large to enumerate");
    const std::int64_t count_a = std::int64_t{1} << bits_a;
    const std::int64_t count_b = std::int64_t{1} << bits_b;
    const auto n = static_cast<Eigen::Index>(count_a * count_b);
    axnum::QuantizedTensor a{axnum::CodeVector(n), 1.0 / static_cast<double>(spec_a.max_code()), spec_a,
                             {static_cast<std::size_t>(n)}};
    axnum::QuantizedTensor b{axnum::CodeVector(n), 1.0 / static_cast<double>(spec_b.max_code()), spec_b,
                             {static_cast<std::size_t>(n)}};
    for (std::int64_t i = 0; i < count_a; ++i)
        for (std::int64_t j = 0; j < count_b; ++j) {
            a.codes[i * count_b + j] = spec_a.min_code() + i;
            b.codes[i * count_b + j] = spec_b.min_code() + j;
        }
    return {std::move(a), std::move(b)};
}

} // namespace otafl::phy
