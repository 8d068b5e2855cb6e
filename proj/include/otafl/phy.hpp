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

#ifndef OTAFL_PHY_HPP
#define OTAFL_PHY_HPP

#include "otafl/axnum.hpp"
#include "otafl/random.hpp"

#include <Eigen/Core>

#include <complex>
#include <limits>
#include <span>
#include <utility>
#include <vector>

/// Complex-baseband physical layer: block Rayleigh fading, pilot-based channel
/// estimation, truncated channel inversion, analog amplitude modulation and
/// over-the-air superposition with AWGN.
namespace otafl::phy
{

using complex = std::complex<double>;

/// Block-fading coefficient of one client-server link for one round.
struct ChannelState
{
    complex h{1.0, 0.0};
};

struct ChannelEstimate
{
    complex h_hat{1.0, 0.0};
};

struct PilotSequence
{
    Eigen::VectorXcd symbols;

    /// `length` symbols of equal power; the default pilot is 8 unit symbols.
    static PilotSequence constant(Eigen::Index length = 8, double symbol_power = 1.0);

    double energy() const { return symbols.squaredNorm(); }
    double symbol_power() const { return symbols.size() ? energy() / static_cast<double>(symbols.size()) : 0.0; }
};

enum class NoiseReference
{
    UnitSignal,    ///< sigma^2 = 10^(-snr/10)
    MeasuredSignal ///< sigma^2 = P_signal * 10^(-snr/10), P_signal measured per transmission
};

struct NoiseSpec
{
    double snr_db = 20.0; ///< +inf means noiseless
    NoiseReference reference = NoiseReference::MeasuredSignal;

    static NoiseSpec noiseless() { return {std::numeric_limits<double>::infinity(), NoiseReference::UnitSignal}; }

    bool is_noiseless() const noexcept { return snr_db == std::numeric_limits<double>::infinity(); }

    /// Noise variance for a transmission whose measured average power is
    /// `signal_power`. UnitSignal ignores the argument.
    double variance(double signal_power = 1.0) const noexcept;
};

struct ReceivedSignal
{
    Eigen::VectorXcd samples;
};

struct PrecodeResult
{
    Eigen::VectorXcd samples;
    bool clipped = false;   ///< gain hit the cap
    bool deep_fade = false; ///< h_hat was exactly zero
};

/// Default cap on |1/h_hat| for truncated inversion.
inline constexpr double kDefaultGainCap = 10.0;

/// h = (a + ib)/sqrt(2), a, b ~ N(0, 1).
ChannelState sample_channel(Rng &rng);

/// Least-squares estimate sum(y_l conj(u_l)) / sum |u_l|^2 with y_l = h u_l + n_l.
/// Pilot noise variance is taken relative to the pilot's per-symbol power.
ChannelEstimate estimate_channel(const ChannelState &channel, const PilotSequence &pilot, const NoiseSpec &noise,
                                 Rng &rng);

/// Gain applied by truncated channel inversion; flags report clipping.
struct InversionGain
{
    complex gain;
    bool clipped = false;
    bool deep_fade = false;
};
InversionGain inversion_gain(complex h_hat, double gain_cap) noexcept;

/// g * theta with g = 1/h_hat, or the cap along the same phase when |1/h_hat|
/// exceeds gain_cap. A zero estimate transmits at the cap with zero phase.
PrecodeResult precode(const Eigen::Ref<const Eigen::VectorXd> &theta, const ChannelEstimate &est,
                      double gain_cap = kDefaultGainCap);

/// Baseband amplitudes of the quantized parameters. The carrier cancels under
/// coherent demodulation and is not sampled.
Eigen::VectorXd modulate_amplitude(const axnum::QuantizedTensor &t);

/// samples[j] = sum_i h_i x_i[j] + n_j, summed in list order.
ReceivedSignal ota_superpose(std::span<const Eigen::VectorXcd> precoded, std::span<const ChannelState> channels,
                             const NoiseSpec &noise, Rng &rng);

struct DownlinkResult
{
    Eigen::VectorXd values;
    bool clipped = false;
    bool deep_fade = false;
};

/// Client side of the broadcast: receives (1/N) h r_s + n_i, inverts with the
/// client's estimate under the truncation rule and keeps the real part.
DownlinkResult downlink_recover(const ReceivedSignal &r_s, int n_clients, const ChannelState &channel,
                                const ChannelEstimate &estimate, const NoiseSpec &noise, Rng &rng,
                                double gain_cap = kDefaultGainCap);

/// Shorthand for perfect CSI (estimate == channel).
DownlinkResult downlink_recover(const ReceivedSignal &r_s, int n_clients, const ChannelState &channel,
                                const NoiseSpec &noise, Rng &rng, double gain_cap = kDefaultGainCap);

// --- Digital QAM superposition -------------------------------------------

/// Gray-labeled square QAM point of a fixed-point code. The upper bits/2 bits of
/// the code's bit pattern select the in-phase level, the lower bits/2 the
/// quadrature level; levels are the odd integers -(M-1), ..., M-1.
complex qam_map(std::int64_t code, int bits);

/// Nearest constellation point of a `bits`-wide square QAM, returned as a code.
/// Per axis, a point midway between two levels goes to the even level index.
std::int64_t qam_demap(complex point, int bits);

struct QamDemoReport
{
    Eigen::VectorXd digital_sum_decoded; ///< digital QAM superposition decoded on the wider constellation
    Eigen::VectorXd true_sum;            ///< quantize(dequantize(a) + dequantize(b)) on the wider spec
    Eigen::VectorXd analog_sum;          ///< amplitude superposition re-quantized on the same grid
    double mismatch_fraction = 0.0;
    double analog_mismatch_fraction = 0.0;
    /// Square QAM with an even level count has no point at the origin, so even a
    /// zero code carries energy and sums of zeros mis-decode.
    bool offset_constellation = true;
    int wide_bits = 0;
};

/// Compares digital QAM superposition against the true sum of two quantized
/// tensors. Both must be FixedPoint with bits in {4, 8, 12, 16}.
QamDemoReport qam_superposition_demo(const axnum::QuantizedTensor &a, const axnum::QuantizedTensor &b);

/// Every (code_a, code_b) pair of two fixed-point widths laid out as two
/// aligned tensors; each tensor's step maps its largest code to 1.0.
std::pair<axnum::QuantizedTensor, axnum::QuantizedTensor> exhaustive_code_pairs(int bits_a, int bits_b);

} // namespace otafl::phy

#endif
