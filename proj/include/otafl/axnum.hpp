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

#ifndef OTAFL_AXNUM_HPP
#define OTAFL_AXNUM_HPP

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

/// Mixed-precision number formats: round-to-nearest fixed-point and minifloat
/// quantization, and re-quantization between formats.
namespace otafl::axnum
{

using CodeVector = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

enum class Format
{
    FixedPoint,
    MiniFloat
};

enum class Scaling
{
    PerTensorDynamic, ///< step = max|x| / (2^(bits-1) - 1)
    FixedRange        ///< step = range_bound / (2^(bits-1) - 1)
};

/// Precision levels a client may run at.
std::span<const int> allowed_levels() noexcept;

/// Sign / exponent / mantissa layout of a minifloat. All exponent fields encode
/// finite values (no inf/NaN patterns); field zero holds subnormals.
struct MiniFloatLayout
{
    int exp_bits;
    int mant_bits;

    int bits() const noexcept { return 1 + exp_bits + mant_bits; }
    int bias() const noexcept { return (1 << (exp_bits - 1)) - 1; }
    int min_normal_exponent() const noexcept { return 1 - bias(); }
    double max_finite() const noexcept;
    double min_subnormal() const noexcept;
};

struct QuantSpec
{
    int bits = 32;
    Format format = Format::FixedPoint;
    int exp_bits = 0;  ///< MiniFloat only
    int mant_bits = 0; ///< MiniFloat only
    Scaling scaling = Scaling::PerTensorDynamic;
    double range_bound = 1.0; ///< FixedRange only

    static QuantSpec fixed(int bits);
    static QuantSpec fixed_range(int bits, double bound);
    static QuantSpec minifloat(int exp_bits, int mant_bits);

    MiniFloatLayout layout() const noexcept { return {exp_bits, mant_bits}; }

    /// Largest positive code: 2^(bits-1) - 1.
    std::int64_t max_code() const noexcept;
    /// Most negative code: -2^(bits-1).
    std::int64_t min_code() const noexcept;

    friend bool operator==(const QuantSpec &, const QuantSpec &) = default;
};

/// Throws ConfigError if the spec breaks the level list, the minifloat width
/// rule or the layout sum.
void validate(const QuantSpec &spec);

/// FixedPoint below 8 bits. At 8 bits and above, prefer_float selects the
/// minifloat layout for that width (E4M3, E5M6, E5M10, E8M15, E8M23).
QuantSpec make_spec(int bits, bool prefer_float);

/// Short string form: "fx4", "fx16", "mf8e4m3", "mf32e8m23". FixedRange specs
/// append "@<bound>", e.g. "fx8@0.5". Parsing is case-insensitive.
std::string to_string(const QuantSpec &spec);
QuantSpec parse_spec(std::string_view text);

struct QuantizedTensor
{
    CodeVector codes;   ///< two's-complement codes (FixedPoint) or bit patterns (MiniFloat)
    double scale = 1.0; ///< dequantization step; 1.0 for MiniFloat
    QuantSpec spec;
    std::vector<std::size_t> shape;

    Eigen::Index size() const noexcept { return codes.size(); }
};

bool is_valid(const QuantizedTensor &t) noexcept;

/// Step size the spec's scale policy assigns to x. 1.0 for MiniFloat and for
/// an all-zero tensor under dynamic scaling.
double choose_scale(const Eigen::Ref<const Eigen::VectorXd> &x, const QuantSpec &spec);

/// Round-to-nearest, ties-to-even fixed-point code of x / scale, clamped to the
/// signed code range of `bits`.
std::int64_t encode_fixed(double x, double scale, int bits) noexcept;

/// Nearest representable minifloat (ties-to-even on the mantissa). Magnitudes
/// beyond max_finite saturate; zero always encodes as the all-zero pattern.
std::uint64_t encode_minifloat(double x, const MiniFloatLayout &layout) noexcept;
double decode_minifloat(std::uint64_t code, const MiniFloatLayout &layout) noexcept;

/// RTN quantization under the spec's scale policy. An empty shape means {x.size()}.
QuantizedTensor quantize_tensor(const Eigen::Ref<const Eigen::VectorXd> &x, const QuantSpec &spec,
                                std::vector<std::size_t> shape = {});

/// Quantization with an explicit fixed-point step (ignored for MiniFloat).
QuantizedTensor quantize_with_scale(const Eigen::Ref<const Eigen::VectorXd> &x, const QuantSpec &spec,
                                    double scale, std::vector<std::size_t> shape = {});

Eigen::VectorXd dequantize(const QuantizedTensor &t);

/// quantize_tensor(dequantize(t), target), keeping t's shape.
QuantizedTensor requantize(const QuantizedTensor &t, const QuantSpec &target);

} // namespace otafl::axnum

#endif
