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

#include "otafl/axnum.hpp"
#include "otafl/errors.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numeric>

namespace otafl::axnum
{

namespace
{

constexpr std::array<int, 7> kLevels = {4, 6, 8, 12, 16, 24, 32};

std::string levels_text()
{
    std::string s = "[";
    for (std::size_t i = 0; i < kLevels.size(); ++i)
        s += (i ? ", " : "") + std::to_string(kLevels[i]);
    return s + "]";
}

bool is_level(int bits) { return std::find(kLevels.begin(), kLevels.end(), bits) != kLevels.end(); }

void require_finite(const Eigen::Ref<const Eigen::VectorXd> &x)
{
    if (x.size() == 0)
        throw NumericInputError("quantize: empty input");
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (!std::isfinite(x[i]))
            throw NumericInputError("quantize: non-finite value at index " + std::to_string(i));
}

std::vector<std::size_t> resolve_shape(std::vector<std::size_t> shape, Eigen::Index n)
{
    if (shape.empty())
        return {static_cast<std::size_t>(n)};
    const auto prod = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    if (prod != static_cast<std::size_t>(n))
        throw ValidationError("quantize: shape product " + std::to_string(prod) + " != element count " +
                              std::to_string(n));
    return shape;
}

} // namespace

std::span<const int> allowed_levels() noexcept { return kLevels; }

double MiniFloatLayout::max_finite() const noexcept
{
    const int top = (1 << exp_bits) - 1 - bias();
    return std::ldexp(2.0 - std::ldexp(1.0, -mant_bits), top);
}

double MiniFloatLayout::min_subnormal() const noexcept
{
    return std::ldexp(1.0, min_normal_exponent() - mant_bits);
}

QuantSpec QuantSpec::fixed(int bits)
{
    QuantSpec s;
    s.bits = bits;
    s.format = Format::FixedPoint;
    return s;
}

QuantSpec QuantSpec::fixed_range(int bits, double bound)
{
    QuantSpec s = fixed(bits);
    s.scaling = Scaling::FixedRange;
    s.range_bound = bound;
    return s;
}

QuantSpec QuantSpec::minifloat(int exp_bits, int mant_bits)
{
    QuantSpec s;
    s.bits = 1 + exp_bits + mant_bits;
    s.format = Format::MiniFloat;
    s.exp_bits = exp_bits;
    s.mant_bits = mant_bits;
    return s;
}

std::int64_t QuantSpec::max_code() const noexcept { return (std::int64_t{1} << (bits - 1)) - 1; }
std::int64_t QuantSpec::min_code() const noexcept { return -(std::int64_t{1} << (bits - 1)); }

void validate(const QuantSpec &spec)
{
    if (!is_level(spec.bits))
        throw ConfigError("unsupported bit width " + std::to_string(spec.bits) + "; allowed levels are " +
                          levels_text());
    if (spec.format == Format::MiniFloat) {
        if (spec.bits < 8)
            throw ConfigError("minifloat requires at least 8 bits, got " + std::to_string(spec.bits));
        if (spec.exp_bits < 2 || spec.mant_bits < 1 || 1 + spec.exp_bits + spec.mant_bits != spec.bits)
            throw ConfigError("minifloat layout e" + std::to_string(spec.exp_bits) + "m" +
                              std::to_string(spec.mant_bits) + " does not fill " + std::to_string(spec.bits) +
                              " bits");
        // exponent fields wider than 11 bits would leave the double range
        if (spec.exp_bits > 11)
            throw ConfigError("minifloat exponent field too wide: " + std::to_string(spec.exp_bits));
    }
    if (spec.scaling == Scaling::FixedRange && !(std::isfinite(spec.range_bound) && spec.range_bound > 0.0))
        throw ConfigError("fixed-range bound must be positive and finite");
}

QuantSpec make_spec(int bits, bool prefer_float)
{
    if (!is_level(bits))
        throw ConfigError("unsupported bit width " + std::to_string(bits) + "; allowed levels are " +
                          levels_text());
    if (bits < 8 || !prefer_float)
        return QuantSpec::fixed(bits);
    switch (bits) {
    case 8:
        return QuantSpec::minifloat(4, 3);
    case 12:
        return QuantSpec::minifloat(5, 6);
    case 16:
        return QuantSpec::minifloat(5, 10);
    case 24:
        return QuantSpec::minifloat(8, 15);
    default:
        return QuantSpec::minifloat(8, 23);
    }
}

std::string to_string(const QuantSpec &spec)
{
    if (spec.format == Format::MiniFloat)
        return "mf" + std::to_string(spec.bits) + "e" + std::to_string(spec.exp_bits) + "m" +
               std::to_string(spec.mant_bits);
    std::string s = "fx" + std::to_string(spec.bits);
    if (spec.scaling == Scaling::FixedRange) {
        std::array<char, 32> buf{};
        auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), spec.range_bound);
        s += "@" + std::string(buf.data(), end);
    }
    return s;
}

QuantSpec parse_spec(std::string_view text)
{
    std::string s(text);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    const auto fail = [&]() -> ConfigError {
        return ConfigError("malformed precision spec '" + std::string(text) +
                           "'; expected e.g. fx4, fx8@0.5 or mf8e4m3");
    };
    const char *p = s.data();
    const char *end = s.data() + s.size();
    const auto read_int = [&](int &out) {
        auto [next, ec] = std::from_chars(p, end, out);
        if (ec != std::errc() || next == p)
            throw fail();
        p = next;
    };
    const auto expect = [&](char c) {
        if (p == end || *p != c)
            throw fail();
        ++p;
    };
    if (s.size() < 3)
        throw fail();

    QuantSpec spec;
    if (s.starts_with("fx")) {
        p += 2;
        int bits = 0;
        read_int(bits);
        spec = QuantSpec::fixed(bits);
        if (p != end) {
            expect('@');
            double bound = 0.0;
            auto [next, ec] = std::from_chars(p, end, bound);
            if (ec != std::errc() || next != end)
                throw fail();
            p = next;
            spec = QuantSpec::fixed_range(bits, bound);
        }
    } else if (s.starts_with("mf")) {
        p += 2;
        int bits = 0, e = 0, m = 0;
        read_int(bits);
        expect('e');
        read_int(e);
        expect('m');
        read_int(m);
        if (p != end)
            throw fail();
        spec = QuantSpec::minifloat(e, m);
        if (spec.bits != bits)
            throw ConfigError("minifloat layout e" + std::to_string(e) + "m" + std::to_string(m) +
                              " does not fill " + std::to_string(bits) + " bits");
    } else {
        throw fail();
    }
    validate(spec);
    return spec;
}

bool is_valid(const QuantizedTensor &t) noexcept
{
    try {
        validate(t.spec);
    } catch (const ConfigError &) {
        return false;
    }
    const auto prod = std::accumulate(t.shape.begin(), t.shape.end(), std::size_t{1}, std::multiplies<>());
    if (t.shape.empty() || prod != static_cast<std::size_t>(t.codes.size()))
        return false;
    if (!(t.scale > 0.0) || !std::isfinite(t.scale))
        return false;
    if (t.spec.format == Format::FixedPoint) {
        const auto lo = t.spec.min_code(), hi = t.spec.max_code();
        return (t.codes.array() >= lo).all() && (t.codes.array() <= hi).all();
    }
    const std::int64_t patterns = std::int64_t{1} << t.spec.bits;
    return t.scale == 1.0 && (t.codes.array() >= 0).all() && (t.codes.array() < patterns).all();
}

double choose_scale(const Eigen::Ref<const Eigen::VectorXd> &x, const QuantSpec &spec)
{
    if (spec.format == Format::MiniFloat)
        return 1.0;
    const double levels = static_cast<double>(spec.max_code());
    if (spec.scaling == Scaling::FixedRange)
        return spec.range_bound / levels;
    const double peak = x.size() ? x.cwiseAbs().maxCoeff() : 0.0;
    return peak > 0.0 ? peak / levels : 1.0;
}

std::int64_t encode_fixed(double x, double scale, int bits) noexcept
{
    const double hi = std::ldexp(1.0, bits - 1) - 1.0;
    const double lo = -std::ldexp(1.0, bits - 1);
    const double q = std::nearbyint(x / scale);
    return static_cast<std::int64_t>(std::clamp(q, lo, hi));
}

std::uint64_t encode_minifloat(double x, const MiniFloatLayout &layout) noexcept
{
    if (x == 0.0 || std::isnan(x))
        return 0;
    const int m = layout.mant_bits;
    const int emin = layout.min_normal_exponent();
    const double a = std::fabs(x);
    const double top = layout.max_finite();

    double r = top;
    if (a < top) {
        // quantum of the binade containing a (subnormal binade below emin)
        const int exponent = std::ilogb(a);
        const int quantum_exp = std::max(exponent, emin) - m;
        r = std::ldexp(std::nearbyint(std::ldexp(a, -quantum_exp)), quantum_exp);
        r = std::min(r, top);
    }
    if (r == 0.0)
        return 0;

    std::uint64_t exp_field = 0;
    std::uint64_t mant_field = 0;
    const int exponent = std::ilogb(r);
    if (exponent < emin) {
        mant_field = static_cast<std::uint64_t>(std::ldexp(r, m - emin));
    } else {
        exp_field = static_cast<std::uint64_t>(exponent + layout.bias());
        mant_field = static_cast<std::uint64_t>(std::ldexp(r, m - exponent)) - (std::uint64_t{1} << m);
    }
    const std::uint64_t sign = std::signbit(x) ? std::uint64_t{1} << (layout.bits() - 1) : 0;
    return sign | (exp_field << m) | mant_field;
}

double decode_minifloat(std::uint64_t code, const MiniFloatLayout &layout) noexcept
{
    const int m = layout.mant_bits;
    const std::uint64_t mant = code & ((std::uint64_t{1} << m) - 1);
    const std::uint64_t exp_field = (code >> m) & ((std::uint64_t{1} << layout.exp_bits) - 1);
    const bool negative = (code >> (layout.bits() - 1)) & 1;
    double v;
    if (exp_field == 0)
        v = std::ldexp(static_cast<double>(mant), layout.min_normal_exponent() - m);
    else
        v = std::ldexp(static_cast<double>((std::uint64_t{1} << m) | mant),
                       static_cast<int>(exp_field) - layout.bias() - m);
    return negative ? -v : v;
}

QuantizedTensor quantize_with_scale(const Eigen::Ref<const Eigen::VectorXd> &x, const QuantSpec &spec,
                                    double scale, std::vector<std::size_t> shape)
{
    validate(spec);
    require_finite(x);
    QuantizedTensor t;
    t.spec = spec;
    t.shape = resolve_shape(std::move(shape), x.size());
    t.codes.resize(x.size());
    if (spec.format == Format::MiniFloat) {
        t.scale = 1.0;
        const auto layout = spec.layout();
        for (Eigen::Index i = 0; i < x.size(); ++i)
            t.codes[i] = static_cast<std::int64_t>(encode_minifloat(x[i], layout));
        return t;
    }
    if (!(scale > 0.0) || !std::isfinite(scale))
        throw NumericInputError("quantize: scale must be positive and finite");
    t.scale = scale;
    for (Eigen::Index i = 0; i < x.size(); ++i)
        t.codes[i] = encode_fixed(x[i], scale, spec.bits);
    return t;
}

QuantizedTensor quantize_tensor(const Eigen::Ref<const Eigen::VectorXd> &x, const QuantSpec &spec,
                                std::vector<std::size_t> shape)
{
    validate(spec);
    require_finite(x);
    return quantize_with_scale(x, spec, choose_scale(x, spec), std::move(shape));
}

Eigen::VectorXd dequantize(const QuantizedTensor &t)
{
    if (t.spec.format == Format::FixedPoint)
        return t.codes.cast<double>() * t.scale;
    Eigen::VectorXd out(t.codes.size());
    const auto layout = t.spec.layout();
    for (Eigen::Index i = 0; i < t.codes.size(); ++i)
        out[i] = decode_minifloat(static_cast<std::uint64_t>(t.codes[i]), layout);
    return out;
}

QuantizedTensor requantize(const QuantizedTensor &t, const QuantSpec &target)
{
    return quantize_tensor(dequantize(t), target, t.shape);
}

} // namespace otafl::axnum
