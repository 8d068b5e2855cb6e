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

// Independent reference implementations used only by the test suites. They
// enumerate codewords instead of computing them, so they share no arithmetic
// path with the library code they check.

#ifndef OTAFL_TESTS_ORACLES_HPP
#define OTAFL_TESTS_ORACLES_HPP

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace oracle
{

// Nearest of all 2^bits codewords c * scale, ties to the even code.
inline std::int64_t nearest_fixed_code(double x, double scale, int bits)
{
    const std::int64_t lo = -(std::int64_t{1} << (bits - 1));
    const std::int64_t hi = (std::int64_t{1} << (bits - 1)) - 1;
    std::int64_t best = lo;
    long double best_d = std::numeric_limits<long double>::infinity();
    for (std::int64_t c = lo; c <= hi; ++c) {
        const long double d = std::fabs(static_cast<long double>(x) - static_cast<long double>(c) * scale);
        if (d < best_d || (d == best_d && (c % 2 == 0))) {
            best = c;
            best_d = d;
        }
    }
    return best;
}

// Value of a sign/exponent/mantissa pattern, written out from the field
// definitions with pow() rather than ldexp.
inline double minifloat_value(std::uint64_t code, int exp_bits, int mant_bits)
{
    const int bias = (1 << (exp_bits - 1)) - 1;
    const std::uint64_t m = code % (std::uint64_t{1} << mant_bits);
    const std::uint64_t e = (code >> mant_bits) % (std::uint64_t{1} << exp_bits);
    const bool neg = (code >> (mant_bits + exp_bits)) & 1;
    const double frac = static_cast<double>(m) / std::pow(2.0, mant_bits);
    const double mag = e == 0 ? frac * std::pow(2.0, 1 - bias) : (1.0 + frac) * std::pow(2.0, static_cast<double>(e) - bias);
    return neg ? -mag : mag;
}

// Nearest minifloat by scanning every non-negative pattern; ties to the even
// pattern. Zero maps to pattern 0; magnitudes beyond the table saturate.
inline std::uint64_t nearest_minifloat(double x, int exp_bits, int mant_bits)
{
    const std::uint64_t half = std::uint64_t{1} << (exp_bits + mant_bits);
    const double a = std::fabs(x);
    std::uint64_t best = 0;
    long double best_d = std::numeric_limits<long double>::infinity();
    for (std::uint64_t c = 0; c < half; ++c) {
        const long double d = std::fabs(static_cast<long double>(a) - minifloat_value(c, exp_bits, mant_bits));
        if (d < best_d || (d == best_d && c % 2 == 0)) {
            best = c;
            best_d = d;
        }
    }
    if (best == 0)
        return 0;
    return x < 0 ? best | half : best;
}

// Reflected binary Gray labels by explicit construction: the list for k+1 bits
// is the k-bit list followed by its mirror image with the top bit set.
inline std::vector<std::uint64_t> gray_table(int bits)
{
    std::vector<std::uint64_t> g{0};
    for (int k = 0; k < bits; ++k)
        for (std::size_t i = g.size(); i-- > 0;)
            g.push_back(g[i] | (std::uint64_t{1} << k));
    return g;
}

struct QamPoint
{
    long long i, q; // odd integer levels
};

// Level of the Gray label at each axis, looked up by position in the table.
inline QamPoint qam_point(std::int64_t code, int bits)
{
    const int half = bits / 2;
    const auto table = gray_table(half);
    const auto pattern = static_cast<std::uint64_t>(code) & ((std::uint64_t{1} << bits) - 1);
    const auto level = [&](std::uint64_t label) {
        for (std::size_t m = 0; m < table.size(); ++m)
            if (table[m] == label)
                return 2 * static_cast<long long>(m) - static_cast<long long>(table.size() - 1);
        return 0LL;
    };
    return {level(pattern >> half), level(pattern % (std::uint64_t{1} << half))};
}

// Slices (i, q) against every level of a `bits`-wide square QAM per axis.
// Midpoints go to the even (or, with odd_ties, the odd) level index.
inline std::int64_t qam_slice(long long i, long long q, int bits, bool odd_ties = false)
{
    const int half = bits / 2;
    const auto table = gray_table(half);
    const long long top = static_cast<long long>(table.size()) - 1;
    const auto pick = [&](long long x) {
        long long best = 0, best_d = -1;
        for (long long m = 0; m <= top; ++m) {
            const long long d = x > 2 * m - top ? x - (2 * m - top) : (2 * m - top) - x;
            const bool preferred = (m % 2 == 1) == odd_ties;
            if (best_d < 0 || d < best_d || (d == best_d && preferred)) {
                best = m;
                best_d = d;
            }
        }
        return table[static_cast<std::size_t>(best)];
    };
    const std::uint64_t pattern = (pick(i) << half) | pick(q);
    const std::int64_t modulus = std::int64_t{1} << bits;
    const auto v = static_cast<std::int64_t>(pattern);
    return v >= modulus / 2 ? v - modulus : v;
}

} // namespace oracle

#endif
