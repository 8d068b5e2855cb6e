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

#include "otafl/data.hpp"
#include "otafl/errors.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>
#include <string>

namespace otafl::data
{

namespace
{

std::vector<std::uint8_t> read_bytes(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t> &bytes, std::size_t offset, const std::string &what)
{
    if (offset + 4 > bytes.size())
        throw ParseError(what + ": truncated header at byte offset " + std::to_string(offset));
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

int resolve_classes(const Eigen::VectorXi &labels, int classes, const std::string &what)
{
    if (labels.size() == 0)
        throw ParseError(what + ": no samples");
    if (labels.minCoeff() < 0)
        throw ValidationError(what + ": negative label");
    const int inferred = labels.maxCoeff() + 1;
    if (classes == 0)
        return inferred;
    if (inferred > classes)
        throw ValidationError(what + ": label " + std::to_string(inferred - 1) + " out of range for " +
                              std::to_string(classes) + " classes");
    return classes;
}

Dataset make_blobs(Rng &rng, const Eigen::MatrixXd &prototypes, int count, double spread, Split split)
{
    const auto classes = static_cast<int>(prototypes.rows());
    Dataset d;
    d.classes = classes;
    d.split = split;
    d.features.resize(count, prototypes.cols());
    d.labels.resize(count);
    for (int i = 0; i < count; ++i) {
        const int c = i % classes;
        d.labels[i] = c;
        for (Eigen::Index j = 0; j < prototypes.cols(); ++j)
            d.features(i, j) = std::clamp(prototypes(c, j) + spread * rng.normal(), 0.0, 1.0);
    }
    return d;
}

} // namespace

void validate(const Dataset &d)
{
    if (d.features.rows() != d.labels.size())
        throw ValidationError("dataset: " + std::to_string(d.features.rows()) + " feature rows but " +
                              std::to_string(d.labels.size()) + " labels");
    if (d.size() == 0)
        throw ValidationError("dataset: empty");
    if (d.labels.minCoeff() < 0 || d.labels.maxCoeff() >= d.classes)
        throw ValidationError("dataset: label outside [0, " + std::to_string(d.classes) + ")");
    if (d.features.size() && (d.features.minCoeff() < 0.0 || d.features.maxCoeff() > 1.0))
        throw ValidationError("dataset: feature outside [0, 1]");
    if (d.split == Split::Train) {
        std::vector<bool> seen(d.classes, false);
        for (Eigen::Index i = 0; i < d.labels.size(); ++i)
            seen[d.labels[i]] = true;
        if (std::find(seen.begin(), seen.end(), false) != seen.end())
            throw ValidationError("dataset: training split is missing a class");
    }
}

Dataset subset(const Dataset &d, const std::vector<std::size_t> &indices)
{
    Dataset out;
    out.classes = d.classes;
    out.split = d.split;
    out.features.resize(static_cast<Eigen::Index>(indices.size()), d.dim());
    out.labels.resize(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const auto src = static_cast<Eigen::Index>(indices[r]);
        out.features.row(static_cast<Eigen::Index>(r)) = d.features.row(src);
        out.labels[static_cast<Eigen::Index>(r)] = d.labels[src];
    }
    return out;
}

std::pair<Dataset, Dataset> generate_synthetic(std::uint64_t seed, const SyntheticParams &params)
{
    if (params.classes < 2)
        throw ConfigError("synthetic data: need at least 2 classes");
    if (params.dim < params.classes)
        throw ConfigError("synthetic data: dim must be at least the class count");
    if (params.n_train < params.classes || params.n_test < 1)
        throw ConfigError("synthetic data: too few samples");

    Rng proto_rng(derive_seed({seed, 1}));
    Eigen::MatrixXd prototypes(params.classes, params.dim);
    for (Eigen::Index c = 0; c < prototypes.rows(); ++c)
        for (Eigen::Index j = 0; j < prototypes.cols(); ++j)
            prototypes(c, j) = proto_rng.uniform(0.2, 0.8);

    Rng train_rng(derive_seed({seed, 2}));
    Rng test_rng(derive_seed({seed, 3}));
    return {make_blobs(train_rng, prototypes, params.n_train, params.spread, Split::Train),
            make_blobs(test_rng, prototypes, params.n_test, params.spread, Split::Test)};
}

Dataset load_external(const std::filesystem::path &path, FileFormat format, const std::filesystem::path &labels_path,
                      int classes, Split split)
{
    Dataset d;
    d.split = split;
    if (format == FileFormat::CSV) {
        std::ifstream in(path);
        if (!in)
            throw IoError("cannot open " + path.string());
        std::vector<std::vector<double>> rows;
        std::vector<int> labels;
        std::string line;
        std::size_t line_no = 0;
        std::size_t width = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            if (line.empty())
                continue;
            std::vector<std::string_view> fields;
            std::string_view rest(line);
            while (true) {
                const auto comma = rest.find(',');
                fields.push_back(rest.substr(0, comma));
                if (comma == std::string_view::npos)
                    break;
                rest.remove_prefix(comma + 1);
            }
            if (fields.size() < 2)
                throw ParseError(path.string() + ": line " + std::to_string(line_no) +
                                 ": need at least one feature and a label");
            if (width == 0)
                width = fields.size();
            else if (fields.size() != width)
                throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": expected " +
                                 std::to_string(width) + " columns, found " + std::to_string(fields.size()));
            std::vector<double> row(width - 1);
            for (std::size_t k = 0; k + 1 < width; ++k) {
                const auto f = fields[k];
                auto [end, ec] = std::from_chars(f.data(), f.data() + f.size(), row[k]);
                if (ec != std::errc() || end != f.data() + f.size() || !std::isfinite(row[k]))
                    throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": bad number in column " +
                                     std::to_string(k + 1));
            }
            int label = 0;
            const auto f = fields.back();
            auto [end, ec] = std::from_chars(f.data(), f.data() + f.size(), label);
            if (ec != std::errc() || end != f.data() + f.size())
                throw ParseError(path.string() + ": line " + std::to_string(line_no) + ": bad label");
            rows.push_back(std::move(row));
            labels.push_back(label);
        }
        if (rows.empty())
            throw ParseError(path.string() + ": no samples");
        d.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
        d.labels.resize(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            d.features.row(static_cast<Eigen::Index>(r)) =
                Eigen::Map<const Eigen::RowVectorXd>(rows[r].data(), static_cast<Eigen::Index>(rows[r].size()));
            d.labels[static_cast<Eigen::Index>(r)] = labels[r];
        }
        const double lo = d.features.minCoeff(), hi = d.features.maxCoeff();
        if (lo < 0.0 || hi > 1.0) {
            const bool bytes = lo >= 0.0 && hi <= 255.0 &&
                               (d.features.array() == d.features.array().round()).all();
            if (!bytes)
                throw ValidationError(path.string() + ": features are neither in [0, 1] nor byte values");
            d.features /= 255.0;
        }
        d.classes = resolve_classes(d.labels, classes, path.string());
        validate(d);
        return d;
    }

    const auto images = read_bytes(path);
    if (read_be32(images, 0, path.string()) != 0x00000803)
        throw ParseError(path.string() + ": bad idx3 magic at byte offset 0");
    const std::uint64_t n = read_be32(images, 4, path.string());
    const std::uint64_t h = read_be32(images, 8, path.string());
    const std::uint64_t w = read_be32(images, 12, path.string());
    if (images.size() != 16 + n * h * w)
        throw ParseError(path.string() + ": expected " + std::to_string(16 + n * h * w) + " bytes, found " +
                         std::to_string(images.size()) + " (truncated at byte offset " +
                         std::to_string(images.size()) + ")");
    const auto label_bytes = read_bytes(labels_path);
    if (read_be32(label_bytes, 0, labels_path.string()) != 0x00000801)
        throw ParseError(labels_path.string() + ": bad idx1 magic at byte offset 0");
    const std::uint64_t m = read_be32(label_bytes, 4, labels_path.string());
    if (label_bytes.size() != 8 + m)
        throw ParseError(labels_path.string() + ": expected " + std::to_string(8 + m) + " bytes, found " +
                         std::to_string(label_bytes.size()));
    if (m != n)
        throw ValidationError("idx: " + std::to_string(n) + " images but " + std::to_string(m) + " labels");

    d.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(h * w));
    d.labels.resize(static_cast<Eigen::Index>(n));
    for (std::uint64_t i = 0; i < n; ++i) {
        for (std::uint64_t k = 0; k < h * w; ++k)
            d.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = images[16 + i * h * w + k] / 255.0;
        d.labels[static_cast<Eigen::Index>(i)] = label_bytes[8 + i];
    }
    d.classes = resolve_classes(d.labels, classes, labels_path.string());
    validate(d);
    return d;
}

void write_csv(const Dataset &d, const std::filesystem::path &path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot write " + path.string());
    std::array<char, 32> buf{};
    for (Eigen::Index r = 0; r < d.size(); ++r) {
        for (Eigen::Index c = 0; c < d.dim(); ++c) {
            auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), d.features(r, c));
            out.write(buf.data(), end - buf.data());
            out.put(',');
        }
        out << d.labels[r] << '\n';
    }
    if (!out)
        throw IoError("write failed: " + path.string());
}

ShardPlan shard_uniform(const Dataset &d, int n_clients, Rng &rng)
{
    if (n_clients < 1)
        throw ConfigError("sharding: need at least one client");
    const auto n = static_cast<std::size_t>(d.size());
    if (n < static_cast<std::size_t>(n_clients))
        throw ConfigError("sharding: " + std::to_string(n) + " samples cannot cover " + std::to_string(n_clients) +
                          " clients");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i)
        std::swap(perm[i - 1], perm[rng.below(i)]);

    ShardPlan plan;
    const std::size_t base = n / n_clients, extra = n % n_clients;
    std::size_t pos = 0;
    for (std::size_t c = 0; c < static_cast<std::size_t>(n_clients); ++c) {
        const std::size_t len = base + (c < extra ? 1 : 0);
        plan.shards.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                                 perm.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }
    return plan;
}

} // namespace otafl::data
