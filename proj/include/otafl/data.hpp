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

#ifndef OTAFL_DATA_HPP
#define OTAFL_DATA_HPP

#include "otafl/random.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace otafl::data
{

enum class Split
{
    Train,
    Test
};

struct Dataset
{
    Eigen::MatrixXd features; ///< one sample per row, values in [0, 1]
    Eigen::VectorXi labels;   ///< in [0, classes)
    int classes = 0;
    Split split = Split::Train;

    Eigen::Index size() const noexcept { return labels.size(); }
    Eigen::Index dim() const noexcept { return features.cols(); }
};

/// Throws ValidationError on row/label mismatch, out-of-range labels or
/// features, or a training split missing a class.
void validate(const Dataset &d);

/// Rows of `d` at `indices`, in that order.
Dataset subset(const Dataset &d, const std::vector<std::size_t> &indices);

struct SyntheticParams
{
    int n_train = 3000;
    int n_test = 1000;
    int classes = 10;
    int dim = 48;
    double spread = 0.15; ///< per-coordinate standard deviation around the prototype
};

/// Gaussian blobs around seed-derived prototypes in [0.2, 0.8]^dim, clipped to
/// [0, 1]. Labels cycle through the classes so counts differ by at most one.
std::pair<Dataset, Dataset> generate_synthetic(std::uint64_t seed, const SyntheticParams &params);

enum class FileFormat
{
    CSV, ///< one sample per line, label in the last column
    IDX  ///< big-endian idx3 images (0x00000803) + idx1 labels (0x00000801)
};

/// For IDX, `path` is the image file and `labels_path` the label file.
/// `classes` = 0 infers max(label) + 1; otherwise labels must lie below it.
/// CSV features already in [0, 1] are kept; integer features in [0, 255] are
/// divided by 255. IDX bytes are always divided by 255.
Dataset load_external(const std::filesystem::path &path, FileFormat format,
                      const std::filesystem::path &labels_path = {}, int classes = 0, Split split = Split::Train);

/// Shortest round-trip decimal form, one sample per line, label last.
void write_csv(const Dataset &d, const std::filesystem::path &path);

/// client id -> sample indices
struct ShardPlan
{
    std::vector<std::vector<std::size_t>> shards;
};

/// Seeded permutation of the sample indices cut into n_clients contiguous
/// blocks; the first size % n_clients blocks hold one extra sample.
ShardPlan shard_uniform(const Dataset &d, int n_clients, Rng &rng);

} // namespace otafl::data

#endif
