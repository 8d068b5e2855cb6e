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

#ifndef OTAFL_MODEL_HPP
#define OTAFL_MODEL_HPP

#include "otafl/axnum.hpp"
#include "otafl/errors.hpp"
#include "otafl/random.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace otafl::data
{
struct Dataset;
}

/// Small ReLU feed-forward classifier with softmax cross-entropy, trained with
/// full-precision gradients and weights re-quantized after every step.
namespace otafl::model
{

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Layer widths from input to classes. Parameters are stored layer by layer:
/// the fan_out x fan_in weight matrix in column-major order, then the bias.
struct Architecture
{
    std::vector<int> layer_dims;

    void validate() const;
    int layers() const noexcept { return static_cast<int>(layer_dims.size()) - 1; }
    int fan_in(int layer) const { return layer_dims[layer]; }
    int fan_out(int layer) const { return layer_dims[layer + 1]; }
    int input_dim() const { return layer_dims.front(); }
    int classes() const { return layer_dims.back(); }
    Eigen::Index parameter_count() const;
    /// Offset of layer `layer`'s weight block within the flat vector.
    Eigen::Index weight_offset(int layer) const;
    Eigen::Index bias_offset(int layer) const { return weight_offset(layer) + Eigen::Index{fan_in(layer)} * fan_out(layer); }

    friend bool operator==(const Architecture &, const Architecture &) = default;
};

struct ModelParams
{
    Eigen::VectorXd flat;
    Architecture arch;
};

using GradientVec = Eigen::VectorXd;

// --- templated forward / backward -----------------------------------------

template <typename Scalar>
void softmax_rows(MatrixX<Scalar> &logits)
{
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
    }
}

/// Class probabilities, one row per sample.
template <typename Scalar>
MatrixX<Scalar> forward(const Architecture &arch, const VectorX<Scalar> &flat, const MatrixX<Scalar> &batch)
{
    if (batch.cols() != arch.input_dim())
        throw ValidationError("forward: batch has " + std::to_string(batch.cols()) + " features, model expects " +
                              std::to_string(arch.input_dim()));
    if (flat.size() != arch.parameter_count())
        throw ValidationError("forward: parameter vector length does not match architecture");
    MatrixX<Scalar> act = batch;
    for (int l = 0; l < arch.layers(); ++l) {
        Eigen::Map<const MatrixX<Scalar>> w(flat.data() + arch.weight_offset(l), arch.fan_out(l), arch.fan_in(l));
        Eigen::Map<const VectorX<Scalar>> b(flat.data() + arch.bias_offset(l), arch.fan_out(l));
        MatrixX<Scalar> z = act * w.transpose();
        z.rowwise() += b.transpose();
        if (l + 1 < arch.layers())
            z = z.cwiseMax(Scalar(0));
        act = std::move(z);
    }
    softmax_rows(act);
    return act;
}

/// Mean cross-entropy of the batch.
template <typename Scalar>
Scalar cross_entropy(const Architecture &arch, const VectorX<Scalar> &flat, const MatrixX<Scalar> &batch,
                     const Eigen::VectorXi &labels)
{
    const MatrixX<Scalar> probs = forward(arch, flat, batch);
    Scalar loss(0);
    for (Eigen::Index r = 0; r < probs.rows(); ++r)
        loss -= std::log(std::max(probs(r, labels[r]), std::numeric_limits<Scalar>::min()));
    return loss / static_cast<Scalar>(probs.rows());
}

/// Mean cross-entropy and its gradient by backpropagation.
template <typename Scalar>
std::pair<Scalar, VectorX<Scalar>> loss_and_gradient(const Architecture &arch, const VectorX<Scalar> &flat,
                                                     const MatrixX<Scalar> &batch, const Eigen::VectorXi &labels)
{
    if (batch.cols() != arch.input_dim())
        throw ValidationError("loss_and_gradient: batch has " + std::to_string(batch.cols()) +
                              " features, model expects " + std::to_string(arch.input_dim()));
    if (labels.size() != batch.rows())
        throw ValidationError("loss_and_gradient: label count does not match batch rows");
    const int L = arch.layers();
    const auto rows = batch.rows();

    // activations[l] is the input of layer l
    std::vector<MatrixX<Scalar>> activations;
    activations.reserve(L + 1);
    activations.push_back(batch);
    for (int l = 0; l < L; ++l) {
        Eigen::Map<const MatrixX<Scalar>> w(flat.data() + arch.weight_offset(l), arch.fan_out(l), arch.fan_in(l));
        Eigen::Map<const VectorX<Scalar>> b(flat.data() + arch.bias_offset(l), arch.fan_out(l));
        MatrixX<Scalar> z = activations.back() * w.transpose();
        z.rowwise() += b.transpose();
        if (l + 1 < L)
            z = z.cwiseMax(Scalar(0));
        activations.push_back(std::move(z));
    }
    MatrixX<Scalar> delta = std::move(activations.back());
    activations.pop_back();
    softmax_rows(delta);

    Scalar loss(0);
    for (Eigen::Index r = 0; r < rows; ++r) {
        loss -= std::log(std::max(delta(r, labels[r]), std::numeric_limits<Scalar>::min()));
        delta(r, labels[r]) -= Scalar(1);
    }
    delta /= static_cast<Scalar>(rows);

    VectorX<Scalar> grad(flat.size());
    for (int l = L - 1; l >= 0; --l) {
        const MatrixX<Scalar> &input = activations[l];
        Eigen::Map<MatrixX<Scalar>> gw(grad.data() + arch.weight_offset(l), arch.fan_out(l), arch.fan_in(l));
        Eigen::Map<VectorX<Scalar>> gb(grad.data() + arch.bias_offset(l), arch.fan_out(l));
        gw.noalias() = delta.transpose() * input;
        gb = delta.colwise().sum().transpose();
        if (l > 0) {
            Eigen::Map<const MatrixX<Scalar>> w(flat.data() + arch.weight_offset(l), arch.fan_out(l),
                                                arch.fan_in(l));
            MatrixX<Scalar> upstream = delta * w;
            // ReLU mask: the stored activation is positive exactly where z was
            delta = upstream.cwiseProduct((input.array() > Scalar(0)).template cast<Scalar>().matrix());
        }
    }
    return {loss / static_cast<Scalar>(rows), std::move(grad)};
}

// --- operations -------------------------------------------------------------

/// Glorot-uniform weights, zero biases.
ModelParams init_params(const Architecture &arch, Rng &rng);

/// Cross-entropy gradient at p; throws TrainingDivergence if the loss or any
/// component is not finite.
GradientVec gradient(const ModelParams &p, const Eigen::MatrixXd &batch, const Eigen::VectorXi &labels);

/// p - lr * gradient(p), checked for divergence.
Eigen::VectorXd sgd_step(const ModelParams &p, const Eigen::MatrixXd &batch, const Eigen::VectorXi &labels, double lr);

/// Gradient at p, one SGD step at full precision, then RTN to `spec`.
axnum::QuantizedTensor train_step(const ModelParams &p, const Eigen::MatrixXd &batch, const Eigen::VectorXi &labels,
                                  double lr, const axnum::QuantSpec &spec);

/// Index of the largest probability per row; ties go to the lowest class.
Eigen::VectorXi predict(const ModelParams &p, const Eigen::MatrixXd &features);

double evaluate(const ModelParams &p, const Eigen::MatrixXd &features, const Eigen::VectorXi &labels);
double evaluate(const ModelParams &p, const data::Dataset &dataset);

// --- checkpoints -------------------------------------------------------------
//
// Little-endian layout:
//   char[8]  magic "OTAFLCK1"
//   u32      number of layer dims, then u32 per dim
//   u32      spec string length, then the spec string bytes (axnum::to_string)
//   f64      scale
//   u64      code count, then i64 per code

struct Checkpoint
{
    Architecture arch;
    axnum::QuantizedTensor params;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint &ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t> &bytes);
void save_checkpoint(const Checkpoint &ckpt, const std::filesystem::path &path);
Checkpoint load_checkpoint(const std::filesystem::path &path);

} // namespace otafl::model

#endif
