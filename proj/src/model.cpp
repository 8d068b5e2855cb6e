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

#include "otafl/model.hpp"
#include "otafl/data.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace otafl::model
{

void Architecture::validate() const
{
    if (layer_dims.size() < 2)
        throw ConfigError("architecture needs at least an input and an output layer");
    for (int d : layer_dims)
        if (d < 1)
            throw ConfigError("architecture layer widths must be positive");
}

Eigen::Index Architecture::parameter_count() const
{
    Eigen::Index n = 0;
    for (int l = 0; l < layers(); ++l)
        n += Eigen::Index{fan_in(l) + 1} * fan_out(l);
    return n;
}

Eigen::Index Architecture::weight_offset(int layer) const
{
    Eigen::Index n = 0;
    for (int l = 0; l < layer; ++l)
        n += Eigen::Index{fan_in(l) + 1} * fan_out(l);
    return n;
}

ModelParams init_params(const Architecture &arch, Rng &rng)
{
    arch.validate();
    ModelParams p{Eigen::VectorXd::Zero(arch.parameter_count()), arch};
    for (int l = 0; l < arch.layers(); ++l) {
        const double limit = std::sqrt(6.0 / (arch.fan_in(l) + arch.fan_out(l)));
        const Eigen::Index count = Eigen::Index{arch.fan_in(l)} * arch.fan_out(l);
        for (Eigen::Index k = 0; k < count; ++k)
            p.flat[arch.weight_offset(l) + k] = rng.uniform(-limit, limit);
    }
    return p;
}

GradientVec gradient(const ModelParams &p, const Eigen::MatrixXd &batch, const Eigen::VectorXi &labels)
{
    auto [loss, grad] = loss_and_gradient<double>(p.arch, p.flat, batch, labels);
    if (!std::isfinite(loss) || !grad.allFinite())
        throw TrainingDivergence("train_step: non-finite loss or gradient");
    return std::move(grad);
}

Eigen::VectorXd sgd_step(const ModelParams &p, const Eigen::MatrixXd &batch, const Eigen::VectorXi &labels, double lr)
{
    if (!(lr >= 0.0) || !std::isfinite(lr))
        throw ConfigError("train_step: learning rate must be non-negative and finite");
    const Eigen::VectorXd updated = p.flat - lr * gradient(p, batch, labels);
    if (!updated.allFinite())
        throw TrainingDivergence("train_step: parameters diverged");
    return updated;
}

axnum::QuantizedTensor train_step(const ModelParams &p, const Eigen::MatrixXd &batch, const Eigen::VectorXi &labels,
                                  double lr, const axnum::QuantSpec &spec)
{
    return axnum::quantize_tensor(sgd_step(p, batch, labels, lr), spec);
}

Eigen::VectorXi predict(const ModelParams &p, const Eigen::MatrixXd &features)
{
    const Eigen::MatrixXd probs = forward<double>(p.arch, p.flat, features);
    Eigen::VectorXi out(probs.rows());
    for (Eigen::Index r = 0; r < probs.rows(); ++r)
        probs.row(r).maxCoeff(&out[r]);
    return out;
}

double evaluate(const ModelParams &p, const Eigen::MatrixXd &features, const Eigen::VectorXi &labels)
{
    if (labels.size() == 0)
        throw ValidationError("evaluate: empty dataset");
    if (labels.size() != features.rows())
        throw ValidationError("evaluate: label count does not match feature rows");
    const Eigen::VectorXi pred = predict(p, features);
    return static_cast<double>((pred.array() == labels.array()).count()) / static_cast<double>(labels.size());
}

double evaluate(const ModelParams &p, const data::Dataset &dataset)
{
    return evaluate(p, dataset.features, dataset.labels);
}

namespace
{

constexpr char kMagic[8] = {'O', 'T', 'A', 'F', 'L', 'C', 'K', '1'};

template <typename T>
void put_le(std::vector<std::uint8_t> &out, T value)
{
    std::uint64_t bits = 0;
    std::memcpy(&bits, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

struct Reader
{
    const std::vector<std::uint8_t> &bytes;
    std::size_t pos = 0;

    template <typename T>
    T get()
    {
        if (pos + sizeof(T) > bytes.size())
            throw ParseError("checkpoint: truncated at byte offset " + std::to_string(pos));
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i)
            bits |= std::uint64_t{bytes[pos + i]} << (8 * i);
        pos += sizeof(T);
        T value;
        std::memcpy(&value, &bits, sizeof(T));
        return value;
    }
};

} // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint &ckpt)
{
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arch.layer_dims.size()));
    for (int d : ckpt.arch.layer_dims)
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    const std::string spec = axnum::to_string(ckpt.params.spec);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(spec.size()));
    out.insert(out.end(), spec.begin(), spec.end());
    put_le<double>(out, ckpt.params.scale);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(ckpt.params.codes.size()));
    for (Eigen::Index i = 0; i < ckpt.params.codes.size(); ++i)
        put_le<std::int64_t>(out, ckpt.params.codes[i]);
    return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t> &bytes)
{
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
        throw ParseError("checkpoint: bad magic at byte offset 0");
    Reader r{bytes, sizeof(kMagic)};
    Checkpoint ckpt;
    const auto n_dims = r.get<std::uint32_t>();
    if (n_dims > bytes.size())
        throw ParseError("checkpoint: implausible layer count");
    for (std::uint32_t i = 0; i < n_dims; ++i)
        ckpt.arch.layer_dims.push_back(static_cast<int>(r.get<std::uint32_t>()));
    ckpt.arch.validate();
    const auto spec_len = r.get<std::uint32_t>();
    if (r.pos + spec_len > bytes.size())
        throw ParseError("checkpoint: truncated spec string at byte offset " + std::to_string(r.pos));
    const std::string spec(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos),
                           bytes.begin() + static_cast<std::ptrdiff_t>(r.pos + spec_len));
    r.pos += spec_len;
    ckpt.params.spec = axnum::parse_spec(spec);
    ckpt.params.scale = r.get<double>();
    const auto count = r.get<std::uint64_t>();
    if (count != static_cast<std::uint64_t>(ckpt.arch.parameter_count()))
        throw ParseError("checkpoint: code count does not match architecture");
    ckpt.params.codes.resize(static_cast<Eigen::Index>(count));
    for (std::uint64_t i = 0; i < count; ++i)
        ckpt.params.codes[static_cast<Eigen::Index>(i)] = r.get<std::int64_t>();
    if (r.pos != bytes.size())
        throw ParseError("checkpoint: trailing bytes at offset " + std::to_string(r.pos));
    ckpt.params.shape = {static_cast<std::size_t>(count)};
    if (!axnum::is_valid(ckpt.params))
        throw ValidationError("checkpoint: codes not representable under " + spec);
    return ckpt;
}

void save_checkpoint(const Checkpoint &ckpt, const std::filesystem::path &path)
{
    const auto bytes = encode_checkpoint(ckpt);
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("cannot write checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open checkpoint " + path.string());
    const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_checkpoint(bytes);
}

} // namespace otafl::model
