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

#include "otafl/harness.hpp"
#include "otafl/errors.hpp"
#include "otafl/model.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <memory>
#include <sstream>

namespace otafl::harness
{

namespace
{

std::string_view trim(std::string_view s)
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}

std::string lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::vector<std::string_view> split(std::string_view s, char sep)
{
    std::vector<std::string_view> out;
    while (true) {
        const auto pos = s.find(sep);
        out.push_back(trim(s.substr(0, pos)));
        if (pos == std::string_view::npos)
            return out;
        s.remove_prefix(pos + 1);
    }
}

template <typename T>
T parse_number(std::string_view key, std::string_view value)
{
    T out{};
    const auto v = trim(value);
    auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size() || v.empty())
        throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(value) + "'");
    return out;
}

bool parse_bool(std::string_view key, std::string_view value)
{
    const auto v = lower(trim(value));
    if (v == "true" || v == "1" || v == "yes" || v == "on")
        return true;
    if (v == "false" || v == "0" || v == "no" || v == "off")
        return false;
    throw ConfigError("config key '" + std::string(key) + "': expected a boolean, got '" + std::string(value) + "'");
}

std::string format_double(double v)
{
    std::array<char, 32> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return {buf.data(), end};
}

std::string format_fixed6(double v)
{
    std::array<char, 48> buf{};
    std::snprintf(buf.data(), buf.size(), "%.6f", v);
    return buf.data();
}

std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no)
{
    std::vector<std::string> fields(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    fields.back() += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                fields.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.emplace_back();
        } else {
            fields.back() += c;
        }
    }
    if (quoted)
        throw ParseError("metrics: unterminated quote on line " + std::to_string(line_no));
    return fields;
}

template <typename T>
std::optional<T> optional_field(const std::string &field, std::size_t line_no, const char *name)
{
    if (field.empty())
        return std::nullopt;
    T v{};
    auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || end != field.data() + field.size())
        throw ParseError("metrics: bad " + std::string(name) + " on line " + std::to_string(line_no));
    return v;
}

template <typename T>
T required_field(const std::string &field, std::size_t line_no, const char *name)
{
    auto v = optional_field<T>(field, line_no, name);
    if (!v)
        throw ParseError("metrics: missing " + std::string(name) + " on line " + std::to_string(line_no));
    return *v;
}

fedcore::FederationInputs build_inputs(const ExperimentConfig &cfg, int replicate, int n_clients)
{
    std::shared_ptr<data::Dataset> train, test;
    if (cfg.data.train_path.empty()) {
        auto [tr, te] = data::generate_synthetic(replicate_seed(cfg.master_seed, replicate, Purpose::Data),
                                                 cfg.data.synthetic);
        train = std::make_shared<data::Dataset>(std::move(tr));
        test = std::make_shared<data::Dataset>(std::move(te));
    } else {
        train = std::make_shared<data::Dataset>(data::load_external(cfg.data.train_path, cfg.data.format,
                                                                    cfg.data.train_labels_path, 0, data::Split::Train));
        test = std::make_shared<data::Dataset>(data::load_external(
            cfg.data.test_path, cfg.data.format, cfg.data.test_labels_path, train->classes, data::Split::Test));
        if (test->dim() != train->dim())
            throw ValidationError("test data has " + std::to_string(test->dim()) + " features, training data " +
                                  std::to_string(train->dim()));
    }

    fedcore::FederationInputs in;
    in.arch.layer_dims.push_back(static_cast<int>(train->dim()));
    in.arch.layer_dims.insert(in.arch.layer_dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    in.arch.layer_dims.push_back(train->classes);
    Rng shard_rng(replicate_seed(cfg.master_seed, replicate, Purpose::Shard));
    in.shards = data::shard_uniform(*train, n_clients, shard_rng);
    Rng init_rng(replicate_seed(cfg.master_seed, replicate, Purpose::Init));
    in.initial = model::init_params(in.arch, init_rng);
    in.train = std::move(train);
    in.test = std::move(test);
    return in;
}

} // namespace

std::vector<std::array<int, 3>> default_sweep()
{
    return {{32, 4, 4}, {24, 4, 4}, {16, 4, 4}, {12, 4, 4}, {16, 16, 16}, {8, 8, 8}, {4, 4, 4}};
}

void apply_setting(ExperimentConfig &cfg, std::string_view key_in, std::string_view value_in)
{
    const std::string key = lower(trim(key_in));
    const std::string_view value = trim(value_in);
    auto &syn = cfg.data.synthetic;
    if (key == "scheme" || key == "schemes") {
        cfg.schemes.clear();
        for (auto item : split(value, ';')) {
            if (item.empty())
                continue;
            cfg.schemes.push_back(fedcore::parse_scheme(item).levels);
        }
        if (cfg.schemes.empty())
            throw ConfigError("config key '" + key + "': no schemes given");
    } else if (key == "rounds") {
        cfg.rounds = parse_number<int>(key, value);
    } else if (key == "clients_per_level") {
        cfg.clients_per_level = parse_number<int>(key, value);
    } else if (key == "snr_db") {
        cfg.snr_db.clear();
        for (auto item : split(value, ','))
            cfg.snr_db.push_back(lower(item) == "inf" ? std::numeric_limits<double>::infinity()
                                                      : parse_number<double>(key, item));
    } else if (key == "noise_reference") {
        const auto v = lower(value);
        if (v == "unit")
            cfg.noise_reference = phy::NoiseReference::UnitSignal;
        else if (v == "measured")
            cfg.noise_reference = phy::NoiseReference::MeasuredSignal;
        else
            throw ConfigError("config key 'noise_reference': expected unit or measured");
    } else if (key == "csi") {
        const auto v = lower(value);
        if (v == "estimated")
            cfg.csi = fedcore::CsiMode::Estimated;
        else if (v == "perfect")
            cfg.csi = fedcore::CsiMode::Perfect;
        else
            throw ConfigError("config key 'csi': expected estimated or perfect");
    } else if (key == "gain_cap") {
        cfg.gain_cap = lower(value) == "inf" ? std::numeric_limits<double>::infinity()
                                             : parse_number<double>(key, value);
    } else if (key == "pilot_length") {
        cfg.pilot_length = parse_number<int>(key, value);
    } else if (key == "prefer_float") {
        cfg.prefer_float = parse_bool(key, value);
    } else if (key == "lr") {
        cfg.lr = parse_number<double>(key, value);
    } else if (key == "epochs") {
        cfg.epochs = parse_number<int>(key, value);
    } else if (key == "batch") {
        cfg.batch = parse_number<int>(key, value);
    } else if (key == "hidden") {
        cfg.hidden.clear();
        if (!value.empty())
            for (auto item : split(value, ','))
                cfg.hidden.push_back(parse_number<int>(key, item));
    } else if (key == "n_train") {
        syn.n_train = parse_number<int>(key, value);
    } else if (key == "n_test") {
        syn.n_test = parse_number<int>(key, value);
    } else if (key == "classes") {
        syn.classes = parse_number<int>(key, value);
    } else if (key == "dim") {
        syn.dim = parse_number<int>(key, value);
    } else if (key == "spread") {
        syn.spread = parse_number<double>(key, value);
    } else if (key == "train_path") {
        cfg.data.train_path = std::string(value);
    } else if (key == "train_labels_path") {
        cfg.data.train_labels_path = std::string(value);
    } else if (key == "test_path") {
        cfg.data.test_path = std::string(value);
    } else if (key == "test_labels_path") {
        cfg.data.test_labels_path = std::string(value);
    } else if (key == "data_format") {
        const auto v = lower(value);
        if (v == "csv")
            cfg.data.format = data::FileFormat::CSV;
        else if (v == "idx")
            cfg.data.format = data::FileFormat::IDX;
        else
            throw ConfigError("config key 'data_format': expected csv or idx");
    } else if (key == "master_seed") {
        cfg.master_seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "seeds") {
        cfg.seeds = parse_number<int>(key, value);
    } else if (key == "workers") {
        cfg.workers = parse_number<int>(key, value);
    } else if (key == "convergence_window") {
        cfg.convergence_window = parse_number<int>(key, value);
    } else if (key == "convergence_fraction") {
        cfg.convergence_fraction = parse_number<double>(key, value);
    } else if (key == "output_dir") {
        cfg.output_dir = std::string(value);
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

ExperimentConfig parse_config(std::string_view text) { return parse_config(text, ExperimentConfig{}); }

ExperimentConfig parse_config(std::string_view text, ExperimentConfig base)
{
    ExperimentConfig cfg = std::move(base);
    std::size_t line_no = 0;
    for (auto raw : split(text, '\n')) {
        ++line_no;
        auto line = raw.substr(0, raw.find('#'));
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        try {
            apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1));
        } catch (const ConfigError &err) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + err.what());
        }
    }
    validate(cfg);
    return cfg;
}

void validate(const ExperimentConfig &cfg)
{
    if (cfg.schemes.empty())
        throw ConfigError("config: at least one scheme is required");
    for (const auto &levels : cfg.schemes)
        fedcore::validate(fedcore::SchemeConfig{levels, cfg.clients_per_level, cfg.prefer_float});
    if (cfg.rounds < 1)
        throw ConfigError("config: rounds must be at least 1");
    if (cfg.seeds < 1)
        throw ConfigError("config: seeds must be at least 1");
    if (cfg.snr_db.empty())
        throw ConfigError("config: snr_db needs at least one value");
    for (double s : cfg.snr_db)
        if (std::isnan(s) || s == -std::numeric_limits<double>::infinity())
            throw ConfigError("config: snr_db values must be finite or inf");
    if (!(cfg.gain_cap > 0.0))
        throw ConfigError("config: gain_cap must be positive");
    if (cfg.pilot_length < 1)
        throw ConfigError("config: pilot_length must be at least 1");
    if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr))
        throw ConfigError("config: lr must be non-negative");
    if (cfg.epochs < 1 || cfg.batch < 1)
        throw ConfigError("config: epochs and batch must be at least 1");
    for (int h : cfg.hidden)
        if (h < 1)
            throw ConfigError("config: hidden widths must be positive");
    if (cfg.workers < 1)
        throw ConfigError("config: workers must be at least 1");
    if (cfg.convergence_window < 1 || !(cfg.convergence_fraction > 0.0 && cfg.convergence_fraction <= 1.0))
        throw ConfigError("config: convergence window must be >= 1 and fraction in (0, 1]");
    if (!cfg.data.train_path.empty() && cfg.data.test_path.empty())
        throw ConfigError("config: train_path requires test_path");
}

std::uint64_t replicate_seed(std::uint64_t master, int replicate, Purpose purpose)
{
    return derive_seed({master, static_cast<std::uint64_t>(replicate), static_cast<std::uint64_t>(purpose)});
}

MetricsTable run_experiment(const ExperimentConfig &cfg)
{
    validate(cfg);
    const int n_clients = 3 * cfg.clients_per_level;
    std::vector<fedcore::FederationInputs> replicates;
    for (int s = 0; s < cfg.seeds; ++s)
        replicates.push_back(build_inputs(cfg, s, n_clients));

    MetricsTable table;
    for (std::size_t i = 0; i < cfg.schemes.size(); ++i) {
        const fedcore::SchemeConfig scheme{cfg.schemes[i], cfg.clients_per_level, cfg.prefer_float};
        const std::string name = fedcore::scheme_string(scheme);
        for (int s = 0; s < cfg.seeds; ++s) {
            for (double snr : cfg.snr_db) {
                fedcore::FederationConfig fc;
                fc.training = {cfg.epochs, cfg.lr, cfg.batch};
                fc.channel.noise = {snr, cfg.noise_reference};
                fc.channel.gain_cap = cfg.gain_cap;
                fc.channel.csi = cfg.csi;
                fc.channel.pilot = phy::PilotSequence::constant(cfg.pilot_length);
                fc.workers = cfg.workers;
                const fedcore::StreamSeeds seeds{cfg.master_seed, i, static_cast<std::uint64_t>(s)};

                std::vector<fedcore::RoundRecord> records;
                try {
                    records = fedcore::run_federation(scheme, cfg.rounds, fc, replicates[static_cast<std::size_t>(s)],
                                                      seeds);
                } catch (const Error &err) {
                    throw Error("scheme " + name + ", seed " + std::to_string(s) + ": " + err.what());
                }
                const auto converged =
                    fedcore::detect_convergence(records, cfg.convergence_window, cfg.convergence_fraction);
                for (const auto &rec : records) {
                    MetricsRow server{name, s, rec.round, snr, rec.server_accuracy, {}, {}, {}, converged,
                                      rec.clip_events};
                    table.rows.push_back(server);
                    for (std::size_t c = 0; c < rec.per_client_accuracy.size(); ++c) {
                        MetricsRow row = server;
                        row.client_id = static_cast<int>(c);
                        row.client_bits = rec.per_client_bits[c];
                        row.client_acc = rec.per_client_accuracy[c];
                        table.rows.push_back(row);
                    }
                }
            }
        }
    }
    return table;
}

std::string format_metrics(const MetricsTable &table)
{
    std::string out(kMetricsHeader);
    out += '\n';
    for (const auto &r : table.rows) {
        out += '"' + r.scheme + "\",";
        out += std::to_string(r.seed) + ',' + std::to_string(r.round) + ',' + format_double(r.snr_db) + ',';
        out += format_fixed6(r.server_acc) + ',';
        out += (r.client_id ? std::to_string(*r.client_id) : "") + ',';
        out += (r.client_bits ? std::to_string(*r.client_bits) : "") + ',';
        out += (r.client_acc ? format_fixed6(*r.client_acc) : "") + ',';
        out += (r.converged_round ? std::to_string(*r.converged_round) : "") + ',';
        out += std::to_string(r.clip_events) + '\n';
    }
    return out;
}

void write_metrics(const MetricsTable &table, const std::filesystem::path &path)
{
    const std::string text = format_metrics(table);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw IoError("cannot write " + tmp.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        out.flush();
        if (!out) {
            out.close();
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw IoError("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot move metrics into place at " + path.string());
    }
}

MetricsTable parse_metrics(std::string_view csv)
{
    MetricsTable table;
    std::size_t line_no = 0;
    bool header_seen = false;
    for (auto line : split(csv, '\n')) {
        ++line_no;
        if (line.empty())
            continue;
        if (!header_seen) {
            if (line != kMetricsHeader)
                throw ParseError("metrics: unexpected header on line " + std::to_string(line_no));
            header_seen = true;
            continue;
        }
        const auto f = split_csv_line(line, line_no);
        if (f.size() != 10)
            throw ParseError("metrics: expected 10 columns on line " + std::to_string(line_no) + ", found " +
                             std::to_string(f.size()));
        MetricsRow r;
        r.scheme = f[0];
        r.seed = required_field<int>(f[1], line_no, "seed");
        r.round = required_field<int>(f[2], line_no, "round");
        r.snr_db = required_field<double>(f[3], line_no, "snr_db");
        r.server_acc = required_field<double>(f[4], line_no, "server_acc");
        r.client_id = optional_field<int>(f[5], line_no, "client_id");
        r.client_bits = optional_field<int>(f[6], line_no, "client_bits");
        r.client_acc = optional_field<double>(f[7], line_no, "client_acc");
        r.converged_round = optional_field<int>(f[8], line_no, "converged_round");
        r.clip_events = required_field<int>(f[9], line_no, "clip_events");
        table.rows.push_back(std::move(r));
    }
    if (!header_seen)
        throw ParseError("metrics: missing header");
    return table;
}

MetricsTable read_metrics(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return parse_metrics(text);
}

std::vector<SchemeSummary> summarize(const MetricsTable &table, int window, double fraction)
{
    struct Run
    {
        std::vector<double> server; // indexed by round - 1
        std::map<int, double> final_4bit;
        int last_round = 0;
    };
    struct Group
    {
        std::string scheme;
        double snr;
        std::map<int, Run> runs; // by seed
    };
    std::vector<Group> groups;
    for (const auto &r : table.rows) {
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&](const Group &g) { return g.scheme == r.scheme && g.snr == r.snr_db; });
        if (it == groups.end()) {
            groups.push_back({r.scheme, r.snr_db, {}});
            it = std::prev(groups.end());
        }
        Run &run = it->runs[r.seed];
        if (!r.client_id) {
            if (static_cast<int>(run.server.size()) < r.round)
                run.server.resize(static_cast<std::size_t>(r.round), 0.0);
            run.server[static_cast<std::size_t>(r.round - 1)] = r.server_acc;
            if (r.round > run.last_round) {
                run.last_round = r.round;
                run.final_4bit.clear();
            }
        } else if (r.round == run.last_round && r.client_bits == 4 && r.client_acc) {
            run.final_4bit[*r.client_id] = *r.client_acc;
        }
    }

    std::vector<SchemeSummary> out;
    for (const auto &g : groups) {
        SchemeSummary s;
        s.scheme = g.scheme;
        s.snr_db = g.snr;
        double conv_sum = 0.0, acc_sum = 0.0, jitter_sum = 0.0, four_sum = 0.0;
        int four_runs = 0;
        for (const auto &[seed, run] : g.runs) {
            ++s.runs;
            acc_sum += run.server.empty() ? 0.0 : run.server.back();
            const auto conv = fedcore::detect_convergence(run.server, window, fraction);
            if (conv) {
                ++s.converged_runs;
                conv_sum += *conv;
                jitter_sum += fedcore::post_convergence_jitter(run.server, *conv);
            }
            if (!run.final_4bit.empty()) {
                double m = 0.0;
                for (const auto &[id, acc] : run.final_4bit)
                    m += acc;
                four_sum += m / static_cast<double>(run.final_4bit.size());
                ++four_runs;
            }
        }
        s.final_server_acc = s.runs ? acc_sum / s.runs : 0.0;
        if (s.converged_runs) {
            s.converged_round = conv_sum / s.converged_runs;
            s.jitter = jitter_sum / s.converged_runs;
        }
        if (four_runs)
            s.mean_4bit_client_acc = four_sum / four_runs;
        out.push_back(std::move(s));
    }
    return out;
}

std::string format_summary(const std::vector<SchemeSummary> &summary)
{
    std::ostringstream os;
    os << "scheme,snr_db,runs,converged_runs,converged_round,final_server_acc,mean_4bit_client_acc,jitter\n";
    for (const auto &s : summary) {
        os << '"' << s.scheme << "\"," << format_double(s.snr_db) << ',' << s.runs << ',' << s.converged_runs << ','
           << (s.converged_round ? format_fixed6(*s.converged_round) : "") << ',' << format_fixed6(s.final_server_acc)
           << ',' << (s.mean_4bit_client_acc ? format_fixed6(*s.mean_4bit_client_acc) : "") << ','
           << format_fixed6(s.jitter) << '\n';
    }
    return os.str();
}

} // namespace otafl::harness
