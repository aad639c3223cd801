// SPDX-License-Identifier: Apache-2.0
#include "raum/experiments/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "raum/error.hpp"
#include "raum/fileio.hpp"

namespace raum::experiments {
namespace {

struct Field {
    std::string section;
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
};

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

double to_double(std::string_view text, const std::string& where) {
    const std::string s = trim(text);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
        throw ConfigError(where + ": expected a number, got '" + s + "'");
    return v;
}

std::uint64_t to_uint(std::string_view text, const std::string& where) {
    const std::string s = trim(text);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size())
        throw ConfigError(where + ": expected a non-negative integer, got '" + s + "'");
    return v;
}

bool to_bool(std::string_view text, const std::string& where) {
    const std::string s = trim(text);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(where + ": expected true or false, got '" + s + "'");
}

template <class T>
Field size_field(std::string section, std::string key, T RunConfig::*part, std::size_t T::*member) {
    const std::string where = section + "." + key;
    return {section, key, [=](const RunConfig& c) { return std::to_string(c.*part.*member); },
            [=](RunConfig& c, std::string_view v) { c.*part.*member = to_uint(v, where); }};
}

template <class T>
Field u64_field(std::string section, std::string key, T RunConfig::*part, std::uint64_t T::*member) {
    const std::string where = section + "." + key;
    return {section, key, [=](const RunConfig& c) { return std::to_string(c.*part.*member); },
            [=](RunConfig& c, std::string_view v) { c.*part.*member = to_uint(v, where); }};
}

template <class T>
Field double_field(std::string section, std::string key, T RunConfig::*part, double T::*member) {
    const std::string where = section + "." + key;
    return {section, key, [=](const RunConfig& c) { return format_double(c.*part.*member); },
            [=](RunConfig& c, std::string_view v) { c.*part.*member = to_double(v, where); }};
}

const std::vector<Field>& fields() {
    using data::OcclusionSpec;
    using data::SyntheticDatasetSpec;
    using backbone::BackboneConfig;
    using trainer::TrainConfig;
    using augment::AugmentSpec;
    static const std::vector<Field> table = [] {
        std::vector<Field> f;
        f.push_back(size_field("data", "num_classes", &RunConfig::data, &SyntheticDatasetSpec::num_classes));
        f.push_back(size_field("data", "samples_per_class", &RunConfig::data, &SyntheticDatasetSpec::samples_per_class));
        f.push_back(size_field("data", "test_per_class", &RunConfig::data, &SyntheticDatasetSpec::test_per_class));
        f.push_back(size_field("data", "image_size", &RunConfig::data, &SyntheticDatasetSpec::image_size));
        f.push_back(size_field("data", "channels", &RunConfig::data, &SyntheticDatasetSpec::channels));
        f.push_back(size_field("data", "motif_size", &RunConfig::data, &SyntheticDatasetSpec::motif_size));
        f.push_back(double_field("data", "noise_std", &RunConfig::data, &SyntheticDatasetSpec::noise_std));
        f.push_back(u64_field("data", "seed", &RunConfig::data, &SyntheticDatasetSpec::seed));
        f.push_back({"data", "label_ratio", [](const RunConfig& c) { return format_double(c.label_ratio); },
                     [](RunConfig& c, std::string_view v) { c.label_ratio = to_double(v, "data.label_ratio"); }});
        f.push_back(double_field("data", "occlusion_coverage", &RunConfig::occlusion, &OcclusionSpec::coverage));
        f.push_back(size_field("data", "occlusion_squares", &RunConfig::occlusion, &OcclusionSpec::num_squares));
        f.push_back(double_field("data", "occlusion_fill", &RunConfig::occlusion, &OcclusionSpec::fill_value));

        f.push_back(size_field("model", "patch_size", &RunConfig::model, &BackboneConfig::patch_size));
        f.push_back(size_field("model", "embed_dim", &RunConfig::model, &BackboneConfig::embed_dim));
        f.push_back(size_field("model", "state_dim", &RunConfig::model, &BackboneConfig::state_dim));
        f.push_back(size_field("model", "num_blocks", &RunConfig::model, &BackboneConfig::num_blocks));
        f.push_back(double_field("model", "dropout_rate", &RunConfig::model, &BackboneConfig::dropout_rate));

        f.push_back(double_field("train", "lambda_u", &RunConfig::train, &TrainConfig::lambda_u));
        f.push_back(size_field("train", "batch_labeled", &RunConfig::train, &TrainConfig::batch_labeled));
        f.push_back(size_field("train", "batch_unlabeled", &RunConfig::train, &TrainConfig::batch_unlabeled));
        f.push_back(double_field("train", "lr", &RunConfig::train, &TrainConfig::lr));
        f.push_back(double_field("train", "weight_decay", &RunConfig::train, &TrainConfig::weight_decay));
        f.push_back(size_field("train", "epochs", &RunConfig::train, &TrainConfig::epochs));
        f.push_back(size_field("train", "warmup_epochs", &RunConfig::train, &TrainConfig::warmup_epochs));
        f.push_back(u64_field("train", "seed", &RunConfig::train, &TrainConfig::seed));
        f.push_back({"train", "ablation",
                     [](const RunConfig& c) { return std::string(trainer::ablation_name(c.train.ablation)); },
                     [](RunConfig& c, std::string_view v) { c.train.ablation = trainer::parse_ablation(trim(v)); }});
        f.push_back(double_field("train", "holdout_fraction", &RunConfig::train, &TrainConfig::holdout_fraction));
        f.push_back({"train", "log_decisions",
                     [](const RunConfig& c) { return std::string(c.train.log_decisions ? "true" : "false"); },
                     [](RunConfig& c, std::string_view v) { c.train.log_decisions = to_bool(v, "train.log_decisions"); }});

        f.push_back(double_field("rabu", "tau_c", &RunConfig::train, &TrainConfig::tau_c));
        f.push_back(double_field("rabu", "tau_u", &RunConfig::train, &TrainConfig::tau_u));
        f.push_back(size_field("rabu", "mc_passes", &RunConfig::train, &TrainConfig::mc_passes));

        f.push_back(size_field("augment", "crop_padding", &RunConfig::augment, &AugmentSpec::crop_padding));
        f.push_back(size_field("augment", "strong_ops", &RunConfig::augment, &AugmentSpec::strong_ops));
        f.push_back(double_field("augment", "strong_magnitude", &RunConfig::augment, &AugmentSpec::strong_magnitude));
        return f;
    }();
    return table;
}

const Field& find_field(std::string_view section, std::string_view key) {
    for (const auto& f : fields())
        if (f.section == section && f.key == key) return f;
    throw ConfigError("unknown config key '" + std::string(section) + "." + std::string(key) + "'");
}

} // namespace

backbone::BackboneConfig RunConfig::model_config() const {
    auto m = model;
    m.image_size = data.image_size;
    m.channels = data.channels;
    m.num_classes = data.num_classes;
    return m;
}

void RunConfig::validate() const {
    data.validate();
    if (!(label_ratio > 0.0 && label_ratio < 1.0)) throw ConfigError("data.label_ratio must lie in (0, 1)");
    if (occlusion.coverage != 0.0) occlusion.validate();
    model_config().validate();
    train.validate();
    augment.validate();
}

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.section + "." + f.key);
    return out;
}

void set_config_value(RunConfig& cfg, std::string_view dotted_key, std::string_view value) {
    const auto dot = dotted_key.find('.');
    if (dot == std::string_view::npos) throw ConfigError("config key must be section.key: " + std::string(dotted_key));
    find_field(dotted_key.substr(0, dot), dotted_key.substr(dot + 1)).set(cfg, value);
}

RunConfig parse_config(std::string_view text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in{std::string(text)};
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("config parse error at line " + std::to_string(e.line()) + ": " + e.message());
    }
    RunConfig cfg;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty())
            throw ConfigError("config key '" + section + "' must sit inside a section");
        for (const auto& [key, value] : body) find_field(section, key).set(cfg, value.data());
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(fileio::read_text(path)); }

std::string to_ini(const RunConfig& cfg) {
    std::string out, section;
    for (const auto& f : fields()) {
        if (f.section != section) {
            out += (section.empty() ? "[" : "\n[") + f.section + "]\n";
            section = f.section;
        }
        out += f.key + " = " + f.get(cfg) + "\n";
    }
    return out;
}

} // namespace raum::experiments
