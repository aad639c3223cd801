// SPDX-License-Identifier: Apache-2.0
#pragma once
// INI run configuration with sections [data] [model] [train] [rabu] [augment].
// Precedence: command-line flags, then file keys, then the defaults below.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "raum/augment/augment.hpp"
#include "raum/backbone/backbone.hpp"
#include "raum/data/data.hpp"
#include "raum/trainer/trainer.hpp"

namespace raum::experiments {

struct RunConfig {
    data::SyntheticDatasetSpec data;
    double label_ratio = 0.1;
    data::OcclusionSpec occlusion; // coverage 0 disables occlusion
    // image_size, channels and num_classes are taken from `data`
    backbone::BackboneConfig model;
    trainer::TrainConfig train;
    augment::AugmentSpec augment;

    /// Model config with the dataset-derived fields filled in.
    backbone::BackboneConfig model_config() const;
    /// Throws ConfigError if any part is invalid.
    void validate() const;
};

/// Every addressable key as "section.key".
std::vector<std::string> config_keys();

/// Parses INI text on top of the defaults. Unknown sections or keys, duplicate
/// keys and malformed values raise ConfigError.
RunConfig parse_config(std::string_view text);
/// Reads and parses a file. Throws IoError when unreadable.
RunConfig load_config(const std::filesystem::path& path);

/// Complete INI listing of every key. parse_config(to_ini(c)) reproduces c.
std::string to_ini(const RunConfig& cfg);

/// Sets `section.key` from text, with the same validation as the parser.
void set_config_value(RunConfig& cfg, std::string_view dotted_key, std::string_view value);

} // namespace raum::experiments
