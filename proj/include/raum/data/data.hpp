// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "raum/numkernel/rng.hpp"
#include "raum/numkernel/tensor.hpp"

namespace raum::data {

// Procedural fine-grained dataset: every image shares a gradient background and
// a large blob; the class shows only in a small motif at a jittered position.
struct SyntheticDatasetSpec {
    std::size_t num_classes = 10;
    std::size_t samples_per_class = 100; // training images per class
    std::size_t test_per_class = 20;
    std::size_t image_size = 32;
    std::size_t channels = 3;
    std::size_t motif_size = 12;
    double noise_std = 0.03;
    std::uint64_t seed = 0;

    void validate() const;
    std::size_t train_count() const { return num_classes * samples_per_class; }
    std::size_t test_count() const { return num_classes * test_per_class; }
};

// Per-sample pose and appearance draws.
struct Jitter {
    double angle = 0.0;     // gradient direction, radians
    double gradient = 0.0;  // gradient amplitude
    std::vector<double> base;      // per-channel background level
    double blob_x = 0.5, blob_y = 0.5, blob_radius = 0.25; // in image units
    std::vector<double> blob_amp;  // per-channel blob amplitude
    std::size_t motif_x = 0, motif_y = 0; // top-left pixel of the motif
};

struct Sample {
    std::size_t id = 0;
    std::size_t label = 0;
    bool test = false;
    Jitter jitter;
    Tensor image; // H×W×C in [0, 1]
};

struct Dataset {
    SyntheticDatasetSpec spec;
    std::vector<Sample> samples; // indexed by id: training ids first, then test ids
};

/// Number of distinct class motifs available for a channel count.
std::size_t pattern_bank_size(std::size_t channels);
/// The class pattern bank; fixed, independent of the dataset seed.
Tensor motif_pattern(std::size_t label, std::size_t motif_size, std::size_t channels);

Jitter draw_jitter(const SyntheticDatasetSpec& spec, Rng& rng);
/// Noise-free rendering of one sample.
Tensor render(const SyntheticDatasetSpec& spec, std::size_t label, const Jitter& jitter);
Dataset generate_dataset(const SyntheticDatasetSpec& spec);

struct OcclusionSpec {
    double coverage = 0.4;
    std::size_t num_squares = 1;
    double fill_value = 0.5;

    void validate() const;
    std::size_t side(std::size_t h, std::size_t w) const;
};

/// Overwrites `num_squares` equal squares placed uniformly inside the image.
Tensor apply_occlusion(const Tensor& image, const OcclusionSpec& spec, Rng& rng);

struct SplitManifest {
    std::vector<std::size_t> labeled_ids;
    std::vector<std::size_t> unlabeled_ids;
    std::vector<std::size_t> test_ids;
    double label_ratio = 0.1;
    std::uint64_t seed = 0;
};

/// Per-class stratified split of training ids. `labels[i]` is the class of `train_ids[i]`.
SplitManifest make_splits(const std::vector<std::size_t>& train_ids, const std::vector<std::size_t>& labels,
                          std::size_t num_classes, double label_ratio, std::uint64_t seed);
/// Splits the training part of `ds`; test ids are carried over unchanged.
SplitManifest make_splits(const Dataset& ds, double label_ratio, std::uint64_t seed);

std::uint64_t occlusion_seed(std::uint64_t seed, std::size_t id);

// Everything the trainer consumes: final images (occluded where the protocol
// says so), labels, and split membership.
struct PreparedDataset {
    std::size_t num_classes = 0;
    std::size_t image_size = 0;
    std::size_t channels = 0;
    std::vector<Tensor> images; // indexed by id
    std::vector<std::size_t> labels;
    std::vector<std::optional<std::uint64_t>> occlusion_seeds;
    SplitManifest manifest;

    Shape image_shape() const { return {image_size, image_size, channels}; }
};

/// Occludes every unlabeled-train and test image; labeled images stay clean.
PreparedDataset occlusion_protocol(const Dataset& ds, const SplitManifest& manifest,
                                   const std::optional<OcclusionSpec>& spec);

// Directory layout: manifest.tsv, images.bin, config.json. See docs/formats.md.
void write_dataset(const std::filesystem::path& dir, const PreparedDataset& ds, const std::string& config_json);
PreparedDataset read_dataset(const std::filesystem::path& dir);

std::vector<std::uint8_t> encode_images(const std::vector<Tensor>& images, std::size_t h, std::size_t w, std::size_t c);
std::vector<Tensor> decode_images(const std::vector<std::uint8_t>& bytes, Shape& image_shape);

} // namespace raum::data
