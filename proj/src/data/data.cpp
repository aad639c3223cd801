// SPDX-License-Identifier: Apache-2.0
#include "raum/data/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <numeric>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "raum/bytes.hpp"
#include "raum/error.hpp"
#include "raum/fileio.hpp"

namespace raum::data {
namespace {

constexpr std::uint64_t kPatternBankSeed = 0x4d4f544946ULL;
constexpr std::uint64_t kSampleTag = 0xda7aULL;
constexpr std::uint64_t kOcclusionTag = 0x0cc1ULL;
constexpr std::string_view kImageMagic = "RAUMIMG1";
constexpr std::uint32_t kImageVersion = 1;

std::string split_name(std::size_t id, const SplitManifest& m) {
    auto in = [id](const std::vector<std::size_t>& v) { return std::binary_search(v.begin(), v.end(), id); };
    if (in(m.labeled_ids)) return "labeled";
    if (in(m.unlabeled_ids)) return "unlabeled";
    if (in(m.test_ids)) return "test";
    return "unused";
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) {
        throw DataError("manifest: bad " + what + " '" + s + "'");
    }
    return v;
}

} // namespace

void SyntheticDatasetSpec::validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (samples_per_class < 1) throw ConfigError("samples_per_class must be at least 1");
    if (image_size < 4 || channels < 1) throw ConfigError("image_size must be >= 4 and channels >= 1");
    if (motif_size < 1 || 2 * motif_size >= image_size) {
        throw ConfigError("motif_size must satisfy 1 <= motif_size < image_size/2, got " + std::to_string(motif_size));
    }
    if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
    if (num_classes > pattern_bank_size(channels)) {
        throw ConfigError("num_classes exceeds the " + std::to_string(pattern_bank_size(channels)) +
                          "-entry pattern bank for " + std::to_string(channels) + " channel(s)");
    }
}

std::size_t pattern_bank_size(std::size_t channels) {
    return std::size_t{1} << std::min<std::size_t>(4 * channels, 16);
}

Tensor motif_pattern(std::size_t label, std::size_t motif_size, std::size_t channels) {
    // 2×2 grid of quadrants, each a saturated colour (every channel near 0 or 1).
    // The class code is entry `label` of a fixed permutation of all codes, so
    // codes are distinct and identical across datasets.
    const std::size_t bank = pattern_bank_size(channels);
    if (label >= bank) throw ConfigError("pattern bank holds only " + std::to_string(bank) + " classes");
    std::vector<std::uint32_t> codes(bank);
    std::iota(codes.begin(), codes.end(), 0u);
    Rng rng(kPatternBankSeed);
    for (std::size_t i = bank; i > 1; --i) std::swap(codes[i - 1], codes[rng.below(i)]);
    const std::uint32_t code = codes[label];
    const std::size_t half = std::max<std::size_t>(1, motif_size / 2);
    Tensor p(Shape{motif_size, motif_size, channels});
    auto out = p.mutable_data();
    for (std::size_t y = 0; y < motif_size; ++y)
        for (std::size_t x = 0; x < motif_size; ++x) {
            const std::size_t q = std::min<std::size_t>(1, y / half) * 2 + std::min<std::size_t>(1, x / half);
            for (std::size_t c = 0; c < channels; ++c) {
                const std::size_t bit = (q * channels + c) % 16;
                out[(y * motif_size + x) * channels + c] = (code >> bit) & 1u ? 0.95 : 0.05;
            }
        }
    return p;
}

Jitter draw_jitter(const SyntheticDatasetSpec& spec, Rng& rng) {
    Jitter j;
    j.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
    j.gradient = rng.uniform(0.1, 0.3);
    for (std::size_t c = 0; c < spec.channels; ++c) j.base.push_back(rng.uniform(0.25, 0.55));
    j.blob_x = rng.uniform(0.3, 0.7);
    j.blob_y = rng.uniform(0.3, 0.7);
    j.blob_radius = rng.uniform(0.15, 0.3);
    for (std::size_t c = 0; c < spec.channels; ++c) j.blob_amp.push_back(rng.uniform(-0.25, 0.25));
    const std::size_t room = spec.image_size - spec.motif_size;
    j.motif_x = rng.below(room + 1);
    j.motif_y = rng.below(room + 1);
    return j;
}

Tensor render(const SyntheticDatasetSpec& spec, std::size_t label, const Jitter& j) {
    const std::size_t s = spec.image_size, ch = spec.channels, m = spec.motif_size;
    if (j.base.size() != ch || j.blob_amp.size() != ch) throw ShapeError("jitter channel count mismatch");
    const Tensor motif = motif_pattern(label, m, ch);
    Tensor img(Shape{s, s, ch});
    auto out = img.mutable_data();
    const double ca = std::cos(j.angle), sa = std::sin(j.angle);
    for (std::size_t y = 0; y < s; ++y) {
        const double v = (double(y) + 0.5) / double(s);
        for (std::size_t x = 0; x < s; ++x) {
            const double u = (double(x) + 0.5) / double(s);
            const double g = j.gradient * (ca * (u - 0.5) + sa * (v - 0.5));
            const double d2 = (u - j.blob_x) * (u - j.blob_x) + (v - j.blob_y) * (v - j.blob_y);
            const double blob = std::exp(-d2 / (2.0 * j.blob_radius * j.blob_radius));
            const bool in_motif = y >= j.motif_y && y < j.motif_y + m && x >= j.motif_x && x < j.motif_x + m;
            for (std::size_t c = 0; c < ch; ++c) {
                double val = j.base[c] + g + j.blob_amp[c] * blob;
                if (in_motif) val = motif[((y - j.motif_y) * m + (x - j.motif_x)) * ch + c];
                out[(y * s + x) * ch + c] = val;
            }
        }
    }
    return img;
}

Dataset generate_dataset(const SyntheticDatasetSpec& spec) {
    spec.validate();
    Dataset ds;
    ds.spec = spec;
    const std::size_t n_train = spec.train_count(), n_total = n_train + spec.test_count();
    ds.samples.reserve(n_total);
    for (std::size_t id = 0; id < n_total; ++id) {
        Sample smp;
        smp.id = id;
        smp.test = id >= n_train;
        const std::size_t local = smp.test ? id - n_train : id;
        smp.label = local % spec.num_classes;
        Rng rng(derive_seed({spec.seed, id, kSampleTag}));
        smp.jitter = draw_jitter(spec, rng);
        smp.image = render(spec, smp.label, smp.jitter);
        if (spec.noise_std > 0.0) {
            for (auto& v : smp.image.mutable_data()) v = std::clamp(v + spec.noise_std * rng.normal(), 0.0, 1.0);
        }
        ds.samples.push_back(std::move(smp));
    }
    return ds;
}

void OcclusionSpec::validate() const {
    if (!(coverage >= 0.0 && coverage < 1.0)) {
        throw ConfigError("occlusion coverage must lie in [0, 1), got " + std::to_string(coverage));
    }
    if (num_squares < 1) throw ConfigError("occlusion num_squares must be at least 1");
    if (!(fill_value >= 0.0 && fill_value <= 1.0)) throw ConfigError("occlusion fill_value must lie in [0, 1]");
}

std::size_t OcclusionSpec::side(std::size_t h, std::size_t w) const {
    return static_cast<std::size_t>(std::lround(std::sqrt(coverage * double(h * w) / double(num_squares))));
}

Tensor apply_occlusion(const Tensor& image, const OcclusionSpec& spec, Rng& rng) {
    spec.validate();
    if (image.rank() != 3) throw ShapeError("occlusion expects an HxWxC image, got " + shape_str(image.shape()));
    const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
    const std::size_t side = spec.side(h, w);
    if (side > h || side > w) {
        throw ConfigError("occlusion square of side " + std::to_string(side) + " does not fit a " + std::to_string(h) +
                          "x" + std::to_string(w) + " image");
    }
    Tensor out = image.clone();
    if (side == 0) return out;
    auto o = out.mutable_data();
    for (std::size_t s = 0; s < spec.num_squares; ++s) {
        const std::size_t y0 = rng.below(h - side + 1), x0 = rng.below(w - side + 1);
        for (std::size_t y = y0; y < y0 + side; ++y)
            std::fill_n(o.begin() + long((y * w + x0) * c), side * c, spec.fill_value);
    }
    return out;
}

SplitManifest make_splits(const std::vector<std::size_t>& train_ids, const std::vector<std::size_t>& labels,
                          std::size_t num_classes, double label_ratio, std::uint64_t seed) {
    if (!(label_ratio > 0.0 && label_ratio < 1.0)) {
        throw ConfigError("label_ratio must lie in (0, 1), got " + std::to_string(label_ratio));
    }
    if (train_ids.size() != labels.size()) throw ShapeError("make_splits: ids and labels differ in length");
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) throw DataError("label " + std::to_string(labels[i]) + " out of range");
        by_class[labels[i]].push_back(train_ids[i]);
    }
    SplitManifest m;
    m.label_ratio = label_ratio;
    m.seed = seed;
    for (std::size_t k = 0; k < num_classes; ++k) {
        auto& ids = by_class[k];
        if (ids.empty()) throw DataError("class " + std::to_string(k) + " has no training samples");
        std::sort(ids.begin(), ids.end());
        Rng rng(derive_seed({seed, k}));
        for (std::size_t i = ids.size() - 1; i > 0; --i) std::swap(ids[i], ids[rng.below(i + 1)]);
        const std::size_t take =
            std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(label_ratio * double(ids.size()))));
        m.labeled_ids.insert(m.labeled_ids.end(), ids.begin(), ids.begin() + long(take));
        m.unlabeled_ids.insert(m.unlabeled_ids.end(), ids.begin() + long(take), ids.end());
    }
    std::sort(m.labeled_ids.begin(), m.labeled_ids.end());
    std::sort(m.unlabeled_ids.begin(), m.unlabeled_ids.end());
    return m;
}

SplitManifest make_splits(const Dataset& ds, double label_ratio, std::uint64_t seed) {
    std::vector<std::size_t> ids, labels;
    SplitManifest m;
    std::vector<std::size_t> test;
    for (const auto& s : ds.samples) {
        if (s.test) {
            test.push_back(s.id);
        } else {
            ids.push_back(s.id);
            labels.push_back(s.label);
        }
    }
    m = make_splits(ids, labels, ds.spec.num_classes, label_ratio, seed);
    m.test_ids = std::move(test);
    return m;
}

std::uint64_t occlusion_seed(std::uint64_t seed, std::size_t id) { return derive_seed({seed, id, kOcclusionTag}); }

PreparedDataset occlusion_protocol(const Dataset& ds, const SplitManifest& manifest,
                                   const std::optional<OcclusionSpec>& spec) {
    PreparedDataset out;
    out.num_classes = ds.spec.num_classes;
    out.image_size = ds.spec.image_size;
    out.channels = ds.spec.channels;
    out.manifest = manifest;
    out.images.reserve(ds.samples.size());
    for (const auto& s : ds.samples) {
        out.images.push_back(s.image);
        out.labels.push_back(s.label);
    }
    out.occlusion_seeds.assign(ds.samples.size(), std::nullopt);
    if (!spec || spec->coverage == 0.0) return out;
    spec->validate();
    auto occlude = [&](const std::vector<std::size_t>& ids) {
        for (auto id : ids) {
            if (id >= out.images.size()) throw DataError("manifest id " + std::to_string(id) + " out of range");
            const std::uint64_t seed = occlusion_seed(ds.spec.seed, id);
            Rng rng(seed);
            out.images[id] = apply_occlusion(out.images[id], *spec, rng);
            out.occlusion_seeds[id] = seed;
        }
    };
    occlude(manifest.unlabeled_ids);
    occlude(manifest.test_ids);
    return out;
}

std::vector<std::uint8_t> encode_images(const std::vector<Tensor>& images, std::size_t h, std::size_t w,
                                        std::size_t c) {
    bytes::Writer wr;
    wr.raw(kImageMagic);
    wr.le(kImageVersion);
    wr.le(static_cast<std::uint32_t>(h));
    wr.le(static_cast<std::uint32_t>(w));
    wr.le(static_cast<std::uint32_t>(c));
    wr.le(static_cast<std::uint64_t>(images.size()));
    const Shape expect{h, w, c};
    for (const auto& img : images) {
        if (img.shape() != expect) {
            throw ShapeError("image shape " + shape_str(img.shape()) + " differs from " + shape_str(expect));
        }
        for (double v : img.data()) wr.le(v);
    }
    return std::move(wr.buffer());
}

std::vector<Tensor> decode_images(const std::vector<std::uint8_t>& data, Shape& image_shape) {
    bytes::Reader r(data.data(), data.size());
    if (r.raw(kImageMagic.size()) != kImageMagic) throw IoError("images.bin: bad magic");
    if (const auto v = r.le<std::uint32_t>(); v != kImageVersion) {
        throw IoError("images.bin: unsupported version " + std::to_string(v));
    }
    const std::size_t h = r.le<std::uint32_t>(), w = r.le<std::uint32_t>(), c = r.le<std::uint32_t>();
    const std::uint64_t count = r.le<std::uint64_t>();
    image_shape = {h, w, c};
    const std::size_t per = h * w * c;
    if (per != 0 && r.remaining() / 8 / per < count) throw IoError("truncated binary data");
    std::vector<Tensor> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        Tensor t(image_shape);
        for (auto& v : t.mutable_data()) v = r.le<double>();
        out.push_back(std::move(t));
    }
    if (r.remaining() != 0) throw IoError("images.bin: trailing bytes");
    return out;
}

void write_dataset(const std::filesystem::path& dir, const PreparedDataset& ds, const std::string& config_json) {
    if (!std::filesystem::is_directory(dir)) {
        std::error_code ec;
        std::filesystem::create_directory(dir, ec);
        if (ec) throw IoError("cannot create dataset directory '" + dir.string() + "': " + ec.message());
    }
    std::ostringstream tsv;
    tsv << "id\tsplit\tlabel\tocclusion_seed\n";
    for (std::size_t id = 0; id < ds.images.size(); ++id) {
        tsv << id << '\t' << split_name(id, ds.manifest) << '\t' << ds.labels[id] << '\t';
        if (ds.occlusion_seeds[id]) {
            tsv << *ds.occlusion_seeds[id];
        } else {
            tsv << '-';
        }
        tsv << '\n';
    }
    fileio::write_text(dir / "manifest.tsv", tsv.str());
    const auto blob = encode_images(ds.images, ds.image_size, ds.image_size, ds.channels);
    fileio::write_bytes(dir / "images.bin", blob.data(), blob.size());

    nlohmann::ordered_json j;
    j["dataset"] = {{"num_classes", ds.num_classes},
                    {"image_size", ds.image_size},
                    {"channels", ds.channels},
                    {"count", ds.images.size()},
                    {"label_ratio", ds.manifest.label_ratio},
                    {"split_seed", ds.manifest.seed}};
    j["config"] = config_json.empty() ? nlohmann::ordered_json::object() : nlohmann::ordered_json::parse(config_json);
    fileio::write_text(dir / "config.json", j.dump(2) + "\n");
}

PreparedDataset read_dataset(const std::filesystem::path& dir) {
    PreparedDataset ds;
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(fileio::read_text(dir / "config.json"));
        const auto& d = meta.at("dataset");
        ds.num_classes = d.at("num_classes").get<std::size_t>();
        ds.image_size = d.at("image_size").get<std::size_t>();
        ds.channels = d.at("channels").get<std::size_t>();
        ds.manifest.label_ratio = d.at("label_ratio").get<double>();
        ds.manifest.seed = d.at("split_seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError((dir / "config.json").string() + ": " + e.what());
    }

    Shape shape;
    try {
        ds.images = decode_images(fileio::read_bytes(dir / "images.bin"), shape);
    } catch (const IoError& e) {
        throw IoError((dir / "images.bin").string() + ": " + e.what());
    }
    if (shape != ds.image_shape()) throw DataError("images.bin shape disagrees with config.json");

    std::istringstream tsv(fileio::read_text(dir / "manifest.tsv"));
    std::string line;
    std::getline(tsv, line);
    if (line != "id\tsplit\tlabel\tocclusion_seed") throw DataError("manifest.tsv: unexpected header");
    ds.labels.assign(ds.images.size(), 0);
    ds.occlusion_seeds.assign(ds.images.size(), std::nullopt);
    std::size_t rows = 0;
    while (std::getline(tsv, line)) {
        std::istringstream row(line);
        std::string id_s, split, label_s, occ;
        if (!std::getline(row, id_s, '\t') || !std::getline(row, split, '\t') || !std::getline(row, label_s, '\t') ||
            !std::getline(row, occ)) {
            throw DataError("manifest.tsv: malformed row '" + line + "'");
        }
        const std::size_t id = parse_u64(id_s, "id");
        if (id >= ds.images.size()) throw DataError("manifest.tsv: id " + id_s + " has no image");
        ds.labels[id] = parse_u64(label_s, "label");
        if (ds.labels[id] >= ds.num_classes) throw DataError("manifest.tsv: label out of range in '" + line + "'");
        if (occ != "-") ds.occlusion_seeds[id] = parse_u64(occ, "occlusion seed");
        if (split == "labeled") {
            ds.manifest.labeled_ids.push_back(id);
        } else if (split == "unlabeled") {
            ds.manifest.unlabeled_ids.push_back(id);
        } else if (split == "test") {
            ds.manifest.test_ids.push_back(id);
        } else if (split != "unused") {
            throw DataError("manifest.tsv: unknown split '" + split + "'");
        }
        ++rows;
    }
    if (rows != ds.images.size()) throw DataError("manifest.tsv row count disagrees with images.bin");
    return ds;
}

} // namespace raum::data
