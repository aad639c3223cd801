// SPDX-License-Identifier: Apache-2.0
#include "raum/backbone/checkpoint.hpp"

#include <fstream>
#include <iterator>
#include <map>

#include "raum/bytes.hpp"
#include "raum/error.hpp"

namespace raum {
namespace {
constexpr std::string_view kMagic = "RAUMCKPT";
}

std::vector<std::uint8_t> encode_tensors(const NamedTensors& tensors) {
    bytes::Writer w;
    w.raw(kMagic);
    w.le<std::uint32_t>(kCheckpointVersion);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
        w.raw(name);
        w.le<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) {
            w.le<std::uint64_t>(d);
        }
        for (double v : t.data()) {
            w.le<double>(v);
        }
    }
    return std::move(w.buffer());
}

NamedTensors decode_tensors(const std::vector<std::uint8_t>& data) {
    bytes::Reader r(data.data(), data.size());
    if (r.raw(kMagic.size()) != kMagic) {
        throw IoError("not a tensor container (bad magic)");
    }
    const auto version = r.le<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw IoError("unsupported tensor container version " + std::to_string(version));
    }
    const auto count = r.le<std::uint32_t>();
    NamedTensors out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.le<std::uint32_t>();
        std::string name = r.raw(name_len);
        const auto rank = r.le<std::uint32_t>();
        Shape shape(rank);
        for (auto& d : shape) {
            d = static_cast<std::size_t>(r.le<std::uint64_t>());
        }
        const std::size_t n = shape_numel(shape);
        if (r.remaining() / 8 < n) {
            throw IoError("truncated payload for tensor '" + name + "'");
        }
        std::vector<double> values(n);
        for (auto& v : values) {
            v = r.le<double>();
        }
        out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
    }
    if (r.remaining() != 0) {
        throw IoError("trailing bytes after tensor container");
    }
    return out;
}

void write_tensors(const std::filesystem::path& path, const NamedTensors& tensors) {
    const auto data = encode_tensors(tensors);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!os) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

NamedTensors read_tensors(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    try {
        return decode_tensors(data);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void load_into(const NamedTensors& source, const NamedTensors& target) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : source) {
        by_name[name] = &t;
    }
    for (const auto& [name, t] : target) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw IoError("checkpoint has no tensor '" + name + "'");
        }
        if (it->second->shape() != t.shape()) {
            throw IoError("tensor '" + name + "' has shape " + shape_str(it->second->shape()) + ", expected " +
                          shape_str(t.shape()));
        }
        auto src = it->second->data();
        Tensor dst = t;
        std::copy(src.begin(), src.end(), dst.mutable_data().begin());
    }
}

} // namespace raum
