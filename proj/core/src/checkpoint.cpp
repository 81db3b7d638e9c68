// SPDX-License-Identifier: Apache-2.0
#include "matforge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "matforge/common.hpp"

namespace matforge {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'F', 'C', 'K'};

template <class T>
void put(std::ostream& os, T v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path)
{
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw IoError("checkpoint " + path.string() + ": truncated file");
    return v;
}

std::string get_string(std::istream& is, std::size_t n, const std::filesystem::path& path)
{
    std::string s(n, '\0');
    if (n && !is.read(s.data(), static_cast<std::streamsize>(n)))
        throw IoError("checkpoint " + path.string() + ": truncated file");
    return s;
}

} // namespace

void save_archive(const TensorArchive& archive, const std::filesystem::path& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os)
            throw IoError("cannot write checkpoint " + tmp.string());
        os.write(kMagic, 4);
        put<std::uint32_t>(os, kCheckpointVersion);
        put<std::uint64_t>(os, archive.header.size());
        os.write(archive.header.data(), static_cast<std::streamsize>(archive.header.size()));
        put<std::uint64_t>(os, archive.tensors.size());
        for (const auto& [name, t] : archive.tensors) {
            put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
            for (int d : t.shape())
                put<std::int32_t>(os, d);
            os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
        }
        if (!os)
            throw IoError("write failed for checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

TensorArchive load_archive(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("cannot open checkpoint " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("checkpoint " + path.string() + ": bad magic");
    const auto version = get<std::uint32_t>(is, path);
    if (version != kCheckpointVersion)
        throw IoError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
    TensorArchive a;
    a.header = get_string(is, get<std::uint64_t>(is, path), path);
    const auto count = get<std::uint64_t>(is, path);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string name = get_string(is, get<std::uint32_t>(is, path), path);
        const auto rank = get<std::uint32_t>(is, path);
        if (rank > 8)
            throw IoError("checkpoint " + path.string() + ": tensor '" + name + "' has implausible rank");
        std::vector<int> shape(rank);
        for (auto& d : shape) {
            d = get<std::int32_t>(is, path);
            if (d < 0)
                throw IoError("checkpoint " + path.string() + ": negative dimension in '" + name + "'");
        }
        nn::Tensor t(shape);
        if (t.numel() &&
            !is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double))))
            throw IoError("checkpoint " + path.string() + ": truncated tensor '" + name + "'");
        a.tensors.emplace(std::move(name), std::move(t));
    }
    return a;
}

void save_weights(const DenoiserWeights& w, const std::filesystem::path& path)
{
    nlohmann::json h;
    h["kind"] = "denoiser";
    h["net"] = nlohmann::json::parse(w.config.to_json());
    save_archive({h.dump(), w.tensors}, path);
}

DenoiserWeights load_weights(const std::filesystem::path& path)
{
    TensorArchive a = load_archive(path);
    DenoiserWeights w;
    try {
        const auto h = nlohmann::json::parse(a.header);
        if (h.value("kind", "") != "denoiser")
            throw IoError("checkpoint " + path.string() + " does not hold denoiser weights");
        w.config = NetConfig::from_json(h.at("net").dump());
    } catch (const nlohmann::json::exception& e) {
        throw IoError("checkpoint " + path.string() + ": bad header: " + e.what());
    }
    w.tensors = std::move(a.tensors);
    const auto expected = parameter_shapes(w.config);
    for (const auto& [name, shape] : expected) {
        auto it = w.tensors.find(name);
        if (it == w.tensors.end())
            throw IoError("checkpoint " + path.string() + ": missing tensor '" + name + "'");
        if (it->second.shape() != shape)
            throw IoError("checkpoint " + path.string() + ": tensor '" + name + "' has shape " +
                          it->second.shape_string() + ", expected " + nn::Tensor(shape).shape_string());
    }
    if (w.tensors.size() != expected.size())
        throw IoError("checkpoint " + path.string() + ": unexpected extra tensors");
    return w;
}

} // namespace matforge
