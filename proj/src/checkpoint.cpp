#include "rankssm/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "rankssm/errors.hpp"

namespace rankssm {

namespace {

constexpr char kMagic[4] = {'R', 'K', 'S', 'M'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double x) { put_u64(os, std::bit_cast<std::uint64_t>(x)); }

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw DataError("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw DataError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

}  // namespace

void save_checkpoint(const std::string& path, const NamedTensors& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<std::uint32_t>(t.shape().size()));
        for (int d : t.shape()) put_u64(os, static_cast<std::uint64_t>(d));
        for (double x : t.data()) put_f64(os, x);
    }
    if (!os) throw DataError("checkpoint: write failed for " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw DataError("checkpoint: bad magic in " + path);
    }
    const std::uint32_t version = get_u32(is);
    if (version != kVersion) {
        throw DataError("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = get_u32(is);
    NamedTensors out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw DataError("checkpoint: truncated name in " + path);
        const std::uint32_t rank = get_u32(is);
        Shape shape(rank);
        std::int64_t numel = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            shape[r] = static_cast<int>(get_u64(is));
            numel *= shape[r];
        }
        std::vector<double> values(static_cast<std::size_t>(numel));
        for (double& x : values) x = get_f64(is);
        Tensor t = Tensor::zeros(shape);
        auto dst = t.mutable_data();
        std::copy(values.begin(), values.end(), dst.begin());
        out.emplace_back(std::move(name), std::move(t));
    }
    return out;
}

void load_checkpoint_into(const std::string& path, NamedTensors& params) {
    NamedTensors loaded = load_checkpoint(path);
    std::map<std::string, Tensor> by_name;
    for (auto& [name, t] : loaded) by_name.emplace(name, t);
    for (auto& [name, t] : params) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            throw DataError("checkpoint: parameter '" + name + "' missing from " + path);
        }
        if (it->second.shape() != t.shape()) {
            throw DataError("checkpoint: shape mismatch for '" + name + "': file has " +
                            shape_str(it->second.shape()) + ", model has " +
                            shape_str(t.shape()));
        }
        auto src = it->second.data();
        auto dst = t.mutable_data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
}

}  // namespace rankssm
