#include "futu/weights_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <unordered_set>

#include "futu/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "weights container assumes a little-endian host");

namespace futu {

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& is, const char* what) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw IoError(std::string("weights file truncated while reading ") + what);
    return v;
}

} // namespace

void save_weights(const std::vector<NamedTensor>& entries, const std::filesystem::path& path) {
    std::unordered_set<std::string> seen;
    for (const auto& e : entries)
        if (!seen.insert(e.name).second)
            throw IoError("duplicate tensor name in weights container: " + e.name);

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open for writing: " + tmp.string());
        os.write(kWeightsMagic, 4);
        write_u32(os, kWeightsVersion);
        write_u32(os, static_cast<std::uint32_t>(entries.size()));
        for (const auto& e : entries) {
            write_u32(os, static_cast<std::uint32_t>(e.name.size()));
            os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
            write_u32(os, static_cast<std::uint32_t>(e.tensor.rank()));
            for (std::size_t d : e.tensor.shape()) write_u32(os, static_cast<std::uint32_t>(d));
            os.write(reinterpret_cast<const char*>(e.tensor.ptr()),
                     static_cast<std::streamsize>(e.tensor.numel() * sizeof(float)));
        }
        if (!os) throw IoError("write failure on " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " +
                          ec.message());
}

std::vector<NamedTensor> load_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open weights file: " + path.string());

    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kWeightsMagic, 4) != 0)
        throw IoError("bad magic in weights file " + path.string() +
                      " (not a FUTU weights container)");
    const std::uint32_t version = read_u32(is, "version");
    if (version != kWeightsVersion)
        throw IoError("unsupported weights version " + std::to_string(version) + " in " +
                      path.string() + " (expected " + std::to_string(kWeightsVersion) + ")");
    const std::uint32_t count = read_u32(is, "tensor count");

    std::vector<NamedTensor> entries;
    entries.reserve(count);
    std::unordered_set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(is, "name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw IoError("weights file truncated while reading name of tensor " +
                               std::to_string(i));
        if (!seen.insert(name).second)
            throw IoError("duplicate tensor name in weights file: " + name);
        const std::uint32_t rank = read_u32(is, "rank");
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = read_u32(is, "dimension");
        Tensor t{shape};
        is.read(reinterpret_cast<char*>(t.ptr()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (static_cast<std::size_t>(is.gcount()) != t.numel() * sizeof(float))
            throw IoError("payload size mismatch for tensor '" + name + "': expected " +
                          std::to_string(t.numel() * sizeof(float)) + " bytes");
        entries.push_back(NamedTensor{std::move(name), std::move(t)});
    }
    // Trailing bytes mean the header undercounts; reject rather than ignore.
    is.peek();
    if (!is.eof())
        throw IoError("payload size mismatch: trailing bytes after last tensor in " +
                      path.string());
    return entries;
}

} // namespace futu
