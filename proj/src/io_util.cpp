#include "isorec/io_util.hpp"

#include <cstdio>
#include <fstream>

namespace isorec {

namespace fs = std::filesystem;

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return text;
}

json read_json_file(const fs::path& path) {
    json j = json::parse(read_text_file(path), nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw FormatError("invalid JSON in " + path.string());
    return j;
}

void atomic_write_bytes(const fs::path& path, const void* data, std::size_t n) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw FormatError("cannot write " + tmp.string());
        out.write(static_cast<const char*>(data), std::streamsize(n));
        if (!out) throw FormatError("short write to " + tmp.string());
    }
    fs::rename(tmp, path);
}

void atomic_write_text(const fs::path& path, const std::string& text) {
    atomic_write_bytes(path, text.data(), text.size());
}

void atomic_write_json(const fs::path& path, const json& j) {
    atomic_write_text(path, j.dump(2) + "\n");
}

std::vector<float> read_f32_payload(const fs::path& path, std::size_t expected_count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open payload " + path.string());
    in.seekg(0, std::ios::end);
    const auto bytes = std::size_t(in.tellg());
    if (bytes != expected_count * sizeof(float))
        throw FormatError("payload size mismatch in " + path.string() + ": expected " +
                          std::to_string(expected_count * sizeof(float)) + " bytes, found " +
                          std::to_string(bytes));
    in.seekg(0);
    std::vector<float> values(expected_count);
    in.read(reinterpret_cast<char*>(values.data()), std::streamsize(bytes));
    if (!in) throw FormatError("short read from " + path.string());
    return values;
}

void write_f32_payload(const fs::path& path, std::span<const float> values) {
    atomic_write_bytes(path, values.data(), values.size() * sizeof(float));
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fnv1a_hex(const void* data, std::size_t n) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(data, n)));
    return std::string(buf);
}

std::string hash_file(const fs::path& path) {
    const std::string bytes = read_text_file(path);
    return fnv1a_hex(bytes.data(), bytes.size());
}

}  // namespace isorec
