#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "isorec/common.hpp"

namespace isorec {

using json = nlohmann::json;

std::string read_text_file(const std::filesystem::path& path);
json read_json_file(const std::filesystem::path& path);

// All writes go through a temp file + rename so readers never observe a
// partially written artifact.
void atomic_write_bytes(const std::filesystem::path& path, const void* data, std::size_t n);
void atomic_write_text(const std::filesystem::path& path, const std::string& text);
void atomic_write_json(const std::filesystem::path& path, const json& j);

std::vector<float> read_f32_payload(const std::filesystem::path& path, std::size_t expected_count);
void write_f32_payload(const std::filesystem::path& path, std::span<const float> values);

// FNV-1a 64-bit, hex-encoded. Integrity fingerprint for manifests and the
// frozen-prior contract; not cryptographic.
std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string fnv1a_hex(const void* data, std::size_t n);
std::string hash_file(const std::filesystem::path& path);

}  // namespace isorec
