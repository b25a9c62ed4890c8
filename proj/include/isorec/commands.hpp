#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "isorec/io_util.hpp"

namespace isorec {

// Command-line overrides; take precedence over the config file.
struct CliOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

// Each command reads one JSON config with full defaulting, writes its
// artifacts plus a manifest (resolved config, input/output hashes), and
// returns a process exit code: 0 ok, 1 usage/config, 2 runtime/numerical.
int cmd_simulate(const std::filesystem::path& config_path, const CliOverrides& ovr = {});
int cmd_train_prior(const std::filesystem::path& config_path, const CliOverrides& ovr = {});
int cmd_reconstruct(const std::filesystem::path& config_path, const CliOverrides& ovr = {});
int cmd_evaluate(const std::filesystem::path& recon_path, const std::filesystem::path& gt_path,
                 const std::filesystem::path& out_dir);
int cmd_sample_prior(const std::filesystem::path& checkpoint, int n, std::uint64_t seed,
                     const std::filesystem::path& out_dir, int height = 32, int width = 32);

}  // namespace isorec
