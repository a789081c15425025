#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "anholo/errors.hpp"

namespace anholo::app {

inline constexpr const char* kToolName = "anholoflow";
inline constexpr const char* kToolVersion = "1.0.0";

// Exit codes of the command line contract.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIntegrity = 4;

// Schema violation, unreadable config or missing input (exit code 2).
struct ConfigError : InvalidArgument {
  using InvalidArgument::InvalidArgument;
};

struct Request {
  std::string command;  // gen-metric, flow, spde, functionals, report
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::vector<std::filesystem::path> runs;  // report inputs given on the command line
};

struct Outcome {
  int exit_code = kExitOk;
  std::filesystem::path dir;  // run directory, empty if none was created
  std::string message;
};

// Validates the config, runs the command and writes the run directory with its manifest.
// Never throws; errors are mapped to exit codes and described in message.
Outcome execute(const Request& req);

// $ANHOLOFLOW_OUT_ROOT if set, else the working directory. Relative --out, output_dir and
// from_run paths are resolved against it.
std::filesystem::path output_root();

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& file);

struct ManifestCheck {
  bool readable = false;  // manifest present and well formed
  bool complete = false;  // status "complete"
  std::string command, status, config_sha256;
  std::uint64_t seed = 0;
  std::vector<std::string> files;     // as listed
  std::vector<std::string> failures;  // missing or mismatching files, or the parse problem
};

// Recomputes every listed checksum.
ManifestCheck verify_run(const std::filesystem::path& dir);

}  // namespace anholo::app
