#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace rtc {

using json = nlohmann::json;

// Error categories. ConfigError maps to CLI exit code 2, everything else to 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AnalysisError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingHalt : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64; the base of every derived random stream in the project.
uint64_t splitmix64(uint64_t x);

// Derive an independent stream seed from a root seed and a label plus indices.
// Stateless: the same inputs always yield the same stream.
uint64_t derive_seed(uint64_t root, const std::string& label, uint64_t a = 0, uint64_t b = 0);

// FNV-1a over raw bytes; used for checkpoint group digests.
uint64_t fnv1a64(const void* data, size_t nbytes, uint64_t h = 0xcbf29ce484222325ULL);

std::string hex64(uint64_t v);

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Level comes from RTC_LOG_LEVEL (error|warn|info|debug), default warn.
LogLevel log_level();
void log_msg(LogLevel lvl, const std::string& msg);
inline void log_warn(const std::string& m) { log_msg(LogLevel::Warn, m); }
inline void log_info(const std::string& m) { log_msg(LogLevel::Info, m); }

// Strict-schema helper: throws ConfigError naming any key of `obj` that is
// not in `allowed`. `where` prefixes the message ("loss", "degradation", ...).
void expect_keys(const json& obj, const std::string& where,
                 std::initializer_list<const char*> allowed);

// Atomic file write: write to <path>.tmp then rename.
void write_file_atomic(const std::string& path, const std::string& contents);
std::string read_file(const std::string& path);

}  // namespace rtc
