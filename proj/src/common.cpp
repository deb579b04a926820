#include "rtc/common.h"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>

namespace rtc {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t derive_seed(uint64_t root, const std::string& label, uint64_t a, uint64_t b) {
  uint64_t h = fnv1a64(label.data(), label.size(), 0xcbf29ce484222325ULL ^ root);
  h = splitmix64(h ^ splitmix64(a));
  h = splitmix64(h ^ splitmix64(b ^ 0x5851f42d4c957f2dULL));
  return h;
}

uint64_t fnv1a64(const void* data, size_t nbytes, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < nbytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

LogLevel log_level() {
  static LogLevel lvl = [] {
    const char* env = std::getenv("RTC_LOG_LEVEL");
    if (!env) return LogLevel::Warn;
    std::string s(env);
    if (s == "error") return LogLevel::Error;
    if (s == "warn") return LogLevel::Warn;
    if (s == "info") return LogLevel::Info;
    if (s == "debug") return LogLevel::Debug;
    return LogLevel::Warn;
  }();
  return lvl;
}

void log_msg(LogLevel lvl, const std::string& msg) {
  static std::mutex mu;
  if (lvl > log_level()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::lock_guard<std::mutex> lock(mu);
  std::fprintf(stderr, "[rtc:%s] %s\n", names[static_cast<int>(lvl)], msg.c_str());
}

void expect_keys(const json& obj, const std::string& where,
                 std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) {
    throw ConfigError(where + ": expected a JSON object");
  }
  std::vector<std::string> unknown;
  for (const auto& item : obj.items()) {
    bool found = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        found = true;
        break;
      }
    }
    if (!found) unknown.push_back(item.key());
  }
  if (!unknown.empty()) {
    std::ostringstream os;
    os << where << ": unknown key";
    if (unknown.size() > 1) os << "s";
    for (const auto& k : unknown) os << " '" << k << "'";
    throw ConfigError(os.str());
  }
}

void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("short write: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + tmp + " -> " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace rtc
