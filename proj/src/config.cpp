#include "glyphspot/config.hpp"

#include <cstdio>
#include <fstream>

namespace glyphspot {

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot read config '" + file.string() + "'");
  RunConfig cfg;
  try {
    cfg = json::parse(in).get<RunConfig>();
  } catch (const json::exception& e) {
    throw DataError("config '" + file.string() + "': " + e.what());
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

std::string config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace glyphspot
