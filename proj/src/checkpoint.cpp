#include "glyphspot/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "glyphspot/config.hpp"

namespace glyphspot {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  Reader(const std::string& s, std::size_t end) : s_(s), end_(end) {}
  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, s_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string r = s_.substr(pos_, n);
    pos_ += n;
    return r;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw DataError("checkpoint: truncated payload");
  }
  const std::string& s_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::string& s, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(n)));
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out = "GSLT";
  put<std::uint16_t>(out, kCheckpointVersion);
  const std::string cfg = ckpt.config.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  for (const auto& p : ckpt.params) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(p.value.rank()));
    for (int d : p.value.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (float v : p.value.values()) put<float>(out, v);
  }
  put<std::uint32_t>(out, crc_of(out, out.size()));
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 14 || bytes.compare(0, 4, "GSLT") != 0) throw DataError("checkpoint: bad magic");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (stored != crc_of(bytes, body)) throw DataError("checkpoint: CRC mismatch");
  Reader r(bytes, body);
  r.bytes(4);
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  const auto cfg_len = r.get<std::uint32_t>();
  try {
    ck.config = nlohmann::json::parse(r.bytes(cfg_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad config JSON: ") + e.what());
  }
  while (!r.done()) {
    const auto name_len = r.get<std::uint16_t>();
    std::string name = r.bytes(name_len);
    const auto rank = r.get<std::uint8_t>();
    if (rank > 4) throw DataError("checkpoint: rank " + std::to_string(rank) + " for '" + name + "'");
    std::vector<int> shape;
    std::size_t count = 1;
    for (int i = 0; i < rank; ++i) {
      shape.push_back(static_cast<int>(r.get<std::uint32_t>()));
      count *= static_cast<std::size_t>(shape.back());
    }
    std::vector<float> values(count);
    for (auto& v : values) v = r.get<float>();
    ck.params.add(name, Tensor<float>(std::move(shape), std::move(values)));
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + file.string() + "'");
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint '" + file.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint make_checkpoint(const Detector<float>& model, const nlohmann::json& metadata) {
  Checkpoint ck;
  ck.config = metadata.is_object() ? metadata : nlohmann::json::object();
  ck.config["model"] = model.config();
  ck.params = model.parameters();
  return ck;
}

Detector<float> detector_from_checkpoint(const Checkpoint& ckpt) {
  if (!ckpt.config.contains("model")) throw DataError("checkpoint: config has no model section");
  ModelConfig cfg;
  try {
    cfg = ckpt.config.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad model config: ") + e.what());
  }
  try {
    return Detector<float>(cfg, ckpt.params);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace glyphspot
