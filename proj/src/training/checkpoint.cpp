#include "gec/training/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>

#include "gec/common/errors.hpp"
#include "gec/common/rng.hpp"
#include "json.hpp"

namespace gec::training {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kMagic = "gec-checkpoint 1\n";

static_assert(sizeof(float) == 4);

std::uint32_t to_le(std::uint32_t x) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(x);
  return x;
}
std::uint64_t to_le(std::uint64_t x) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(x);
  return x;
}

std::string hex(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

std::uint64_t unhex(const std::string& s) { return std::stoull(s, nullptr, 16); }

void append_floats(std::string& out, const model::Storage<float>& v) {
  const auto base = out.size();
  out.resize(base + v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(v[i]));
    std::memcpy(out.data() + base + i * 4, &bits, 4);
  }
}

std::string payload_bytes(const model::ModelParams& p) {
  std::string out;
  out.reserve(p.numel() * 4);
  for (const auto& t : p) append_floats(out, t.data);
  return out;
}

std::uint64_t hash_bytes(std::string_view s) { return fnv1a(s); }

}  // namespace

std::uint64_t params_hash(const model::ModelParams& params) { return hash_bytes(payload_bytes(params)); }

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  const std::string payload = payload_bytes(ckpt.params);
  nlohmann::json m;
  m["format_version"] = 1;
  m["step"] = ckpt.step;
  m["config"] = ckpt.config;
  m["config_fingerprint"] = hex(ckpt.config.shape_fingerprint());
  m["vocab_fingerprint"] = hex(ckpt.vocab_fingerprint);
  m["payload_bytes"] = payload.size();
  m["payload_hash"] = hex(hash_bytes(payload));
  auto& dir = m["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : ckpt.params) {
    dir.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", offset}});
    offset += t.numel() * 4;
  }
  const std::string manifest = m.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    const std::uint64_t len = to_le(static_cast<std::uint64_t>(manifest.size()));
    out.write(kMagic.data(), static_cast<std::streamsize>(kMagic.size()));
    out.write(reinterpret_cast<const char*>(&len), 8);
    out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.flush();
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto bad = [&](const std::string& why) { return IoError("bad checkpoint " + path.string() + ": " + why); };
  if (data.compare(0, kMagic.size(), kMagic) != 0) throw bad("missing header");
  std::size_t pos = kMagic.size();
  if (data.size() < pos + 8) throw bad("truncated");
  std::uint64_t len;
  std::memcpy(&len, data.data() + pos, 8);
  len = to_le(len);
  pos += 8;
  if (data.size() < pos + len) throw bad("truncated manifest");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(data.substr(pos, len));
  } catch (const nlohmann::json::exception& e) {
    throw bad(e.what());
  }
  pos += len;
  if (m.value("format_version", 0) != 1) throw bad("unsupported format version");
  const std::string_view payload(data.data() + pos, data.size() - pos);
  if (payload.size() != m.at("payload_bytes").get<std::size_t>()) throw bad("payload size mismatch");
  if (hex(hash_bytes(payload)) != m.at("payload_hash").get<std::string>()) throw bad("payload hash mismatch");

  Checkpoint c;
  c.step = m.at("step").get<long>();
  c.config = m.at("config").get<model::ModelConfig>();
  if (hex(c.config.shape_fingerprint()) != m.at("config_fingerprint").get<std::string>())
    throw bad("config fingerprint mismatch");
  c.vocab_fingerprint = unhex(m.at("vocab_fingerprint").get<std::string>());
  for (const auto& e : m.at("tensors")) {
    auto& t = c.params.add(e.at("name").get<std::string>(), e.at("rows").get<Eigen::Index>(),
                           e.at("cols").get<Eigen::Index>());
    const auto off = e.at("offset").get<std::size_t>();
    if (off + t.numel() * 4 > payload.size()) throw bad("tensor " + t.name + " out of range");
    for (std::size_t i = 0; i < t.numel(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, payload.data() + off + i * 4, 4);
      t.data[i] = std::bit_cast<float>(to_le(bits));
    }
  }
  if (!c.params.same_layout(model::make_layout<float>(c.config))) throw bad("tensors do not match the config");
  return c;
}

Checkpoint average_checkpoints(std::span<const Checkpoint> cks) {
  if (cks.empty()) throw ConfigError("average_checkpoints: no checkpoints");
  const auto fp = cks.front().config.shape_fingerprint();
  for (const auto& c : cks)
    if (c.config.shape_fingerprint() != fp || !c.params.same_layout(cks.front().params))
      throw ConfigError("average_checkpoints: checkpoints have different shapes");

  std::vector<std::pair<std::pair<long, std::uint64_t>, const Checkpoint*>> order;
  for (const auto& c : cks) order.push_back({{c.step, params_hash(c.params)}, &c});
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  Checkpoint out;
  out.config = cks.front().config;
  out.vocab_fingerprint = cks.front().vocab_fingerprint;
  out.params = cks.front().params.zeros_like();
  for (const auto& c : cks) out.step = std::max(out.step, c.step);
  const double n = static_cast<double>(cks.size());
  std::vector<double> acc;
  for (std::size_t t = 0; t < out.params.size(); ++t) {
    acc.assign(out.params[t].numel(), 0.0);
    for (const auto& [key, c] : order) {
      const auto& src = c->params[t].data;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
    }
    auto& dst = out.params[t].data;
    for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<float>(acc[i] / n);
  }
  return out;
}

fs::path checkpoint_path(const fs::path& dir, long step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt-%08ld.bin", step);
  return dir / buf;
}

std::vector<fs::path> list_checkpoints(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  static const std::regex re(R"(ckpt-(\d+)\.bin)");
  std::vector<std::pair<long, fs::path>> found;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch mt;
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && std::regex_match(name, mt, re)) found.emplace_back(std::stol(mt[1]), e.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& f : found) out.push_back(std::move(f.second));
  return out;
}

}  // namespace gec::training
