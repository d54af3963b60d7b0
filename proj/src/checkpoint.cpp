#include "dgm/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include <json.hpp>

namespace dgm::app {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  throw FormatError("checkpoint '" + path + "': " + what);
}

json entry_json(const ParamEntry& e) {
  return json{{"name", e.name}, {"shape", e.value.shape()}, {"trainable", e.trainable}};
}

}  // namespace

bool Checkpoint::operator==(const Checkpoint& o) const {
  return config == o.config && data_dim == o.data_dim && params == o.params && state == o.state &&
         rng_state == o.rng_state && eval_rng_state == o.eval_rng_state && step == o.step && epoch == o.epoch;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  json entries = json::array();
  std::string payload;
  auto add = [&](const ParamStore& store, bool is_state) {
    for (const auto& e : store) {
      json j = entry_json(e);
      j["state"] = is_state;
      entries.push_back(std::move(j));
      for (double v : e.value.values()) put_u64(payload, std::bit_cast<std::uint64_t>(v));
    }
  };
  add(c.params, false);
  add(c.state, true);
  const json header{{"format_version", kCheckpointVersion},
                    {"model", c.config.model},
                    {"data_dim", c.data_dim},
                    {"config", json::parse(to_json(c.config))},
                    {"entries", std::move(entries)},
                    {"rng", {{"train", c.rng_state}, {"eval", c.eval_rng_state}}},
                    {"step", c.step},
                    {"epoch", c.epoch}};
  const std::string text = header.dump();
  std::string bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  put_u64(bytes, text.size());
  bytes += text;
  bytes += payload;

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < 16) bad(path, "file is shorter than the 16-byte preamble");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) bad(path, "magic bytes are not DGMCKPT1");
  const std::uint64_t hlen = get_u64(raw + 8);
  if (hlen > bytes.size() - 16) bad(path, "header length exceeds the file size");

  json h;
  try {
    h = json::parse(bytes.substr(16, hlen));
  } catch (const json::parse_error& e) {
    bad(path, std::string("header is not valid JSON: ") + e.what());
  }
  Checkpoint c;
  try {
    if (h.at("format_version").get<int>() != kCheckpointVersion) {
      bad(path, "unsupported format_version " + h["format_version"].dump());
    }
    try {
      c.config = parse_config(h.at("config").dump());
    } catch (const ConfigError& e) {
      bad(path, std::string("embedded config: ") + e.what());
    }
    if (h.at("model").get<std::string>() != c.config.model) bad(path, "model kind disagrees with the config");
    c.data_dim = h.at("data_dim").get<std::size_t>();
    c.rng_state = h.at("rng").at("train").get<std::uint64_t>();
    c.eval_rng_state = h.at("rng").at("eval").get<std::uint64_t>();
    c.step = h.at("step").get<std::size_t>();
    c.epoch = h.at("epoch").get<std::size_t>();

    std::size_t offset = 16 + hlen;
    std::set<std::string> names;
    for (const auto& e : h.at("entries")) {
      const auto name = e.at("name").get<std::string>();
      if (!names.insert(name).second) bad(path, "duplicate entry '" + name + "'");
      const auto shape = e.at("shape").get<Shape>();
      const std::size_t n = shape_numel(shape);
      if (n > (bytes.size() - offset) / 8) bad(path, "payload is truncated at entry '" + name + "'");
      std::vector<double> values(n);
      for (std::size_t i = 0; i < n; ++i, offset += 8) values[i] = std::bit_cast<double>(get_u64(raw + offset));
      auto& store = e.at("state").get<bool>() ? c.state : c.params;
      store.add(name, Tensor(shape, std::move(values)), e.at("trainable").get<bool>());
    }
    if (offset != bytes.size()) {
      bad(path, std::to_string(bytes.size() - offset) + " trailing bytes after the last entry");
    }
  } catch (const json::exception& e) {
    bad(path, std::string("malformed header: ") + e.what());
  }
  return c;
}

}  // namespace dgm::app
