#include "flowify/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "flowify/data.hpp"
#include "flowify/errors.hpp"

namespace flowify {
namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T get_le(const std::vector<std::uint8_t>& in, std::size_t& pos, const char* what) {
  if (in.size() - pos < sizeof(T)) {
    throw ParseError(std::string("checkpoint truncated while reading ") + what, in.size());
  }
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  T value;
  std::memcpy(&value, raw, sizeof(T));
  pos += sizeof(T);
  return value;
}

void append_block(std::vector<double>& payload, nlohmann::json& records, const std::string& name,
                  const Shape& shape, std::span<const double> values) {
  records.push_back({{"name", name}, {"shape", shape}, {"offset", payload.size()},
                     {"count", values.size()}});
  payload.insert(payload.end(), values.begin(), values.end());
}

std::span<const double> block(const Checkpoint& ckpt, const nlohmann::json& rec) {
  const auto offset = rec.at("offset").get<std::size_t>();
  const auto count = rec.at("count").get<std::size_t>();
  if (offset + count > ckpt.payload.size()) {
    throw ConfigError("checkpoint record " + rec.value("name", std::string("?")) +
                      " points past the payload");
  }
  return {ckpt.payload.data() + offset, count};
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const nlohmann::json& config, const FlowModel& model,
                                            Trainer* trainer) {
  std::vector<double> payload;
  nlohmann::json params = nlohmann::json::array();
  for (const Parameter* p : model.parameters()) {
    append_block(payload, params, p->name, p->value.shape(), p->value.values());
  }
  nlohmann::json manifest = {{"config", config}, {"model", model.describe()}, {"parameters", params}};
  if (trainer) {
    manifest["epoch"] = trainer->epoch();
    manifest["step"] = trainer->global_step();
    Adam& adam = trainer->optimizer();
    nlohmann::json m = nlohmann::json::array(), v = nlohmann::json::array();
    for (std::size_t k = 0; k < adam.params().size(); ++k) {
      const Parameter& p = *adam.params()[k];
      append_block(payload, m, p.name, p.value.shape(), adam.first_moments()[k]);
      append_block(payload, v, p.name, p.value.shape(), adam.second_moments()[k]);
    }
    manifest["optimizer"] = {{"kind", "adam"}, {"steps", adam.steps()}, {"m", m}, {"v", v}};
  }

  const std::string text = manifest.dump();
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + payload.size() * 8);
  for (double d : payload) put_le<double>(out, d);
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw ParseError("not a flowify checkpoint (bad magic)", 0);
  }
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = get_le<std::uint32_t>(bytes, pos, "version");
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), pos - 4);
  }
  const auto len = get_le<std::uint64_t>(bytes, pos, "manifest length");
  if (bytes.size() - pos < len) {
    throw ParseError("checkpoint manifest truncated: expected " + std::to_string(len) +
                         " bytes, got " + std::to_string(bytes.size() - pos),
                     bytes.size());
  }
  Checkpoint ckpt;
  try {
    ckpt.manifest = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                          bytes.begin() + static_cast<std::ptrdiff_t>(pos + len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint manifest is not JSON: ") + e.what(), pos);
  }
  pos += len;
  if ((bytes.size() - pos) % 8 != 0) {
    throw ParseError("checkpoint payload is not a whole number of f64 values", bytes.size());
  }
  ckpt.payload.reserve((bytes.size() - pos) / 8);
  while (pos < bytes.size()) ckpt.payload.push_back(get_le<double>(bytes, pos, "payload"));
  return ckpt;
}

void save_checkpoint(const std::string& path, const nlohmann::json& config, const FlowModel& model,
                     Trainer* trainer) {
  const auto bytes = encode_checkpoint(config, model, trainer);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write checkpoint " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("cannot write checkpoint " + path);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot write checkpoint " + path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

void restore_parameters(const Checkpoint& ckpt, FlowModel& model) {
  const auto& records = ckpt.manifest.at("parameters");
  const auto params = model.parameters();
  if (records.size() != params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(records.size()) +
                      " parameters, model has " + std::to_string(params.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& rec = records[k];
    Parameter& p = *params[k];
    const auto name = rec.at("name").get<std::string>();
    const auto shape = rec.at("shape").get<Shape>();
    if (name != p.name || shape != p.value.shape()) {
      throw ConfigError("checkpoint parameter " + name + " " + shape_string(shape) +
                        " does not match model parameter " + p.name + " " +
                        shape_string(p.value.shape()));
    }
    const auto v = block(ckpt, rec);
    p.value = DiffArray(shape, std::vector<double>(v.begin(), v.end()));
  }
}

void restore_optimizer(const Checkpoint& ckpt, Trainer& trainer) {
  if (!ckpt.has_optimizer()) throw ConfigError("checkpoint has no optimizer state");
  const auto& opt = ckpt.manifest.at("optimizer");
  Adam& adam = trainer.optimizer();
  const auto& m = opt.at("m");
  const auto& v = opt.at("v");
  if (m.size() != adam.params().size() || v.size() != adam.params().size()) {
    throw ConfigError("optimizer state does not match the model");
  }
  for (std::size_t k = 0; k < adam.params().size(); ++k) {
    const auto mb = block(ckpt, m[k]);
    const auto vb = block(ckpt, v[k]);
    if (mb.size() != adam.first_moments()[k].size()) {
      throw ConfigError("optimizer moment size mismatch for " + adam.params()[k]->name);
    }
    adam.first_moments()[k].assign(mb.begin(), mb.end());
    adam.second_moments()[k].assign(vb.begin(), vb.end());
  }
  adam.set_steps(opt.at("steps").get<std::size_t>());
  trainer.restore_progress(ckpt.epoch(), ckpt.step());
}

}  // namespace flowify
