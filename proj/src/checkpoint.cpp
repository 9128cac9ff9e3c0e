#include "npgrow/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "npgrow/config_json.hpp"

namespace npgrow {

using nlohmann::json;

namespace {

constexpr char kMagic[9] = "NPGCKPT1";
constexpr uint32_t kVersion = 1;

void write_tensor(std::ofstream& os, const Tensor& t) {
  os.write(reinterpret_cast<const char*>(t.data()),
           static_cast<std::streamsize>(sizeof(double) * t.size()));
}

Tensor read_tensor(std::ifstream& is, Shape shape) {
  Tensor t(std::move(shape));
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(sizeof(double) * t.size()));
  if (!is) throw std::runtime_error("checkpoint truncated while reading tensors");
  return t;
}

}  // namespace

Checkpoint make_checkpoint(const GrowthModel& model, const TrainConfig& tc,
                           const LossConfig& lc, const AdamState& adam, int completed_epochs,
                           const std::array<uint64_t, 4>& rng_state) {
  Checkpoint ckpt;
  ckpt.model_config = model.config();
  ckpt.train_config = tc;
  ckpt.loss_config = lc;
  ckpt.completed_epochs = completed_epochs;
  ckpt.step = adam.t;
  ckpt.rng_state = rng_state;
  for (const auto& e : model.params().entries) ckpt.params.add(e.name, e.value.clone());
  if (!adam.empty()) {
    ckpt.has_adam = true;
    ckpt.adam.t = adam.t;
    for (const auto& m : adam.m) ckpt.adam.m.push_back(m.clone());
    for (const auto& v : adam.v) ckpt.adam.v.push_back(v.clone());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json header;
  header["version"] = kVersion;
  header["model_config"] = to_json(ckpt.model_config);
  header["train_config"] = to_json(ckpt.train_config);
  header["loss_config"] = to_json(ckpt.loss_config);
  header["completed_epochs"] = ckpt.completed_epochs;
  header["step"] = ckpt.step;
  header["rng_state"] = ckpt.rng_state;
  header["has_adam"] = ckpt.has_adam;
  json params = json::array();
  for (const auto& e : ckpt.params.entries)
    params.push_back(json{{"name", e.name}, {"shape", e.value.shape()}});
  header["params"] = params;
  const std::string header_str = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kMagic, 8);
  const uint64_t hlen = header_str.size();
  os.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& e : ckpt.params.entries) write_tensor(os, e.value);
  if (ckpt.has_adam) {
    for (const auto& m : ckpt.adam.m) write_tensor(os, m);
    for (const auto& v : ckpt.adam.v) write_tensor(os, v);
  }
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path + ": not an npgrow checkpoint");
  uint64_t hlen = 0;
  is.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header_str(hlen, '\0');
  is.read(header_str.data(), static_cast<std::streamsize>(hlen));
  if (!is) throw std::runtime_error(path + ": truncated checkpoint header");

  json header;
  try {
    header = json::parse(header_str);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": corrupt checkpoint header: " + e.what());
  }
  if (header.at("version").get<uint32_t>() != kVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(header.at("version").get<uint32_t>()));

  Checkpoint ckpt;
  ckpt.model_config = model_config_from_json(header.at("model_config"));
  ckpt.train_config = train_config_from_json(header.at("train_config"));
  ckpt.loss_config = loss_config_from_json(header.at("loss_config"));
  ckpt.completed_epochs = header.at("completed_epochs").get<int>();
  ckpt.step = header.at("step").get<int64_t>();
  const auto rs = header.at("rng_state").get<std::vector<uint64_t>>();
  if (rs.size() != 4) throw std::runtime_error(path + ": bad rng state");
  std::copy(rs.begin(), rs.end(), ckpt.rng_state.begin());
  ckpt.has_adam = header.at("has_adam").get<bool>();

  for (const auto& p : header.at("params")) {
    const auto name = p.at("name").get<std::string>();
    const auto shape = p.at("shape").get<Shape>();
    ckpt.params.add(name, read_tensor(is, shape));
  }
  if (ckpt.has_adam) {
    ckpt.adam.t = ckpt.step;
    for (const auto& e : ckpt.params.entries)
      ckpt.adam.m.push_back(read_tensor(is, e.value.shape()));
    for (const auto& e : ckpt.params.entries)
      ckpt.adam.v.push_back(read_tensor(is, e.value.shape()));
  }
  return ckpt;
}

GrowthModel restore_model(const Checkpoint& ckpt) {
  GrowthModel model(ckpt.model_config);
  load_parameters(model, ckpt);
  return model;
}

void load_parameters(GrowthModel& model, const Checkpoint& ckpt) {
  if (model.config() != ckpt.model_config)
    throw std::runtime_error("checkpoint was written for a different model configuration");
  ParamStore& ps = model.params();
  if (ps.size() != ckpt.params.size())
    throw std::runtime_error("checkpoint parameter count mismatch");
  for (const auto& e : ckpt.params.entries) {
    const int idx = ps.index_of(e.name);
    if (idx < 0) throw std::runtime_error("checkpoint has unknown parameter '" + e.name + "'");
    Tensor& dst = ps.value(idx);
    if (!dst.same_shape(e.value))
      throw std::runtime_error("checkpoint parameter '" + e.name + "' has shape " +
                               shape_str(e.value.shape()) + ", expected " +
                               shape_str(dst.shape()));
    dst = e.value.clone();
  }
}

}  // namespace npgrow
