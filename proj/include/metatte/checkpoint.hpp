#pragma once

// Model checkpoints in the MTTE container. The manifest records the model and
// training configuration, every task's scaler statistics and an ordered list of
// tensor descriptors; the payload holds the tensors back to back.

#include <map>
#include <string>

#include "metatte/container.hpp"
#include "metatte/model.hpp"
#include "metatte/train_config.hpp"
#include "metatte/trajectory.hpp"

namespace metatte {

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  std::map<std::string, Scaler> scalers;
  ParameterStore params;
  nlohmann::json extra = nlohmann::json::object();
};

inline nlohmann::json model_config_to_json(const ModelConfig& m) {
  return {{"embed_dim", m.embed_dim},
          {"rnn_units", m.rnn_units},
          {"cell", cell_name(m.cell)},
          {"variant", variant_name(m.variant)},
          {"decoder_widths", m.decoder_widths}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.embed_dim = j.at("embed_dim").get<std::size_t>();
  m.rnn_units = j.at("rnn_units").get<std::size_t>();
  m.cell = parse_cell(j.at("cell").get<std::string>());
  m.variant = parse_variant(j.at("variant").get<std::string>());
  m.decoder_widths = j.at("decoder_widths").get<std::vector<std::size_t>>();
  return m;
}

inline nlohmann::json train_config_to_json(const TrainConfig& t) {
  return {{"k", t.k},         {"batch_size", t.batch_size}, {"beta", t.beta},
          {"eta", t.eta},     {"seed", t.seed},             {"eval_every", t.eval_every},
          {"lr", t.adam.lr}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.k = j.at("k").get<std::size_t>();
  t.batch_size = j.at("batch_size").get<std::size_t>();
  t.beta = j.at("beta").get<double>();
  t.eta = j.at("eta").get<std::size_t>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.eval_every = j.at("eval_every").get<std::size_t>();
  t.adam.lr = j.at("lr").get<double>();
  return t;
}

inline nlohmann::json scaler_to_json(const Scaler& s) {
  return {{"dlat_mean", s.dlat_mean},   {"dlat_std", s.dlat_std},     {"dlon_mean", s.dlon_mean},
          {"dlon_std", s.dlon_std},     {"label_mean", s.label_mean}, {"label_std", s.label_std}};
}

inline Scaler scaler_from_json(const nlohmann::json& j) {
  return Scaler{j.at("dlat_mean").get<double>(), j.at("dlat_std").get<double>(),
                j.at("dlon_mean").get<double>(), j.at("dlon_std").get<double>(),
                j.at("label_mean").get<double>(), j.at("label_std").get<double>()};
}

inline Container encode_checkpoint(const Checkpoint& ck) {
  Container c;
  auto& mf = c.manifest;
  mf["kind"] = "checkpoint";
  mf["model"] = model_config_to_json(ck.model);
  mf["train"] = train_config_to_json(ck.train);
  mf["scalers"] = nlohmann::json::object();
  for (const auto& [id, s] : ck.scalers) mf["scalers"][id] = scaler_to_json(s);
  mf["tensors"] = nlohmann::json::array();
  for (const auto& e : ck.params.entries()) {
    mf["tensors"].push_back({{"name", e.name}, {"shape", e.value.shape()}, {"offset", c.payload.size()}});
    c.payload.insert(c.payload.end(), e.value.vec().begin(), e.value.vec().end());
  }
  mf["extra"] = ck.extra;
  return c;
}

inline Checkpoint decode_checkpoint(const Container& c) {
  const auto& mf = c.manifest;
  if (mf.value("kind", "") != "checkpoint") throw FormatError("container is not a checkpoint");
  try {
    Checkpoint ck;
    ck.model = model_config_from_json(mf.at("model"));
    ck.train = train_config_from_json(mf.at("train"));
    for (const auto& [id, s] : mf.at("scalers").items()) ck.scalers[id] = scaler_from_json(s);
    for (const auto& t : mf.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto shape = t.at("shape").get<Shape>();
      const auto off = t.at("offset").get<std::size_t>();
      const std::size_t n = shape_size(shape);
      if (off + n > c.payload.size()) throw FormatError("tensor '" + name + "' exceeds checkpoint payload");
      ck.params.add(name, Tensor(shape, std::vector<double>(c.payload.begin() + static_cast<std::ptrdiff_t>(off),
                                                            c.payload.begin() + static_cast<std::ptrdiff_t>(off + n))));
    }
    if (mf.contains("extra")) ck.extra = mf.at("extra");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid configuration: ") + e.what());
  }
}

inline void checkpoint_save(const std::string& path, const Checkpoint& ck) {
  save_container(path, encode_checkpoint(ck));
}

inline Checkpoint checkpoint_load(const std::string& path) { return decode_checkpoint(load_container(path)); }

}  // namespace metatte
