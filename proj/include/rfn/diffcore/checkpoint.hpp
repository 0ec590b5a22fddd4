#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "rfn/diffcore/optim.hpp"
#include "rfn/diffcore/parameters.hpp"

namespace rfn::diff {

// Self-describing checkpoint: parameter id -> shape -> flat float64 values,
// optimizer and schedule state, and free-form metadata (model config).
// Doubles are written in shortest round-trip form, so save/load is lossless.
struct Checkpoint {
  Snapshot values;
  std::map<std::string, bool> trainable;
  AdamState optimizer;
  PlateauSchedule schedule;
  nlohmann::json metadata = nlohmann::json::object();
};

namespace detail {

inline nlohmann::json array_to_json(const RealArray& a) {
  return {{"shape", a.shape()}, {"values", a.storage()}};
}

inline RealArray array_from_json(const nlohmann::json& j) {
  return RealArray(j.at("shape").get<std::vector<std::size_t>>(),
                   j.at("values").get<std::vector<double>>());
}

}  // namespace detail

inline Checkpoint make_checkpoint(const ParameterSet& params, const AdamState& opt,
                                  const PlateauSchedule& sched, nlohmann::json metadata) {
  Checkpoint c;
  params.for_each([&](const Parameter& p) {
    c.values[p.id] = p.value;
    c.trainable[p.id] = p.trainable;
  });
  c.optimizer = opt;
  c.schedule = sched;
  c.metadata = std::move(metadata);
  return c;
}

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [id, a] : c.values) {
    auto entry = detail::array_to_json(a);
    entry["id"] = id;
    auto it = c.trainable.find(id);
    entry["trainable"] = it == c.trainable.end() ? true : it->second;
    params.push_back(std::move(entry));
  }
  nlohmann::json m1 = nlohmann::json::object(), m2 = nlohmann::json::object();
  for (const auto& [id, a] : c.optimizer.first_moment) m1[id] = detail::array_to_json(a);
  for (const auto& [id, a] : c.optimizer.second_moment) m2[id] = detail::array_to_json(a);
  return {
      {"format", "rfn-checkpoint"},
      {"version", 1},
      {"parameters", std::move(params)},
      {"optimizer",
       {{"step_count", c.optimizer.step_count},
        {"learning_rate", c.optimizer.learning_rate},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"epsilon", c.optimizer.epsilon},
        {"clip_norm", c.optimizer.clip_norm},
        {"first_moment", std::move(m1)},
        {"second_moment", std::move(m2)}}},
      {"schedule",
       {{"patience", c.schedule.patience},
        {"factor", c.schedule.factor},
        {"best_metric", std::isfinite(c.schedule.best_metric)
                            ? nlohmann::json(c.schedule.best_metric)
                            : nlohmann::json(nullptr)},
        {"epochs_since_improvement", c.schedule.epochs_since_improvement}}},
      {"metadata", c.metadata}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != "rfn-checkpoint") {
    throw DataError("not an rfn checkpoint");
  }
  Checkpoint c;
  for (const auto& e : j.at("parameters")) {
    const auto id = e.at("id").get<std::string>();
    c.values[id] = detail::array_from_json(e);
    c.trainable[id] = e.value("trainable", true);
  }
  const auto& o = j.at("optimizer");
  c.optimizer.step_count = o.at("step_count").get<long>();
  c.optimizer.learning_rate = o.at("learning_rate").get<double>();
  c.optimizer.beta1 = o.at("beta1").get<double>();
  c.optimizer.beta2 = o.at("beta2").get<double>();
  c.optimizer.epsilon = o.at("epsilon").get<double>();
  c.optimizer.clip_norm = o.at("clip_norm").get<double>();
  for (const auto& [id, a] : o.at("first_moment").items())
    c.optimizer.first_moment[id] = detail::array_from_json(a);
  for (const auto& [id, a] : o.at("second_moment").items())
    c.optimizer.second_moment[id] = detail::array_from_json(a);
  const auto& s = j.at("schedule");
  c.schedule.patience = s.at("patience").get<long>();
  c.schedule.factor = s.at("factor").get<double>();
  c.schedule.best_metric = s.at("best_metric").is_null()
                               ? -std::numeric_limits<double>::infinity()
                               : s.at("best_metric").get<double>();
  c.schedule.epochs_since_improvement = s.at("epochs_since_improvement").get<long>();
  c.metadata = j.value("metadata", nlohmann::json::object());
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(c).dump(1) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace rfn::diff
