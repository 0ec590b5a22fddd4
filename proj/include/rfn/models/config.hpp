#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "rfn/flows/flow.hpp"

namespace rfn::models {

enum class Transition { deterministic, stochastic };
enum class Emission { flow, mdn_diag, mdn_full };

inline std::string to_string(Transition t) {
  return t == Transition::stochastic ? "stochastic" : "deterministic";
}

inline std::string to_string(Emission e) {
  switch (e) {
    case Emission::mdn_diag: return "mdn-diag";
    case Emission::mdn_full: return "mdn-full";
    case Emission::flow: break;
  }
  return "flow";
}

inline Transition transition_from_string(const std::string& s) {
  if (s == "stochastic") return Transition::stochastic;
  if (s == "deterministic") return Transition::deterministic;
  throw UsageError("unknown transition '" + s + "' (expected deterministic or stochastic)");
}

inline Emission emission_from_string(const std::string& s) {
  if (s == "flow") return Emission::flow;
  if (s == "mdn-diag") return Emission::mdn_diag;
  if (s == "mdn-full") return Emission::mdn_full;
  throw UsageError("unknown emission '" + s + "' (expected flow, mdn-diag or mdn-full)");
}

// Architecture of one sequence model. (stochastic, flow) is the RFN,
// (deterministic, flow) the RNN-Flow, (stochastic, mdn-*) the SRNN-MDN and
// (deterministic, mdn-*) the RNN-MDN.
struct ModelConfig {
  Transition transition = Transition::stochastic;
  Emission emission = Emission::flow;
  std::size_t mixture_count = 0;  // 0 = 50 for mdn-diag, 30 for mdn-full
  std::size_t k = 64;             // input frame side
  std::size_t feature_width = 128;
  std::size_t feature_layers = 3;
  std::size_t lstm_width = 128;
  std::size_t latent_width = 128;
  std::size_t latent_hidden = 128;  // hidden width of prior and encoder networks
  std::size_t emission_hidden = 128;
  std::size_t emission_layers = 2;
  std::size_t flow_depth = 35;
  double flow_clamp = 5.0;
  double flow_epsilon = 1e-5;
  double flow_momentum = 0.1;
  std::size_t kl_anneal_epochs = 100;
  std::uint64_t seed = 0;

  bool stochastic() const { return transition == Transition::stochastic; }

  std::size_t mixtures() const {
    if (mixture_count > 0) return mixture_count;
    return emission == Emission::mdn_full ? 30 : 50;
  }

  std::size_t context_width() const {
    return lstm_width + (stochastic() ? latent_width : 0);
  }

  std::string model_id() const {
    const bool flow = emission == Emission::flow;
    std::string id = stochastic() ? (flow ? "rfn" : "srnn") : "rnn";
    if (flow) return stochastic() ? id : id + "-flow";
    return id + "-" + to_string(emission);
  }

  flows::FlowConfig flow_config() const {
    flows::FlowConfig f;
    f.depth = flow_depth;
    f.hidden = emission_hidden;
    f.hidden_layers = emission_layers;
    f.clamp = flow_clamp;
    f.epsilon = flow_epsilon;
    f.momentum = flow_momentum;
    return f;
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw UsageError(std::string("model.") + name + " must be positive");
    };
    positive(feature_width, "feature_width");
    positive(feature_layers, "feature_layers");
    positive(lstm_width, "lstm_width");
    positive(emission_hidden, "emission_hidden");
    positive(kl_anneal_epochs, "kl_anneal_epochs");
    if (stochastic()) {
      positive(latent_width, "latent_width");
      positive(latent_hidden, "latent_hidden");
    }
    if (emission == Emission::flow) positive(flow_depth, "flow_depth");
    if (k < 2) throw UsageError("model.k must be at least 2");
    if (!(flow_clamp > 0.0)) throw UsageError("model.flow_clamp must be positive");
    if (!(flow_epsilon > 0.0)) throw UsageError("model.flow_epsilon must be positive");
    if (!(flow_momentum > 0.0 && flow_momentum < 1.0)) {
      throw UsageError("model.flow_momentum must lie in (0, 1)");
    }
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"transition", to_string(c.transition)},
          {"emission", to_string(c.emission)},
          {"mixture_count", c.mixture_count},
          {"k", c.k},
          {"feature_width", c.feature_width},
          {"feature_layers", c.feature_layers},
          {"lstm_width", c.lstm_width},
          {"latent_width", c.latent_width},
          {"latent_hidden", c.latent_hidden},
          {"emission_hidden", c.emission_hidden},
          {"emission_layers", c.emission_layers},
          {"flow_depth", c.flow_depth},
          {"flow_clamp", c.flow_clamp},
          {"flow_epsilon", c.flow_epsilon},
          {"flow_momentum", c.flow_momentum},
          {"kl_anneal_epochs", c.kl_anneal_epochs},
          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.transition = transition_from_string(j.value("transition", to_string(c.transition)));
  c.emission = emission_from_string(j.value("emission", to_string(c.emission)));
  c.mixture_count = j.value("mixture_count", c.mixture_count);
  c.k = j.value("k", c.k);
  c.feature_width = j.value("feature_width", c.feature_width);
  c.feature_layers = j.value("feature_layers", c.feature_layers);
  c.lstm_width = j.value("lstm_width", c.lstm_width);
  c.latent_width = j.value("latent_width", c.latent_width);
  c.latent_hidden = j.value("latent_hidden", c.latent_hidden);
  c.emission_hidden = j.value("emission_hidden", c.emission_hidden);
  c.emission_layers = j.value("emission_layers", c.emission_layers);
  c.flow_depth = j.value("flow_depth", c.flow_depth);
  c.flow_clamp = j.value("flow_clamp", c.flow_clamp);
  c.flow_epsilon = j.value("flow_epsilon", c.flow_epsilon);
  c.flow_momentum = j.value("flow_momentum", c.flow_momentum);
  c.kl_anneal_epochs = j.value("kl_anneal_epochs", c.kl_anneal_epochs);
  c.seed = j.value("seed", c.seed);
  return c;
}

}  // namespace rfn::models
