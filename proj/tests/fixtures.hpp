#pragma once

// Small models and synthetic datasets shared by the model-level tests.

#include "rfn/models/train.hpp"
#include "rfn/synthgen/oracle.hpp"

namespace rfn::test {

inline models::ModelConfig tiny_config(models::Transition tr, models::Emission em,
                                       std::uint64_t seed = 1) {
  models::ModelConfig c;
  c.transition = tr;
  c.emission = em;
  c.mixture_count = 3;
  c.k = 4;
  c.feature_width = 6;
  c.feature_layers = 2;
  c.lstm_width = 5;
  c.latent_width = 3;
  c.latent_hidden = 6;
  c.emission_hidden = 6;
  c.emission_layers = 1;
  c.flow_depth = 2;
  c.kl_anneal_epochs = 4;
  c.seed = seed;
  return c;
}

inline std::vector<models::ModelConfig> all_variants(std::uint64_t seed = 1) {
  using models::Emission;
  using models::Transition;
  return {tiny_config(Transition::stochastic, Emission::flow, seed),
          tiny_config(Transition::deterministic, Emission::flow, seed),
          tiny_config(Transition::stochastic, Emission::mdn_diag, seed),
          tiny_config(Transition::deterministic, Emission::mdn_full, seed)};
}

inline geo::Dataset tiny_dataset(std::size_t bins = 12, double points_per_bin = 8.0,
                                 std::uint64_t seed = 3, std::size_t k = 4) {
  const auto process = synth::two_regime_crescent_process(seed, points_per_bin);
  return synth::to_dataset(process, synth::generate(process, bins), k, geo::SplitConfig{});
}

}  // namespace rfn::test
