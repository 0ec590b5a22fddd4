#pragma once

#include <cmath>
#include <memory>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "rfn/diffcore/checkpoint.hpp"
#include "rfn/diffcore/optim.hpp"
#include "rfn/geodata/dataset.hpp"
#include "rfn/models/model.hpp"

namespace rfn::models {

struct TrainOptions {
  double learning_rate = 0.003;
  double plateau_factor = 0.1;
  long plateau_patience = 100;
  std::size_t max_epochs = 500;
  std::size_t early_stopping_patience = 200;
  std::size_t window = 0;  // steps per window; 0 = the whole training split
  double clip_norm = 0.0;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const TrainOptions& o) {
  return {{"learning_rate", o.learning_rate},
          {"plateau_factor", o.plateau_factor},
          {"plateau_patience", o.plateau_patience},
          {"max_epochs", o.max_epochs},
          {"early_stopping_patience", o.early_stopping_patience},
          {"window", o.window},
          {"clip_norm", o.clip_norm},
          {"seed", o.seed}};
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_objective = 0.0;
  double train_kl = 0.0;
  double val_objective = 0.0;
  double beta = 0.0;
  double lr = 0.0;

  nlohmann::json to_json() const {
    return {{"epoch", epoch},
            {"train_objective", train_objective},
            {"train_kl", train_kl},
            {"val_objective", val_objective},
            {"beta", beta},
            {"lr", lr}};
  }
};

struct TrainResult {
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  std::size_t epochs_run = 0;
  bool diverged = false;
  std::string stop_reason;
  diff::Checkpoint checkpoint;  // best parameters
};

// Linear KL annealing over 0-based epochs: beta = min(1, epoch / anneal).
inline double anneal_beta(std::size_t epoch, std::size_t anneal_epochs) {
  if (anneal_epochs == 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(anneal_epochs));
}

// Validation objective: ELBO at beta = 1 on the validation split after
// filtering the training split, with fixed noise so epochs are comparable.
inline double validation_objective(const SequenceModel& m, const geo::Dataset& ds,
                                   std::uint64_t seed) {
  Rng rng(derive_seed(seed, "train.validation"));
  const StateValues prefix = filter_states(m, ds.sequence, {0, ds.split.val.begin}, nullptr, 1, rng);
  return evaluate_elbo(m, ds.sequence, ds.split.val, &prefix, 1.0, rng).objective;
}

inline nlohmann::json checkpoint_metadata(const SequenceModel& m, const TrainOptions& opt,
                                          const TrainResult& r) {
  return {{"model", to_json(m.config())},
          {"model_id", m.config().model_id()},
          {"training", to_json(opt)},
          {"best_epoch", r.best_epoch},
          {"best_val_objective", std::isfinite(r.best_val) ? nlohmann::json(r.best_val) : nlohmann::json()},
          {"epochs_run", r.epochs_run},
          {"stop_reason", r.stop_reason}};
}

// Maximizes the step-wise ELBO: per epoch, windows of the training split are
// visited in order with the recurrent state carried across windows, each
// followed by one Adam step on -objective / points. The validation objective
// drives the plateau schedule, best-model selection and (once annealing is
// complete) early stopping. A non-finite objective or gradient stops training
// and keeps the best parameters seen so far.
inline TrainResult train(SequenceModel& m, const geo::Dataset& ds, const TrainOptions& opt,
                         std::ostream* log = nullptr) {
  const auto& seq = ds.sequence;
  if (ds.split.train.size() == 0 || ds.split.val.size() == 0) {
    throw DataError("train: dataset needs non-empty train and validation splits");
  }
  check_sequence(m, seq, ds.split.val);
  if (opt.max_epochs == 0) throw UsageError("training.max_epochs must be positive");
  if (!(opt.learning_rate >= 0.0)) throw UsageError("training.lr must be non-negative");

  ParameterSet& ps = m.parameters();
  diff::AdamState adam;
  adam.learning_rate = opt.learning_rate;
  adam.clip_norm = opt.clip_norm;
  diff::PlateauSchedule sched;
  sched.patience = opt.plateau_patience;
  sched.factor = opt.plateau_factor;

  TrainResult result;
  diff::Snapshot best = ps.snapshot();
  std::size_t since_best = 0;
  const std::size_t anneal = m.config().kl_anneal_epochs;
  const IndexRange train_range = ds.split.train;
  const std::size_t window = opt.window == 0 ? train_range.size() : opt.window;

  for (std::size_t epoch = 0; epoch < opt.max_epochs; ++epoch) {
    const double beta = anneal_beta(epoch, anneal);
    Rng rng(derive_seed(opt.seed, "train.noise", epoch));
    const diff::Snapshot before_epoch = ps.snapshot();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.beta = beta;
    rec.lr = adam.learning_rate;
    bool finite = true;
    try {
      std::optional<StateValues> carry;
      for (std::size_t b = train_range.begin; b < train_range.end; b += window) {
        const IndexRange r{b, std::min(train_range.end, b + window)};
        Tape t(true);
        ps.zero_grad();
        WindowPass pass = elbo_window(t, m, seq, r, carry ? &*carry : nullptr, beta, rng,
                                      FlowMode::training);
        rec.train_objective += pass.report.objective;
        rec.train_kl += pass.report.total_kl();
        if (!std::isfinite(pass.report.objective)) {
          finite = false;
          break;
        }
        const double scale = -1.0 / static_cast<double>(std::max<std::size_t>(1, pass.report.points));
        t.backward(pass.objective, RealArray::scalar(scale));
        ps.for_each([&](diff::Parameter& p) {
          if (p.trainable && !p.gradient.all_finite()) finite = false;
        });
        if (!finite) break;
        diff::adam_step(ps, adam);
        carry = pass.final_state;
      }
      if (finite) rec.val_objective = validation_objective(m, ds, opt.seed);
      if (!std::isfinite(rec.val_objective)) finite = false;
    } catch (const DomainError&) {
      finite = false;
    }
    if (!finite) {
      result.diverged = true;
      result.stop_reason = "diverged at epoch " + std::to_string(epoch);
      if (result.log.empty()) ps.restore(before_epoch);
      break;
    }

    diff::plateau_update(sched, rec.val_objective, adam.learning_rate);
    if (rec.val_objective > result.best_val) {
      result.best_val = rec.val_objective;
      result.best_epoch = epoch;
      best = ps.snapshot();
      since_best = 0;
    } else if (beta >= 1.0) {
      ++since_best;
    }
    result.log.push_back(rec);
    result.epochs_run = epoch + 1;
    if (log) *log << rec.to_json().dump() << '\n' << std::flush;
    if (beta >= 1.0 && since_best >= opt.early_stopping_patience) {
      result.stop_reason = "early stopping at epoch " + std::to_string(epoch);
      break;
    }
  }
  if (result.stop_reason.empty()) result.stop_reason = "max epochs";
  if (!result.log.empty()) ps.restore(best);
  result.checkpoint = diff::make_checkpoint(ps, adam, sched, checkpoint_metadata(m, opt, result));
  return result;
}

// Rebuilds a model from a checkpoint written by train().
inline std::unique_ptr<SequenceModel> model_from_checkpoint(const diff::Checkpoint& c) {
  if (!c.metadata.contains("model")) throw DataError("checkpoint has no model configuration");
  auto m = std::make_unique<SequenceModel>(model_config_from_json(c.metadata.at("model")));
  m->parameters().restore(c.values);
  return m;
}

}  // namespace rfn::models
