#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "rfn/diffcore/ops.hpp"
#include "rfn/random.hpp"

namespace rfn::nn {

using diff::Parameter;
using diff::ParameterSet;
using diff::RealArray;
using diff::Tape;
using diff::Var;

enum class Activation { identity, relu, tanh };

inline Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::relu: return diff::relu(x);
    case Activation::tanh: return diff::tanh(x);
    case Activation::identity: break;
  }
  return x;
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "identity" || s == "linear") return Activation::identity;
  throw UsageError("unknown activation '" + s + "' (expected relu, tanh or identity)");
}

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::identity: break;
  }
  return "identity";
}

// Fan-in uniform initialization U(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
inline RealArray fan_in_uniform(Rng& rng, std::size_t in, std::size_t rows, std::size_t cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(in, 1)));
  return uniform_array(rng, rows, cols, -bound, bound);
}

using RowIndex = std::vector<std::size_t>;

// A conditioning block whose rows may be expanded to one row per point:
// row r of the expanded block is row rows[r] of `value`. Dense maps project
// the compact block first and expand afterwards.
struct Context {
  Var value;
  std::shared_ptr<const RowIndex> rows;

  Context() = default;
  Context(Var v) : value(v) {}
  Context(Var v, std::shared_ptr<const RowIndex> r) : value(v), rows(std::move(r)) {}

  std::size_t cols() const { return value.cols(); }
  Var expanded() const { return rows ? diff::gather_rows(value, *rows) : value; }
  Var expand(Var per_group) const { return rows ? diff::gather_rows(per_group, *rows) : per_group; }
};

// y = x W + b. The input may be given as several column blocks whose row
// counts are either N or 1; this equals the dense map applied to their
// (broadcast) concatenation without materializing it.
class Dense {
 public:
  Dense() = default;
  Dense(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : in_(in), out_(out) {
    weight_ = &ps.add(name + ".weight", fan_in_uniform(rng, in, in, out));
    bias_ = &ps.add(name + ".bias", fan_in_uniform(rng, in, 1, out));
  }

  std::size_t in_width() const { return in_; }
  std::size_t out_width() const { return out_; }
  Parameter& weight() const { return *weight_; }
  Parameter& bias() const { return *bias_; }

  Var forward(Tape& t, Var x) const { return forward(t, std::vector<Var>{x}); }

  Var forward(Tape& t, const std::vector<Var>& parts) const {
    return forward_parts(t, std::vector<Context>(parts.begin(), parts.end()));
  }

  Var forward_parts(Tape& t, const std::vector<Context>& parts) const {
    std::size_t width = 0;
    for (const Context& p : parts) width += p.cols();
    if (width != in_) {
      throw UsageError(weight_->id + ": input width " + std::to_string(width) +
                       " does not match layer width " + std::to_string(in_));
    }
    Var w = t.param(*weight_);
    Var acc;
    std::size_t off = 0;
    for (const Context& p : parts) {
      Var wp = parts.size() == 1 ? w : diff::slice_rows(w, off, off + p.cols());
      Var term = p.expand(diff::matmul(p.value, wp));
      acc = acc.valid() ? diff::add(acc, term) : term;
      off += p.cols();
    }
    return diff::add(acc, t.param(*bias_));
  }

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
};

// Stack of dense layers; `hidden` activation between layers, identity (or
// `output`) after the last.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet& ps, const std::string& name, std::size_t in,
      const std::vector<std::size_t>& hidden_widths, std::size_t out, Activation hidden,
      Rng& rng, Activation output = Activation::identity)
      : hidden_(hidden), output_(output) {
    std::size_t prev = in;
    for (std::size_t i = 0; i < hidden_widths.size(); ++i) {
      layers_.emplace_back(ps, name + ".l" + std::to_string(i), prev, hidden_widths[i], rng);
      prev = hidden_widths[i];
    }
    if (out > 0) {
      layers_.emplace_back(ps, name + ".l" + std::to_string(hidden_widths.size()), prev, out, rng);
    }
  }

  const std::vector<Dense>& layers() const { return layers_; }
  std::size_t out_width() const { return layers_.empty() ? 0 : layers_.back().out_width(); }

  Var forward(Tape& t, Var x) const { return forward(t, std::vector<Var>{x}); }

  Var forward(Tape& t, const std::vector<Var>& parts) const {
    return forward_parts(t, std::vector<Context>(parts.begin(), parts.end()));
  }

  Var forward_parts(Tape& t, const std::vector<Context>& parts) const {
    Var h = layers_.front().forward_parts(t, parts);
    for (std::size_t i = 1; i < layers_.size(); ++i) {
      h = layers_[i].forward(t, activate(h, hidden_));
    }
    return activate(h, output_);
  }

  // All layers as hidden layers (activation after every layer).
  Var forward_all_hidden(Tape& t, Var x) const {
    Var h = x;
    for (const Dense& l : layers_) h = activate(l.forward(t, h), hidden_);
    return h;
  }

 private:
  std::vector<Dense> layers_;
  Activation hidden_ = Activation::tanh;
  Activation output_ = Activation::identity;
};

}  // namespace rfn::nn
