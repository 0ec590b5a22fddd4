#pragma once

#include <string>

#include "rfn/recurrent/layers.hpp"

namespace rfn::nn {

struct LstmState {
  Var h;
  Var c;
};

// Single LSTM layer. Gate layout in the fused pre-activation: input, forget,
// candidate, output.
class Lstm {
 public:
  Lstm() = default;
  Lstm(ParameterSet& ps, const std::string& name, std::size_t input_width, std::size_t width,
       Rng& rng)
      : input_width_(input_width), width_(width) {
    wx_ = &ps.add(name + ".wx", fan_in_uniform(rng, width, input_width, 4 * width));
    wh_ = &ps.add(name + ".wh", fan_in_uniform(rng, width, width, 4 * width));
    b_ = &ps.add(name + ".bias", fan_in_uniform(rng, width, 1, 4 * width));
  }

  std::size_t width() const { return width_; }
  std::size_t input_width() const { return input_width_; }
  Parameter& wx() const { return *wx_; }
  Parameter& wh() const { return *wh_; }
  Parameter& bias() const { return *b_; }

  LstmState step(Tape& t, const LstmState& prev, Var input) const {
    if (input.cols() != input_width_) {
      throw UsageError("lstm_step: input width " + std::to_string(input.cols()) +
                       " does not match " + std::to_string(input_width_));
    }
    if (prev.h.cols() != width_ || prev.c.cols() != width_) {
      throw UsageError("lstm_step: state width does not match " + std::to_string(width_));
    }
    using namespace diff;
    Var pre = add(add(matmul(input, t.param(*wx_)), matmul(prev.h, t.param(*wh_))),
                  t.param(*b_));
    const std::size_t H = width_;
    Var i = sigmoid(slice_cols(pre, 0, H));
    Var f = sigmoid(slice_cols(pre, H, 2 * H));
    Var g = tanh(slice_cols(pre, 2 * H, 3 * H));
    Var o = sigmoid(slice_cols(pre, 3 * H, 4 * H));
    Var c = add(mul(f, prev.c), mul(i, g));
    Var h = mul(o, tanh(c));
    return {h, c};
  }

 private:
  std::size_t input_width_ = 0;
  std::size_t width_ = 0;
  Parameter* wx_ = nullptr;
  Parameter* wh_ = nullptr;
  Parameter* b_ = nullptr;
};

}  // namespace rfn::nn
