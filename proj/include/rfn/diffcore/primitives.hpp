#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rfn/diffcore/ops.hpp"

namespace rfn::diff {

// Static arguments for the primitives that take them.
struct PrimitiveOptions {
  double scale = 1.0;   // elementwise-affine
  double shift = 0.0;   // elementwise-affine
  std::size_t begin = 0;  // slice
  std::size_t end = 0;    // slice
  int axis = 1;  // concatenate/slice/sum/log-sum-exp: 0 = rows, 1 = columns, -1 = all
  std::vector<std::size_t> index;  // gather/segment-sum row indices
  std::size_t segments = 0;        // segment-sum output rows
};

struct PrimitiveResult {
  RealArray output;
  // Maps an output cotangent to one cotangent per input.
  std::function<std::vector<RealArray>(const RealArray&)> pullback;
};

inline const std::vector<std::string>& primitive_names() {
  static const std::vector<std::string> names = {
      "matmul",  "add",      "subtract", "multiply",    "divide",      "exp",
      "log",     "tanh",     "sigmoid",  "softplus",    "relu",        "sum",
      "log-sum-exp", "concatenate", "slice", "elementwise-affine", "gather", "segment-sum"};
  return names;
}

// Evaluates one named primitive on fresh leaves and returns its output with a
// pullback closure. Used to gradient-check every primitive in isolation.
inline PrimitiveResult primitive_forward_backward(std::string_view op,
                                                  std::span<const RealArray> inputs,
                                                  const PrimitiveOptions& opt = {}) {
  for (const auto& in : inputs) {
    if (!in.all_finite()) {
      throw DomainError(std::string(op) + ": non-finite input");
    }
  }
  auto tape = std::make_shared<Tape>(true);
  std::vector<Var> leaves;
  for (const auto& in : inputs) leaves.push_back(tape->variable(in));
  auto need = [&](std::size_t n) {
    if (leaves.size() != n) {
      throw UsageError(std::string(op) + ": expects " + std::to_string(n) + " inputs");
    }
  };

  Var out;
  if (op == "matmul") { need(2); out = matmul(leaves[0], leaves[1]); }
  else if (op == "add") { need(2); out = add(leaves[0], leaves[1]); }
  else if (op == "subtract") { need(2); out = sub(leaves[0], leaves[1]); }
  else if (op == "multiply") { need(2); out = mul(leaves[0], leaves[1]); }
  else if (op == "divide") { need(2); out = div(leaves[0], leaves[1]); }
  else if (op == "exp") { need(1); out = exp(leaves[0]); }
  else if (op == "log") { need(1); out = log(leaves[0]); }
  else if (op == "tanh") { need(1); out = tanh(leaves[0]); }
  else if (op == "sigmoid") { need(1); out = sigmoid(leaves[0]); }
  else if (op == "softplus") { need(1); out = softplus(leaves[0]); }
  else if (op == "relu") { need(1); out = relu(leaves[0]); }
  else if (op == "elementwise-affine") { need(1); out = affine(leaves[0], opt.scale, opt.shift); }
  else if (op == "sum") {
    need(1);
    out = opt.axis == 0 ? sum_rows(leaves[0]) : opt.axis == 1 ? sum_cols(leaves[0]) : sum(leaves[0]);
  } else if (op == "log-sum-exp") {
    need(1);
    out = logsumexp_cols(leaves[0]);
  } else if (op == "concatenate") {
    if (leaves.empty()) throw UsageError("concatenate: expects at least one input");
    out = opt.axis == 0 ? concat_rows(leaves) : concat_cols(leaves);
  } else if (op == "slice") {
    need(1);
    out = opt.axis == 0 ? slice_rows(leaves[0], opt.begin, opt.end)
                        : slice_cols(leaves[0], opt.begin, opt.end);
  } else if (op == "gather") {
    need(1);
    out = gather_rows(leaves[0], opt.index);
  } else if (op == "segment-sum") {
    need(1);
    out = segment_sum_rows(leaves[0], opt.index, opt.segments);
  } else {
    throw UsageError("unknown primitive '" + std::string(op) + "'");
  }

  PrimitiveResult result;
  result.output = out.value();
  result.pullback = [tape, leaves, out](const RealArray& cotangent) {
    tape->backward(out, cotangent);
    std::vector<RealArray> grads;
    for (const Var& l : leaves) {
      const RealArray& g = tape->gradient(l);
      grads.push_back(g.empty() ? RealArray(l.rows(), l.cols()) : g);
    }
    return grads;
  };
  return result;
}

}  // namespace rfn::diff
