#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rfn/diffcore/array.hpp"

namespace rfn::diff {

// A named learnable array together with its accumulated gradient.
// Non-trainable entries (running statistics) share the container so they
// travel with checkpoints, but the optimizer skips them.
struct Parameter {
  std::string id;
  RealArray value;
  RealArray gradient;
  bool trainable = true;

  void zero_grad() {
    if (!gradient.same_shape(value)) gradient = RealArray(value.rows(), value.cols());
    gradient.fill(0.0);
  }
};

using Snapshot = std::map<std::string, RealArray>;

// Owns parameters at stable addresses; modules keep raw pointers into it.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter& add(const std::string& id, RealArray value, bool trainable = true) {
    if (index_.count(id) != 0) {
      throw UsageError("duplicate parameter id '" + id + "'");
    }
    auto p = std::make_unique<Parameter>();
    p->id = id;
    p->value = std::move(value);
    p->trainable = trainable;
    p->zero_grad();
    index_[id] = items_.size();
    items_.push_back(std::move(p));
    return *items_.back();
  }

  Parameter* find(const std::string& id) {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }
  const Parameter* find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }

  Parameter& at(const std::string& id) {
    if (auto* p = find(id)) return *p;
    throw UsageError("unknown parameter id '" + id + "'");
  }

  std::size_t size() const { return items_.size(); }

  template <class F>
  void for_each(F&& f) {
    for (auto& p : items_) f(*p);
  }
  template <class F>
  void for_each(F&& f) const {
    for (const auto& p : items_) f(static_cast<const Parameter&>(*p));
  }

  void zero_grad() {
    for (auto& p : items_) p->zero_grad();
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : items_)
      if (p->trainable) n += p->value.size();
    return n;
  }

  Snapshot snapshot() const {
    Snapshot s;
    for (const auto& p : items_) s[p->id] = p->value;
    return s;
  }

  void restore(const Snapshot& s) {
    for (auto& p : items_) {
      auto it = s.find(p->id);
      if (it == s.end()) {
        throw DataError("snapshot is missing parameter '" + p->id + "'");
      }
      if (!it->second.same_shape(p->value)) {
        throw DataError("snapshot shape mismatch for parameter '" + p->id + "'");
      }
      p->value = it->second;
    }
  }

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace rfn::diff
