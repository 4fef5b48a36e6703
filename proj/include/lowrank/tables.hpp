#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lowrank {

/// Dense (h, s, a) -> real table. Steps are 0-based: h in [0, horizon).
class StepActionTable {
 public:
  StepActionTable() = default;
  StepActionTable(int horizon, int n_states, int n_actions, double fill = 0.0)
      : horizon_(horizon), n_states_(n_states), n_actions_(n_actions),
        values_(static_cast<std::size_t>(horizon) * n_states * n_actions, fill) {
    if (horizon < 0 || n_states < 0 || n_actions < 0)
      throw std::invalid_argument("StepActionTable: negative dimension");
  }

  int horizon() const { return horizon_; }
  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }

  double& operator()(int h, int s, int a) { return values_[index(h, s, a)]; }
  double operator()(int h, int s, int a) const { return values_[index(h, s, a)]; }

  std::span<double> row(int h, int s) {
    return {values_.data() + index(h, s, 0), static_cast<std::size_t>(n_actions_)};
  }
  std::span<const double> row(int h, int s) const {
    return {values_.data() + index(h, s, 0), static_cast<std::size_t>(n_actions_)};
  }

  std::vector<double>& data() { return values_; }
  const std::vector<double>& data() const { return values_; }

  bool same_shape(const StepActionTable& other) const {
    return horizon_ == other.horizon_ && n_states_ == other.n_states_ &&
           n_actions_ == other.n_actions_;
  }

  friend bool operator==(const StepActionTable&, const StepActionTable&) = default;

 private:
  std::size_t index(int h, int s, int a) const {
    return (static_cast<std::size_t>(h) * n_states_ + s) * n_actions_ + a;
  }

  int horizon_ = 0;
  int n_states_ = 0;
  int n_actions_ = 0;
  std::vector<double> values_;
};

using QTable = StepActionTable;
using RewardTable = StepActionTable;

/// (h, s) -> real with one extra terminal row: V(horizon, .) == 0.
class VTable {
 public:
  VTable() = default;
  VTable(int horizon, int n_states)
      : horizon_(horizon), n_states_(n_states),
        values_(static_cast<std::size_t>(horizon + 1) * n_states, 0.0) {}

  int horizon() const { return horizon_; }
  int n_states() const { return n_states_; }

  double& operator()(int h, int s) { return values_[static_cast<std::size_t>(h) * n_states_ + s]; }
  double operator()(int h, int s) const {
    return values_[static_cast<std::size_t>(h) * n_states_ + s];
  }
  std::span<const double> step(int h) const {
    return {values_.data() + static_cast<std::size_t>(h) * n_states_,
            static_cast<std::size_t>(n_states_)};
  }

  const std::vector<double>& data() const { return values_; }

  friend bool operator==(const VTable&, const VTable&) = default;

 private:
  int horizon_ = 0;
  int n_states_ = 0;
  std::vector<double> values_;
};

/// Dense (h, s, a, s') transition table.
class TransitionTable {
 public:
  TransitionTable() = default;
  TransitionTable(int horizon, int n_states, int n_actions)
      : horizon_(horizon), n_states_(n_states), n_actions_(n_actions),
        values_(static_cast<std::size_t>(horizon) * n_states * n_actions * n_states, 0.0) {}

  int horizon() const { return horizon_; }
  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }

  double& operator()(int h, int s, int a, int next) { return values_[index(h, s, a) + next]; }
  double operator()(int h, int s, int a, int next) const { return values_[index(h, s, a) + next]; }

  std::span<double> row(int h, int s, int a) {
    return {values_.data() + index(h, s, a), static_cast<std::size_t>(n_states_)};
  }
  std::span<const double> row(int h, int s, int a) const {
    return {values_.data() + index(h, s, a), static_cast<std::size_t>(n_states_)};
  }

  const std::vector<double>& data() const { return values_; }

  friend bool operator==(const TransitionTable&, const TransitionTable&) = default;

 private:
  std::size_t index(int h, int s, int a) const {
    return ((static_cast<std::size_t>(h) * n_states_ + s) * n_actions_ + a) * n_states_;
  }

  int horizon_ = 0;
  int n_states_ = 0;
  int n_actions_ = 0;
  std::vector<double> values_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

}  // namespace lowrank
