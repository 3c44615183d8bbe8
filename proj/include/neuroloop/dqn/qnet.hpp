#pragma once

#include <array>
#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuroloop/core/error.hpp"
#include "neuroloop/core/rng.hpp"

namespace neuroloop::dqn {

inline constexpr std::size_t kInputs = 3;
inline constexpr std::size_t kHidden = 8;
inline constexpr std::size_t kOutputs = 3;

using Input = std::array<double, kInputs>;
using QValues = std::array<double, kOutputs>;

// Sensor -1 / 0 / +1 as a one-hot vector.
inline Input one_hot(int sensor) {
  if (sensor < -1 || sensor > 1) throw PreconditionError("sensor must be -1, 0 or +1");
  Input x{};
  x[static_cast<std::size_t>(sensor + 1)] = 1.0;
  return x;
}

/// 3 -> 8 (ReLU) -> 3 fully connected network.
struct QNet {
  std::array<std::array<double, kInputs>, kHidden> w1{};
  std::array<double, kHidden> b1{};
  std::array<std::array<double, kHidden>, kOutputs> w2{};
  std::array<double, kOutputs> b2{};

  static constexpr std::size_t kParameterCount = kHidden * kInputs + kHidden + kOutputs * kHidden + kOutputs;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static QNet random(Rng& rng) {
    QNet n;
    const double a1 = 1.0 / std::sqrt(static_cast<double>(kInputs));
    const double a2 = 1.0 / std::sqrt(static_cast<double>(kHidden));
    for (auto& row : n.w1)
      for (auto& w : row) w = rng.uniform(-a1, a1);
    for (auto& b : n.b1) b = rng.uniform(-a1, a1);
    for (auto& row : n.w2)
      for (auto& w : row) w = rng.uniform(-a2, a2);
    for (auto& b : n.b2) b = rng.uniform(-a2, a2);
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> p;
    p.reserve(kParameterCount);
    for (const auto& row : w1) p.insert(p.end(), row.begin(), row.end());
    p.insert(p.end(), b1.begin(), b1.end());
    for (const auto& row : w2) p.insert(p.end(), row.begin(), row.end());
    p.insert(p.end(), b2.begin(), b2.end());
    return p;
  }

  static QNet unflatten(const std::vector<double>& p) {
    if (p.size() != kParameterCount) throw PreconditionError("wrong parameter count");
    QNet n;
    std::size_t k = 0;
    for (auto& row : n.w1)
      for (auto& w : row) w = p[k++];
    for (auto& b : n.b1) b = p[k++];
    for (auto& row : n.w2)
      for (auto& w : row) w = p[k++];
    for (auto& b : n.b2) b = p[k++];
    return n;
  }

  bool finite() const {
    for (double v : flatten())
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const QNet&, const QNet&) = default;
};

struct Activations {
  std::array<double, kHidden> pre{};
  std::array<double, kHidden> hidden{};
  QValues q{};
};

inline Activations forward_pass(const QNet& n, const Input& x) {
  Activations a;
  for (std::size_t j = 0; j < kHidden; ++j) {
    double s = n.b1[j];
    for (std::size_t i = 0; i < kInputs; ++i) s += n.w1[j][i] * x[i];
    a.pre[j] = s;
    a.hidden[j] = s > 0.0 ? s : 0.0;
  }
  for (std::size_t k = 0; k < kOutputs; ++k) {
    double s = n.b2[k];
    for (std::size_t j = 0; j < kHidden; ++j) s += n.w2[k][j] * a.hidden[j];
    a.q[k] = s;
  }
  return a;
}

inline QValues qnet_forward(const QNet& n, const Input& x) { return forward_pass(n, x).q; }

// Greedy action; ties go to the lowest index.
inline std::size_t argmax(const QValues& q) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < kOutputs; ++k)
    if (q[k] > q[best]) best = k;
  return best;
}

inline std::size_t act(const QValues& q, double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw PreconditionError("epsilon must be in [0, 1]");
  if (epsilon > 0.0 && rng.uniform() < epsilon) return static_cast<std::size_t>(rng.below(kOutputs));
  return argmax(q);
}

/// Gradient of (Q(x, a) - y)^2 with respect to every parameter, laid out
/// like QNet. Also returns the loss.
inline std::pair<QNet, double> loss_gradient(const QNet& n, const Input& x, std::size_t a, double y) {
  const auto act = forward_pass(n, x);
  const double diff = act.q[a] - y;
  QNet g;
  const double dq = 2.0 * diff;
  g.b2[a] = dq;
  for (std::size_t j = 0; j < kHidden; ++j) {
    g.w2[a][j] = dq * act.hidden[j];
    const double dpre = act.pre[j] > 0.0 ? dq * n.w2[a][j] : 0.0;
    g.b1[j] = dpre;
    for (std::size_t i = 0; i < kInputs; ++i) g.w1[j][i] = dpre * x[i];
  }
  return {g, diff * diff};
}

inline double loss(const QNet& n, const Input& x, std::size_t a, double y) {
  const double d = qnet_forward(n, x)[a] - y;
  return d * d;
}

// n += scale * g
inline void axpy(QNet& n, const QNet& g, double scale) {
  for (std::size_t j = 0; j < kHidden; ++j) {
    for (std::size_t i = 0; i < kInputs; ++i) n.w1[j][i] += scale * g.w1[j][i];
    n.b1[j] += scale * g.b1[j];
  }
  for (std::size_t k = 0; k < kOutputs; ++k) {
    for (std::size_t j = 0; j < kHidden; ++j) n.w2[k][j] += scale * g.w2[k][j];
    n.b2[k] += scale * g.b2[k];
  }
}

inline void to_json(nlohmann::json& j, const QNet& n) {
  j = nlohmann::json{{"w1", n.w1}, {"b1", n.b1}, {"w2", n.w2}, {"b2", n.b2}};
}
inline void from_json(const nlohmann::json& j, QNet& n) {
  n.w1 = j.at("w1").get<decltype(n.w1)>();
  n.b1 = j.at("b1").get<decltype(n.b1)>();
  n.w2 = j.at("w2").get<decltype(n.w2)>();
  n.b2 = j.at("b2").get<decltype(n.b2)>();
}

}  // namespace neuroloop::dqn
