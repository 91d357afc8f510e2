#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mamforge/dual.hpp"
#include "mamforge/error.hpp"

namespace mamforge {

/// Fully connected network with tanh hidden layers and a linear scalar
/// output. Parameters are stored flat: for each layer the row-major weight
/// matrix (out × in) followed by the bias vector.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t inputs, const std::vector<std::size_t>& hidden) {
    if (inputs < 1) throw ConfigError("network needs at least one input");
    widths_.push_back(inputs);
    for (auto h : hidden) {
      if (h < 1) throw ConfigError("layer widths must be >= 1");
      widths_.push_back(h);
    }
    widths_.push_back(1);
    std::size_t total = 0;
    for (std::size_t l = 1; l < widths_.size(); ++l) {
      offsets_.push_back(total);
      total += widths_[l] * widths_[l - 1] + widths_[l];
    }
    params_.assign(total, 0.0);
  }

  bool empty() const { return widths_.empty(); }
  std::size_t num_inputs() const { return widths_.front(); }
  std::size_t num_layers() const { return widths_.size() - 1; }
  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t num_params() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + widths_[layer + 1] * widths_[layer];
  }

  /// Uniform ±sqrt(6/(fan_in+fan_out)) weights, zero biases.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const double limit = std::sqrt(6.0 / static_cast<double>(widths_[l] + widths_[l + 1]));
      const std::size_t w0 = weight_offset(l);
      for (std::size_t k = 0; k < widths_[l + 1] * widths_[l]; ++k) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        params_[w0 + k] = (2.0 * u - 1.0) * limit;
      }
      for (std::size_t k = 0; k < widths_[l + 1]; ++k) params_[bias_offset(l) + k] = 0.0;
    }
  }

  /// Layer activations of one forward pass; act[0] is the input.
  template <class T>
  struct Tape {
    std::vector<std::vector<T>> act;
  };

  template <class T>
  T forward(std::span<const T> x, Tape<T>& tape) const {
    if (x.size() != num_inputs()) throw DataError("network input dimension mismatch");
    tape.act.resize(widths_.size());
    tape.act[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < num_layers(); ++l) {
      const std::size_t in = widths_[l], out = widths_[l + 1];
      const double* W = params_.data() + weight_offset(l);
      const double* b = params_.data() + bias_offset(l);
      const auto& a = tape.act[l];
      auto& z = tape.act[l + 1];
      z.assign(out, T(0.0));
      const bool hidden = l + 1 < num_layers();
      for (std::size_t o = 0; o < out; ++o) {
        T acc(b[o]);
        const double* row = W + o * in;
        for (std::size_t k = 0; k < in; ++k) acc += T(row[k]) * a[k];
        if (hidden) {
          using std::tanh;
          acc = tanh(acc);
        }
        z[o] = acc;
      }
    }
    return tape.act.back()[0];
  }

  template <class T>
  T forward(std::span<const T> x) const {
    Tape<T> tape;
    return forward(x, tape);
  }

  /// Reverse pass for output seed ∂L/∂y. Accumulates ∂L/∂params into
  /// grad_params (when non-empty) and writes ∂L/∂x into grad_input (when
  /// non-empty).
  template <class T>
  void backward(const Tape<T>& tape, const T& seed, std::span<T> grad_params, std::span<T> grad_input) const {
    std::vector<T> delta{seed}, prev;
    for (std::size_t l = num_layers(); l-- > 0;) {
      const std::size_t in = widths_[l], out = widths_[l + 1];
      const double* W = params_.data() + weight_offset(l);
      const auto& a = tape.act[l];
      if (!grad_params.empty()) {
        T* gW = grad_params.data() + weight_offset(l);
        T* gb = grad_params.data() + bias_offset(l);
        for (std::size_t o = 0; o < out; ++o) {
          gb[o] += delta[o];
          for (std::size_t k = 0; k < in; ++k) gW[o * in + k] += delta[o] * a[k];
        }
      }
      if (l == 0 && grad_input.empty()) break;
      prev.assign(in, T(0.0));
      for (std::size_t o = 0; o < out; ++o) {
        const double* row = W + o * in;
        for (std::size_t k = 0; k < in; ++k) prev[k] += T(row[k]) * delta[o];
      }
      if (l == 0) {
        for (std::size_t k = 0; k < in; ++k) grad_input[k] = prev[k];
      } else {
        for (std::size_t k = 0; k < in; ++k) prev[k] *= T(1.0) - a[k] * a[k];
      }
      delta.swap(prev);
    }
  }

 private:
  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

}  // namespace mamforge
