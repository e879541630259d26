#pragma once

// Test-only oracles: central finite differences, random tensors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "tbigan/model.hpp"
#include "tbigan/tensor.hpp"

namespace tbigan::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0,
                            bool requires_grad = true) {
  Tensor t = Tensor::randn(std::move(shape), rng, scale);
  t.set_requires_grad(requires_grad);
  return t;
}

struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

// Compares analytic gradients of `loss()` w.r.t. `params` against central
// differences. `loss` must rebuild its graph on each call and be
// deterministic. Per-element relative error uses a floor of 1e-3 times the
// largest analytic component so that near-zero entries are judged on scale.
inline GradCheck check_gradients(const std::function<Tensor()>& loss,
                                 const std::vector<Tensor>& params, double h = 1e-5) {
  auto& tape = GradTape::current();
  tape.reset();
  for (auto p : params) p.zero_grad();
  Tensor l = loss();
  backward(l);
  tape.reset();

  std::vector<std::vector<double>> analytic;
  double scale = 0.0;
  for (const auto& p : params) {
    auto g = p.grad_tensor();
    analytic.emplace_back(g.data().begin(), g.data().end());
    for (double v : analytic.back()) scale = std::max(scale, std::abs(v));
  }

  GradCheck result;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k];
    auto data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double up = loss().item();
      data[i] = orig - h;
      const double down = loss().item();
      data[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3 * scale, 1e-10});
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      result.max_rel_error = std::max(result.max_rel_error, abs_err / denom);
      ++result.checked;
    }
  }
  for (auto p : params) p.zero_grad();
  return result;
}

// ---------------------------------------------------------------------------
// Model helpers

inline void randomize(std::vector<NamedTensor> params, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  for (auto& p : params) {
    for (auto& v : p.tensor.mutable_data()) v = g(rng);
  }
}

inline void randomize_linear(Linear& l, std::mt19937_64& rng, double scale) {
  randomize({{"w", l.weight}, {"b", l.bias}}, rng, scale);
}

inline BlockParams random_block(std::size_t d, std::size_t hidden, std::mt19937_64& rng) {
  BlockParams b;
  b.ln1 = LayerNormParams(d);
  b.attn.qkv = Linear(d, 3 * d, rng, false, false);
  b.attn.out = Linear(d, d, rng, false, false);
  b.ln2 = LayerNormParams(d);
  b.fc1 = Linear(d, hidden, rng, false, false);
  b.fc2 = Linear(hidden, d, rng, false, false);
  randomize({{"", b.ln1.gain}, {"", b.ln1.bias}, {"", b.ln2.gain}, {"", b.ln2.bias}}, rng, 0.5);
  for (Linear* l : {&b.attn.qkv, &b.attn.out, &b.fc1, &b.fc2}) randomize_linear(*l, rng, 0.4);
  return b;
}

inline std::vector<Tensor> block_tensors(BlockParams& b) {
  return {b.ln1.gain, b.ln1.bias, b.attn.qkv.weight, b.attn.qkv.bias, b.attn.out.weight,
          b.attn.out.bias, b.ln2.gain, b.ln2.bias, b.fc1.weight, b.fc1.bias,
          b.fc2.weight, b.fc2.bias};
}

inline std::vector<Tensor> tensors_of(const std::vector<NamedTensor>& named) {
  std::vector<Tensor> out;
  for (const auto& n : named) out.push_back(n.tensor);
  return out;
}

// Plain-loop multi-head attention over a window set, one sequence (T, d).
inline std::vector<double> reference_attention(const std::vector<double>& x, std::size_t t,
                                        std::size_t d, std::size_t heads, std::size_t window,
                                        const Linear& qkv, const Linear& out) {
  const auto wq = qkv.weight.data();
  const auto bq = qkv.bias.data();
  const std::size_t dh = d / heads;
  std::vector<double> proj(t * 3 * d);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t o = 0; o < 3 * d; ++o) {
      double s = bq[o];
      for (std::size_t k = 0; k < d; ++k) s += x[i * d + k] * wq[k * 3 * d + o];
      proj[i * 3 * d + o] = s;
    }
  }
  std::vector<double> ctx(t * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < t; ++i) {
      const std::size_t w0 = i / window * window;
      const std::size_t w1 = std::min(t, w0 + window);
      std::vector<double> score;
      double mx = -1e300;
      for (std::size_t j = w0; j < w1; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) {
          s += proj[i * 3 * d + h * dh + c] * proj[j * 3 * d + d + h * dh + c];
        }
        s /= std::sqrt(static_cast<double>(dh));
        score.push_back(s);
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (auto& s : score) z += (s = std::exp(s - mx));
      for (std::size_t j = w0; j < w1; ++j) {
        for (std::size_t c = 0; c < dh; ++c) {
          ctx[i * d + h * dh + c] += score[j - w0] / z * proj[j * 3 * d + 2 * d + h * dh + c];
        }
      }
    }
  }
  const auto wo = out.weight.data();
  const auto bo = out.bias.data();
  std::vector<double> y(t * d);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t o = 0; o < d; ++o) {
      double s = bo[o];
      for (std::size_t k = 0; k < d; ++k) s += ctx[i * d + k] * wo[k * d + o];
      y[i * d + o] = s;
    }
  }
  return y;
}

inline Eigen::MatrixXd to_eigen(const Tensor& w) {
  Eigen::MatrixXd m(w.size(0), w.size(1));
  for (std::size_t i = 0; i < w.size(0); ++i) {
    for (std::size_t j = 0; j < w.size(1); ++j) m(i, j) = w[i * w.size(1) + j];
  }
  return m;
}

inline double sigma_max(const Tensor& w) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(w));
  return svd.singularValues()(0);
}

// Re-converges the discriminator's power-iteration state after its weights
// were moved by hand; a stale (u, v) pair can put sigma near zero and make
// W / sigma arbitrarily curved.
inline void settle_spectral_state(TBiGanModel& m, const Tensor& x, const Tensor& z,
                                  int passes = 100) {
  const bool was_training = m.training();
  m.set_training(true);
  {
    NoGradGuard ng;
    for (int i = 0; i < passes; ++i) m.discriminate_logits(x, z);
  }
  m.set_training(was_training);
}

}  // namespace tbigan::testing
