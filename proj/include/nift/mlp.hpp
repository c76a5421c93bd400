#pragma once

#include "nift/geometry.hpp"

#include <Eigen/Dense>

#include <random>
#include <string>
#include <vector>

namespace nift {

// Fully connected network with a smooth hidden activation and a linear
// output layer. Small enough that forward, reverse and training passes are
// written out by hand.

enum class Activation { tanh, softplus };

inline std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "softplus"; }
inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "softplus") return Activation::softplus;
  throw Error("unknown activation: " + s);
}

struct DenseLayer {
  Eigen::MatrixXd w;  // out x in
  Eigen::VectorXd b;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(int input_dim, const std::vector<int>& widths, Activation act, std::uint64_t seed) : act_(act) {
    if (widths.size() < 2) throw Error("decoder needs at least two layers");
    std::mt19937_64 rng(seed);
    int in = input_dim;
    for (int w : widths) {
      if (w <= 0) throw Error("layer widths must be positive");
      // Glorot-uniform initialization.
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      const double lim = std::sqrt(6.0 / (in + w));
      DenseLayer l{Eigen::MatrixXd(w, in), Eigen::VectorXd::Zero(w)};
      for (int r = 0; r < w; ++r)
        for (int c = 0; c < in; ++c) l.w(r, c) = lim * u(rng);
      layers_.push_back(std::move(l));
      in = w;
    }
  }

  Mlp(std::vector<DenseLayer> layers, Activation act) : layers_(std::move(layers)), act_(act) { check(); }

  void check() const {
    if (layers_.size() < 2) throw Error("decoder needs at least two layers");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].b.size() != layers_[i].w.rows()) throw Error("layer bias shape mismatch");
      if (i > 0 && layers_[i].w.cols() != layers_[i - 1].w.rows()) throw Error("layer shape chain broken");
      if (!layers_[i].w.allFinite() || !layers_[i].b.allFinite()) throw Error("non-finite weights");
    }
  }

  int input_dim() const { return static_cast<int>(layers_.front().w.cols()); }
  int output_dim() const { return static_cast<int>(layers_.back().w.rows()); }
  int activation_dim() const {
    int d = 0;
    for (const auto& l : layers_) d += static_cast<int>(l.w.rows());
    return d;
  }
  std::vector<int> widths() const {
    std::vector<int> w;
    for (const auto& l : layers_) w.push_back(static_cast<int>(l.w.rows()));
    return w;
  }
  Activation activation() const { return act_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  bool is_output(std::size_t layer) const { return layer + 1 == layers_.size(); }

  // sigma(z) and sigma'(z), elementwise; the output layer is linear.
  void apply(Eigen::Ref<Eigen::MatrixXd> z) const {
    if (act_ == Activation::tanh) z = z.array().tanh().matrix();
    else z = z.unaryExpr([](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); });
  }
  // Derivative expressed through the post-activation value a = sigma(z).
  Eigen::ArrayXXd derivative_from_output(const Eigen::MatrixXd& a) const {
    if (act_ == Activation::tanh) return 1.0 - a.array().square();
    return 1.0 - (-a.array()).exp();  // softplus: sigma' = 1 - exp(-a)
  }

  // Post-activation values of every layer for a batch (columns);
  // optionally also the pre-activations.
  std::vector<Eigen::MatrixXd> forward(const Eigen::MatrixXd& input, std::vector<Eigen::MatrixXd>* pre = nullptr) const {
    std::vector<Eigen::MatrixXd> acts;
    acts.reserve(layers_.size());
    if (pre) pre->clear();
    const Eigen::MatrixXd* x = &input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Eigen::MatrixXd z = layers_[i].w * *x;
      z.colwise() += layers_[i].b;
      if (pre) pre->push_back(z);
      if (!is_output(i)) apply(z);
      acts.push_back(std::move(z));
      x = &acts.back();
    }
    return acts;
  }

  Eigen::MatrixXd predict(const Eigen::MatrixXd& input) const { return forward(input).back(); }

  // Reverse accumulation. `seeds[i]` is the adjoint arriving directly at the
  // post-activation of layer i, `pre_seeds[i]` at its pre-activation (either
  // may be empty). Returns the input adjoint and, when `grads` is given,
  // fills per-layer weight gradients.
  Eigen::MatrixXd backward(const Eigen::MatrixXd& input, const std::vector<Eigen::MatrixXd>& acts,
                           const std::vector<Eigen::MatrixXd>& seeds, std::vector<DenseLayer>* grads = nullptr,
                           const std::vector<Eigen::MatrixXd>& pre_seeds = {}) const {
    Eigen::MatrixXd delta;  // adjoint of post-activation of current layer
    if (grads) grads->resize(layers_.size());
    for (std::size_t ii = layers_.size(); ii-- > 0;) {
      if (ii < seeds.size() && seeds[ii].size() > 0) {
        if (delta.size() == 0) delta = seeds[ii];
        else delta += seeds[ii];
      }
      if (delta.size() == 0) delta = Eigen::MatrixXd::Zero(layers_[ii].w.rows(), input.cols());
      Eigen::MatrixXd dz = is_output(ii) ? delta : Eigen::MatrixXd(delta.array() * derivative_from_output(acts[ii]));
      if (ii < pre_seeds.size() && pre_seeds[ii].size() > 0) dz += pre_seeds[ii];
      const Eigen::MatrixXd& prev = ii == 0 ? input : acts[ii - 1];
      if (grads) {
        (*grads)[ii].w = dz * prev.transpose();
        (*grads)[ii].b = dz.rowwise().sum();
      }
      delta = layers_[ii].w.transpose() * dz;
    }
    return delta;
  }

  // Forward-mode tangents: d(activation of each layer)/d(input) * tangent
  // columns. Returns one (width x k) block per layer.
  std::vector<Eigen::MatrixXd> tangents(const std::vector<Eigen::MatrixXd>& acts, const Eigen::MatrixXd& dinput) const {
    std::vector<Eigen::MatrixXd> out;
    const Eigen::MatrixXd* t = &dinput;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Eigen::MatrixXd dz = layers_[i].w * *t;
      if (!is_output(i)) dz = (dz.array().colwise() * derivative_from_output(acts[i]).col(0)).matrix();
      out.push_back(std::move(dz));
      t = &out.back();
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.w.size() + l.b.size();
    return n;
  }

 private:
  std::vector<DenseLayer> layers_;
  Activation act_ = Activation::tanh;
};

// Adam over a list of dense layers.
struct AdamConfig {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

class LayerAdam {
 public:
  explicit LayerAdam(const std::vector<DenseLayer>& shape, AdamConfig cfg = {}) : cfg_(cfg) {
    for (const auto& l : shape) {
      m_.push_back({Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()), Eigen::VectorXd::Zero(l.b.size())});
      v_.push_back(m_.back());
    }
  }

  void step(std::vector<DenseLayer>& params, const std::vector<DenseLayer>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_), c2 = 1.0 - std::pow(cfg_.beta2, t_);
    auto upd = [&](auto& p, const auto& g, auto& m, auto& v) {
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      p.array() -= cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
      upd(params[i].w, grads[i].w, m_[i].w, v_[i].w);
      upd(params[i].b, grads[i].b, m_[i].b, v_[i].b);
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  AdamConfig cfg_;
  std::vector<DenseLayer> m_, v_;
  int t_ = 0;
};

}  // namespace nift
