#include "hybrid_ecm/fnn.hpp"

#include <cmath>

#include "hybrid_ecm/errors.hpp"
#include "hybrid_ecm/random.hpp"

namespace hybrid_ecm {

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::adam ? "adam" : "adagrad";
}

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "adagrad") return OptimizerKind::adagrad;
  if (name == "adam") return OptimizerKind::adam;
  throw InputError("unknown optimizer '" + name + "' (expected adagrad or adam)");
}

void FnnConfig::validate() const {
  if (hidden_sizes[0] < 1 || hidden_sizes[1] < 1) throw InputError("hidden sizes must be >= 1");
  if (!(learning_rate > 0.0)) throw InputError("learning rate must be positive");
  if (!(output_scale > 0.0) || !std::isfinite(output_scale)) {
    throw InputError("output scale must be positive");
  }
}

NormStats NormStats::from_samples(std::span<const FnnInput> samples) {
  NormStats s;
  if (samples.empty()) return s;
  const double n = static_cast<double>(samples.size());
  for (int f = 0; f < 3; ++f) {
    double mean = 0.0;
    for (const auto& x : samples) mean += x[f];
    mean /= n;
    double var = 0.0;
    for (const auto& x : samples) var += (x[f] - mean) * (x[f] - mean);
    var /= n;
    const double sd = std::sqrt(var);
    s.mean[f] = mean;
    s.stddev[f] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

std::array<std::size_t, 4> FnnModel::layer_sizes() const {
  return {static_cast<std::size_t>(layers[0].w.cols()), static_cast<std::size_t>(layers[0].w.rows()),
          static_cast<std::size_t>(layers[1].w.rows()), static_cast<std::size_t>(layers[2].w.rows())};
}

std::size_t FnnModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.w.size() + l.b.size());
  return n;
}

FnnGradients FnnGradients::zeros_like(const FnnModel& model) {
  FnnGradients g;
  for (std::size_t i = 0; i < 3; ++i) {
    g.layers[i].w = RowMatrix::Zero(model.layers[i].w.rows(), model.layers[i].w.cols());
    g.layers[i].b = Eigen::VectorXd::Zero(model.layers[i].b.size());
  }
  return g;
}

FnnGradients& FnnGradients::operator+=(const FnnGradients& other) {
  for (std::size_t i = 0; i < 3; ++i) {
    layers[i].w += other.layers[i].w;
    layers[i].b += other.layers[i].b;
  }
  return *this;
}

void FnnGradients::add_scaled(const FnnGradients& other, double scale) {
  for (std::size_t i = 0; i < 3; ++i) {
    layers[i].w += scale * other.layers[i].w;
    layers[i].b += scale * other.layers[i].b;
  }
}

void FnnGradients::set_zero() {
  for (auto& l : layers) {
    l.w.setZero();
    l.b.setZero();
  }
}

FnnModel fnn_init(const FnnConfig& config, const NormStats& norm) {
  config.validate();
  const std::array<std::size_t, 4> sizes{3, config.hidden_sizes[0], config.hidden_sizes[1], 1};
  Rng rng(config.seed);
  FnnModel m;
  m.norm = norm;
  m.output_scale = config.output_scale;
  m.optimizer = config.optimizer;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto in = static_cast<Eigen::Index>(sizes[i]);
    const auto out = static_cast<Eigen::Index>(sizes[i + 1]);
    m.layers[i].w = RowMatrix::Zero(out, in);
    m.layers[i].b = Eigen::VectorXd::Zero(out);
    if (i == 2) continue;  // output layer starts at zero
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (Eigen::Index r = 0; r < out; ++r) {
      for (Eigen::Index c = 0; c < in; ++c) m.layers[i].w(r, c) = rng.uniform(-limit, limit);
    }
  }
  return m;
}

double fnn_forward(const FnnModel& model, const FnnInput& input, FnnCache* cache) {
  Eigen::Vector3d z0;
  for (int f = 0; f < 3; ++f) z0(f) = (input[f] - model.norm.mean[f]) / model.norm.stddev[f];
  Eigen::VectorXd h1 = (model.layers[0].w * z0 + model.layers[0].b).array().tanh().matrix();
  Eigen::VectorXd h2 = (model.layers[1].w * h1 + model.layers[1].b).array().tanh().matrix();
  const double out = model.layers[2].w.row(0).dot(h2) + model.layers[2].b(0);
  if (cache != nullptr) {
    cache->z0 = z0;
    cache->h1 = std::move(h1);
    cache->h2 = std::move(h2);
  }
  return model.output_scale * out;
}

void fnn_backward_accumulate(const FnnModel& model, const FnnCache& cache, double upstream_grad,
                             FnnGradients& grads) {
  const double g_out = upstream_grad * model.output_scale;
  grads.layers[2].w.row(0) += g_out * cache.h2.transpose();
  grads.layers[2].b(0) += g_out;

  const Eigen::VectorXd d2 =
      (g_out * model.layers[2].w.row(0).transpose()).cwiseProduct(
          (1.0 - cache.h2.array().square()).matrix());
  grads.layers[1].w.noalias() += d2 * cache.h1.transpose();
  grads.layers[1].b += d2;

  const Eigen::VectorXd d1 = (model.layers[1].w.transpose() * d2)
                                 .cwiseProduct((1.0 - cache.h1.array().square()).matrix());
  grads.layers[0].w.noalias() += d1 * cache.z0.transpose();
  grads.layers[0].b += d1;
}

FnnGradients fnn_backward(const FnnModel& model, const FnnCache& cache, double upstream_grad) {
  FnnGradients g = FnnGradients::zeros_like(model);
  fnn_backward_accumulate(model, cache, upstream_grad, g);
  return g;
}

OptimizerState OptimizerState::make(const FnnModel& model, OptimizerKind kind) {
  OptimizerState s;
  s.kind = kind;
  s.eps = kind == OptimizerKind::adam ? 1e-8 : 1e-10;
  s.first = FnnGradients::zeros_like(model);
  s.second = FnnGradients::zeros_like(model);
  return s;
}

void optimizer_step(FnnModel& model, const FnnGradients& grads, OptimizerState& state,
                    double learning_rate) {
  ++state.step;
  if (state.kind == OptimizerKind::adagrad) {
    for (std::size_t i = 0; i < 3; ++i) {
      auto update = [&](auto& w, const auto& g, auto& acc) {
        acc.array() += g.array().square();
        w.array() -= learning_rate * g.array() / (acc.array().sqrt() + state.eps);
      };
      update(model.layers[i].w, grads.layers[i].w, state.first.layers[i].w);
      update(model.layers[i].b, grads.layers[i].b, state.first.layers[i].b);
    }
    return;
  }
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < 3; ++i) {
    auto update = [&](auto& w, const auto& g, auto& m, auto& v) {
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v.array() = state.beta2 * v.array() + (1.0 - state.beta2) * g.array().square();
      w.array() -= learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + state.eps);
    };
    update(model.layers[i].w, grads.layers[i].w, state.first.layers[i].w,
           state.second.layers[i].w);
    update(model.layers[i].b, grads.layers[i].b, state.first.layers[i].b,
           state.second.layers[i].b);
  }
}

}  // namespace hybrid_ecm
