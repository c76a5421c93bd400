#pragma once

#include "nift/field.hpp"
#include "nift/harness/shapes.hpp"

#include <chrono>
#include <functional>
#include <numeric>

namespace nift {

using ShapeSampler = std::function<ShapeSpec(std::mt19937_64&)>;

// Draws a kind uniformly from `kinds` and its parameters from their ranges.
inline ShapeSampler category_sampler(std::vector<ShapeKind> kinds) {
  if (kinds.empty()) throw Error("sampler needs at least one shape kind");
  return [kinds](std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, kinds.size() - 1);
    return random_shape_spec(kinds[pick(rng)], rng);
  };
}

struct TrainingExample {
  ShapeSpec spec;
  Points cloud;
  Points queries;
  Eigen::MatrixXd targets;  // one column per query
};

struct TrainingSetConfig {
  ScfConfig scf;
  EncoderConfig encoder;
  FieldTask task = FieldTask::scf;
  double scale_lo = 0.5, scale_hi = 1.5;
  double box_scale = 1.5;
  // Occupancy only: share of queries jittered off the surface, so the
  // inside class is not a few percent of the set.
  double near_surface_fraction = 0.5;
  double near_surface_sigma = 0.02;  // of the object diameter
};

struct TrainingSet {
  std::vector<TrainingExample> examples;
  TrainingSetConfig config;
  std::uint64_t seed = 0;

  std::size_t pair_count() const {
    std::size_t n = 0;
    for (const auto& e : examples) n += e.queries.size();
    return n;
  }
};

// Randomly scaled, Haar-posed objects with queries uniform in the grown
// bounding box and targets from the analytic SCF (or the inside test for
// occupancy).
inline TrainingSet generate_training_set(const ShapeSampler& sampler, std::size_t num_objects,
                                         std::size_t queries_per_object, std::uint64_t seed,
                                         const TrainingSetConfig& cfg = {}) {
  TrainingSet set;
  set.config = cfg;
  set.seed = seed;
  ScfEvaluator eval(cfg.scf);
  for (std::size_t o = 0; o < num_objects; ++o) {
    std::mt19937_64 rng(seed * 1000003ull + o);
    TrainingExample ex;
    ex.spec = sampler(rng);
    ex.spec.scale = std::uniform_real_distribution<double>(cfg.scale_lo, cfg.scale_hi)(rng);
    ex.spec.pose = {haar_random_rotation(rng), uniform_in_ball(rng, 0.5)};
    Geometry g = gen_shape(ex.spec);
    ex.cloud = sample_surface(g, static_cast<std::size_t>(cfg.encoder.cloud_points), rng());
    RayAccelerator accel(std::move(g));
    const Aabb box = field_domain(accel.bounds(), cfg.box_scale);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto draw = [&] { return Vec3(box.lo + Vec3(u(rng), u(rng), u(rng)).cwiseProduct(box.extent())); };
    for (std::size_t q = 0; q < queries_per_object; ++q) ex.queries.push_back(draw());
    if (cfg.task == FieldTask::occupancy) {
      const auto near = static_cast<std::size_t>(cfg.near_surface_fraction * double(queries_per_object));
      Points surf = sample_surface(accel.geometry(), near, rng());
      std::normal_distribution<double> jitter(0.0, cfg.near_surface_sigma * 2.0 * accel.bounding_sphere().radius);
      for (std::size_t q = 0; q < near; ++q) {
        Vec3 p = surf[q] + Vec3(jitter(rng), jitter(rng), jitter(rng));
        ex.queries[q] = p.cwiseMax(box.lo).cwiseMin(box.hi);
      }
    }
    const Eigen::Index rows = cfg.task == FieldTask::scf ? cfg.scf.order + 1 : 1;
    ex.targets.resize(rows, static_cast<Eigen::Index>(queries_per_object));
    std::vector<char> failed(queries_per_object, 0);
    auto fill = [&](std::size_t q) {
      if (cfg.task == FieldTask::occupancy) {
        ex.targets(0, static_cast<Eigen::Index>(q)) = accel.inside(ex.queries[q]) ? 1.0 : 0.0;
        return;
      }
      try {
        ex.targets.col(static_cast<Eigen::Index>(q)) = eval(accel, ex.queries[q]).powers;
      } catch (const Error&) {
        failed[q] = 1;  // every ray missed; redrawn below
      }
    };
    parallel_for(queries_per_object, fill);
    for (std::size_t q = 0; q < queries_per_object; ++q)
      while (failed[q]) {
        ex.queries[q] = draw();
        failed[q] = 0;
        fill(q);
      }
    set.examples.push_back(std::move(ex));
  }
  return set;
}

struct TrainConfig {
  std::vector<int> hidden = {64, 64, 32};
  Activation activation = Activation::tanh;
  double lr = 1e-4;
  double final_lr_factor = 0.1;  // geometric decay over the run
  int epochs = 50;
  int batch = 64;
  double holdout = 0.1;
  std::uint64_t seed = 1;
  bool verbose = false;
};

// The desk-scale fixture sees ~10^3 times fewer optimizer steps than a
// full-size dataset, so it trains with a larger rate for longer.
inline TrainConfig desk_scale_train_config() {
  TrainConfig c;
  c.lr = 1e-3;
  c.epochs = 150;
  return c;
}

inline ShapeSampler desk_scale_sampler() {
  return category_sampler({ShapeKind::mug, ShapeKind::bowl, ShapeKind::bottle, ShapeKind::rack});
}

// Divergence carries the last finite weights.
struct TrainingDiverged : Error {
  RegressorWeights last_finite;
  TrainingDiverged(RegressorWeights w, int epoch)
      : Error("training diverged (non-finite loss or weights) at epoch " + std::to_string(epoch)), last_finite(std::move(w)) {}
};

struct EncodedSet {
  Eigen::MatrixXd inputs, targets;
  std::vector<std::size_t> object_of;  // per column
};

inline EncodedSet encode_examples(const TrainingSet& set, const std::vector<std::size_t>& objects) {
  const EncoderConfig& enc = set.config.encoder;
  std::size_t n = 0;
  for (std::size_t o : objects) n += set.examples[o].queries.size();
  EncodedSet out;
  if (objects.empty()) return out;
  out.inputs.resize(enc.input_dim(), static_cast<Eigen::Index>(n));
  out.targets.resize(set.examples[objects.front()].targets.rows(), static_cast<Eigen::Index>(n));
  Eigen::Index col = 0;
  for (std::size_t o : objects) {
    const auto& ex = set.examples[o];
    ShapeEmbedding e = encode_shape(ex.cloud, enc);
    for (std::size_t q = 0; q < ex.queries.size(); ++q, ++col) {
      query_features(e, ex.queries[q], out.inputs.col(col).head(enc.query_dim()));
      out.inputs.col(col).tail(enc.object_dim()) = e.object_features;
      out.targets.col(col) = ex.targets.col(static_cast<Eigen::Index>(q));
      out.object_of.push_back(o);
    }
  }
  return out;
}

// Per-row coefficient of determination.
inline std::vector<double> r2_per_row(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  std::vector<double> r2;
  for (Eigen::Index r = 0; r < truth.rows(); ++r) {
    const double mean = truth.row(r).mean();
    const double ss_tot = (truth.row(r).array() - mean).square().sum();
    const double ss_res = (truth.row(r) - pred.row(r)).squaredNorm();
    r2.push_back(ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0);
  }
  return r2;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Loss and output adjoint for a batch: mean L1 for SCF regression, mean
// binary cross-entropy on logits for occupancy.
inline double batch_loss(FieldTask task, const Eigen::MatrixXd& out, const Eigen::MatrixXd& y, Eigen::MatrixXd* grad) {
  const double n = static_cast<double>(out.cols());
  if (task == FieldTask::scf) {
    Eigen::MatrixXd d = out - y;
    if (grad) *grad = d.unaryExpr([](double v) { return double((v > 0) - (v < 0)); }) / (n * out.rows());
    return d.cwiseAbs().sum() / (n * out.rows());
  }
  double loss = 0.0;
  if (grad) grad->resize(out.rows(), out.cols());
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    const double z = out(0, c), t = y(0, c);
    loss += (z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z))) - t * z;
    if (grad) (*grad)(0, c) = (sigmoid(z) - t) / n;
  }
  return loss / n;
}

inline RegressorWeights train_field(const TrainingSet& set, const TrainConfig& cfg = {}) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t n_obj = set.examples.size();
  if (n_obj < 2) throw Error("training needs at least two objects (one held out)");
  if (cfg.batch < 1 || cfg.epochs < 0) throw Error("invalid training configuration");

  // Hold out whole objects.
  std::vector<std::size_t> order(n_obj);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_hold = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.holdout * n_obj)));
  std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());
  std::sort(hold.begin(), hold.end());
  std::sort(train.begin(), train.end());
  EncodedSet tr = encode_examples(set, train), ho = encode_examples(set, hold);

  RegressorWeights w;
  w.task = set.config.task;
  w.encoder = set.config.encoder;
  w.scf = set.config.scf;
  w.input_mean = tr.inputs.rowwise().mean();
  w.input_std = ((tr.inputs.colwise() - w.input_mean).array().square().rowwise().mean()).sqrt();
  for (auto& s : w.input_std)
    if (!(s > 1e-9)) s = 1.0;
  auto standardize = [&](Eigen::MatrixXd& m) {
    m = (m.colwise() - w.input_mean).array().colwise() / w.input_std.array();
  };
  standardize(tr.inputs);
  if (ho.inputs.size() > 0) standardize(ho.inputs);

  std::vector<int> widths = cfg.hidden;
  widths.push_back(static_cast<int>(tr.targets.rows()));
  w.decoder = Mlp(w.encoder.input_dim(), widths, cfg.activation, cfg.seed);
  // Start the prediction layer at the mean target.
  if (w.task == FieldTask::scf) w.decoder.layers().back().b = tr.targets.rowwise().mean();

  LayerAdam adam(w.decoder.layers(), {.lr = cfg.lr});
  const Eigen::Index n = tr.inputs.cols();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  RegressorWeights last_finite = w;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.set_lr(cfg.lr * std::pow(cfg.final_lr_factor, double(epoch) / std::max(1, cfg.epochs - 1)));
    std::shuffle(perm.begin(), perm.end(), rng);
    double total = 0.0;
    for (Eigen::Index b0 = 0; b0 < n; b0 += cfg.batch) {
      const Eigen::Index bn = std::min<Eigen::Index>(cfg.batch, n - b0);
      Eigen::MatrixXd x(tr.inputs.rows(), bn), y(tr.targets.rows(), bn);
      for (Eigen::Index i = 0; i < bn; ++i) {
        x.col(i) = tr.inputs.col(perm[static_cast<std::size_t>(b0 + i)]);
        y.col(i) = tr.targets.col(perm[static_cast<std::size_t>(b0 + i)]);
      }
      auto acts = w.decoder.forward(x);
      Eigen::MatrixXd g;
      total += batch_loss(w.task, acts.back(), y, &g) * double(bn);
      std::vector<Eigen::MatrixXd> seeds(acts.size());
      seeds.back() = g;
      std::vector<DenseLayer> grads;
      w.decoder.backward(x, acts, seeds, &grads);
      adam.step(w.decoder.layers(), grads);
    }
    const double loss = total / double(n);
    bool finite = std::isfinite(loss);
    for (const auto& l : w.decoder.layers()) finite = finite && l.w.allFinite() && l.b.allFinite();
    if (!finite) throw TrainingDiverged(last_finite, epoch);
    w.meta.loss_curve.push_back(loss);
    last_finite = w;
    if (cfg.verbose) std::fprintf(stderr, "epoch %d loss %.5f\n", epoch, loss);
  }

  w.meta.epochs = cfg.epochs;
  w.meta.train_examples = static_cast<std::size_t>(n);
  w.meta.holdout_examples = static_cast<std::size_t>(ho.inputs.cols());
  Eigen::MatrixXd pred = w.decoder.predict(ho.inputs);
  if (w.task == FieldTask::scf) {
    w.meta.holdout_r2 = r2_per_row(pred, ho.targets);
    w.meta.holdout_mean_r2 =
        std::accumulate(w.meta.holdout_r2.begin(), w.meta.holdout_r2.end(), 0.0) / double(w.meta.holdout_r2.size());
  } else {
    std::size_t right = 0;
    for (Eigen::Index c = 0; c < pred.cols(); ++c) right += (pred(0, c) > 0.0) == (ho.targets(0, c) > 0.5);
    w.meta.holdout_accuracy = double(right) / double(std::max<Eigen::Index>(1, pred.cols()));
  }
  w.meta.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return w;
}

}  // namespace nift
