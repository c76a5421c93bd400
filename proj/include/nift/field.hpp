#pragma once

#include "nift/bvh.hpp"
#include "nift/geometry.hpp"
#include "nift/io.hpp"
#include "nift/mlp.hpp"
#include "nift/parallel.hpp"
#include "nift/scf.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace nift {

// Object-conditioned descriptor fields f(x | O).

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 1099511628211ull;
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

// Box the field is defined over: the object's bounding box grown about its
// center.
inline Aabb field_domain(const Aabb& object_box, double factor = 1.5) { return object_box.scaled(factor); }

class DescriptorField {
 public:
  virtual ~DescriptorField() = default;

  virtual std::string backend() const = 0;
  virtual std::size_t dim() const = 0;
  virtual Eigen::VectorXd descriptor_at(const Vec3& x) const = 0;
  // Jacobian laid out 3 x dim: row a holds d f / d x_a.
  virtual Eigen::MatrixXd gradient_at(const Vec3& x) const = 0;
  // Identifies the field configuration (not the bound object).
  virtual std::string fingerprint() const = 0;
  virtual const Aabb& domain() const = 0;

  // ||target - f(x)||_1 and, optionally, its gradient in x with sign(0) = 0.
  virtual double l1_to(const Vec3& x, const Eigen::VectorXd& target, Vec3* grad) const {
    Eigen::VectorXd diff = descriptor_at(x) - target;
    if (grad) *grad = gradient_at(x) * diff.unaryExpr([](double v) { return double((v > 0) - (v < 0)); });
    return diff.cwiseAbs().sum();
  }

  double scene_diameter() const { return domain().extent().norm() / 1.5; }

  void require_in_domain(const Vec3& x) const {
    if (!domain().contains(x, 1e-9 * scene_diameter())) throw Error("query outside the field domain");
  }
};

// Point where the segment from the box centre to x leaves the box (x itself
// when inside). With `jac`, also d clamp / d x (3 x 3).
inline Vec3 clamp_to_box(const Aabb& box, const Vec3& x, Mat3* jac = nullptr) {
  const Vec3 c = box.center(), half = 0.5 * box.extent(), d = x - c;
  double s = 1.0;
  int axis = -1;
  for (int a = 0; a < 3; ++a)
    if (std::abs(d[a]) > half[a] && half[a] / std::abs(d[a]) < s) {
      s = half[a] / std::abs(d[a]);
      axis = a;
    }
  if (jac) {
    jac->setIdentity();
    if (axis >= 0) {
      // s depends on d[axis] only: ds/dd_a = -s / d_a.
      *jac *= s;
      jac->col(axis) -= (s / d[axis]) * d;
    }
  }
  return axis < 0 ? x : Vec3(c + s * d);
}

inline Vec3 clamp_to_domain(const DescriptorField& f, const Vec3& x) { return clamp_to_box(f.domain(), x); }
inline double outside_distance(const DescriptorField& f, const Vec3& x) { return (x - clamp_to_domain(f, x)).norm(); }

// ---------------------------------------------------------------- analytic

struct AnalyticFieldConfig {
  ScfConfig scf;
  // Nodes per axis of a trilinear cache over the domain; 0 evaluates SCF
  // directly at every query.
  int lattice = 0;
  double domain_scale = 1.5;

  std::string fingerprint() const {
    std::string f = "analytic:" + scf.fingerprint();
    if (lattice > 0) f += ":lattice=" + std::to_string(lattice);
    return f;
  }
};

class AnalyticField : public DescriptorField {
 public:
  AnalyticField(Geometry geom, AnalyticFieldConfig cfg = {})
      : accel_(std::make_shared<RayAccelerator>(std::move(geom))), cfg_(cfg), eval_(cfg.scf) {
    domain_ = field_domain(accel_->bounds(), cfg_.domain_scale);
    diameter_ = 2.0 * accel_->bounding_sphere().radius;
    if (cfg_.lattice == 1 || cfg_.lattice < 0) throw Error("lattice needs at least 2 nodes per axis");
    if (cfg_.lattice > 0) build_lattice();
  }

  std::string backend() const override { return "analytic"; }
  std::size_t dim() const override { return static_cast<std::size_t>(cfg_.scf.order + 1); }
  std::string fingerprint() const override { return cfg_.fingerprint(); }
  const Aabb& domain() const override { return domain_; }
  const AnalyticFieldConfig& config() const { return cfg_; }
  const RayAccelerator& accelerator() const { return *accel_; }

  Eigen::VectorXd descriptor_at(const Vec3& x) const override {
    if (cfg_.lattice > 0) return interpolate(x, nullptr);
    return eval_(*accel_, x).powers;
  }

  Eigen::MatrixXd gradient_at(const Vec3& x) const override {
    require_in_domain(x);
    Eigen::MatrixXd j(3, dim());
    if (cfg_.lattice > 0) {
      interpolate(x, &j);
      return j;
    }
    const double h = 1e-3 * diameter_;
    for (int a = 0; a < 3; ++a) {
      Vec3 e = Vec3::Zero();
      e[a] = h;
      j.row(a) = ((eval_(*accel_, x + e).powers - eval_(*accel_, x - e).powers) / (2.0 * h)).transpose();
    }
    return j;
  }

 private:
  void build_lattice() {
    const int n = cfg_.lattice;
    step_ = domain_.extent() / (n - 1);
    values_.resize(static_cast<Eigen::Index>(dim()), static_cast<Eigen::Index>(n) * n * n);
    parallel_for(static_cast<std::size_t>(n) * n * n, [&](std::size_t id) {
      const int i = static_cast<int>(id / (n * n)), j = static_cast<int>(id / n % n), k = static_cast<int>(id % n);
      Vec3 p = domain_.lo + step_.cwiseProduct(Vec3(double(i), double(j), double(k)));
      values_.col(static_cast<Eigen::Index>(id)) = eval_(*accel_, p).powers;
    });
  }

  Eigen::VectorXd interpolate(const Vec3& x, Eigen::MatrixXd* jac) const {
    require_in_domain(x);
    const int n = cfg_.lattice;
    int idx[3];
    double frac[3];
    for (int a = 0; a < 3; ++a) {
      double u = std::clamp((x[a] - domain_.lo[a]) / step_[a], 0.0, double(n - 1));
      idx[a] = std::min(static_cast<int>(u), n - 2);
      frac[a] = u - idx[a];
    }
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
    if (jac) jac->setZero();
    for (int c = 0; c < 8; ++c) {
      const int di = c & 1, dj = (c >> 1) & 1, dk = (c >> 2) & 1;
      const double wx = di ? frac[0] : 1 - frac[0], wy = dj ? frac[1] : 1 - frac[1], wz = dk ? frac[2] : 1 - frac[2];
      const auto col = values_.col((static_cast<Eigen::Index>(idx[0] + di) * n + idx[1] + dj) * n + idx[2] + dk);
      out += wx * wy * wz * col;
      if (jac) {
        jac->row(0) += ((di ? 1.0 : -1.0) / step_[0] * wy * wz) * col.transpose();
        jac->row(1) += ((dj ? 1.0 : -1.0) / step_[1] * wx * wz) * col.transpose();
        jac->row(2) += ((dk ? 1.0 : -1.0) / step_[2] * wx * wy) * col.transpose();
      }
    }
    return out;
  }

  std::shared_ptr<const RayAccelerator> accel_;
  AnalyticFieldConfig cfg_;
  ScfEvaluator eval_;
  Aabb domain_;
  double diameter_ = 0.0;
  Vec3 step_ = Vec3::Zero();
  Eigen::MatrixXd values_;
};

inline std::unique_ptr<AnalyticField> analytic_field(const Geometry& geom, const AnalyticFieldConfig& cfg = {}) {
  return std::make_unique<AnalyticField>(geom, cfg);
}

// ---------------------------------------------------------------- encoder

// Rotation-equivariant pooling over the object cloud. Each point of the
// centered, RMS-normalized cloud is lifted by K radial basis functions;
// mean pooling yields scalars s_k, vectors v_k and matrices M_k. A query
// enters the decoder only through invariants of (x, v_k, M_k).
struct EncoderConfig {
  int channels = 8;
  double r_max = 2.5;
  double sigma = 0.36;
  int cloud_points = 512;

  int query_dim() const { return 1 + 3 * channels; }
  int object_dim() const { return 4 * channels; }
  int input_dim() const { return query_dim() + object_dim(); }
};

struct ShapeEmbedding {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;
  std::vector<Vec3> v;
  std::vector<Mat3> m;
  Eigen::VectorXd object_features;
};

inline ShapeEmbedding encode_shape(const Points& cloud, const EncoderConfig& cfg) {
  if (cloud.size() < 4) throw Error("object cloud needs at least 4 points");
  ShapeEmbedding e;
  e.center = centroid(cloud);
  double ss = 0.0;
  for (const auto& p : cloud) ss += (p - e.center).squaredNorm();
  e.scale = std::sqrt(ss / static_cast<double>(cloud.size()));
  if (!(e.scale > 1e-12)) throw Error("degenerate object cloud");
  const int k = cfg.channels;
  e.v.assign(k, Vec3::Zero());
  e.m.assign(k, Mat3::Zero());
  Eigen::VectorXd s = Eigen::VectorXd::Zero(k);
  for (const auto& p : cloud) {
    Vec3 q = (p - e.center) / e.scale;
    const double r = q.norm();
    const Mat3 qq = q * q.transpose();
    for (int c = 0; c < k; ++c) {
      const double mu = cfg.r_max * c / std::max(1, k - 1);
      const double phi = std::exp(-0.5 * (r - mu) * (r - mu) / (cfg.sigma * cfg.sigma));
      s[c] += phi;
      e.v[c] += phi * q;
      e.m[c] += phi * qq;
    }
  }
  const double inv = 1.0 / static_cast<double>(cloud.size());
  e.object_features.resize(cfg.object_dim());
  for (int c = 0; c < k; ++c) {
    e.v[c] *= inv;
    e.m[c] *= inv;
    e.object_features[c] = s[c] * inv;
    e.object_features[k + c] = e.m[c].trace();
    e.object_features[2 * k + c] = e.v[c].squaredNorm();
    e.object_features[3 * k + c] = e.v[c].dot(e.m[c] * e.v[c]);
  }
  return e;
}

// Query invariants [|x|^2, v_k.x, x^T M_k x, v_k^T M_k x] and their
// Jacobian in world coordinates (query_dim x 3).
inline void query_features(const ShapeEmbedding& e, const Vec3& x, Eigen::Ref<Eigen::VectorXd> out,
                           Eigen::MatrixXd* jac = nullptr) {
  const int k = static_cast<int>(e.v.size());
  const Vec3 q = (x - e.center) / e.scale;
  const double inv = 1.0 / e.scale;
  out[0] = q.squaredNorm();
  if (jac) {
    jac->resize(1 + 3 * k, 3);
    jac->row(0) = 2.0 * inv * q.transpose();
  }
  for (int c = 0; c < k; ++c) {
    const Vec3 mq = e.m[c] * q, mv = e.m[c] * e.v[c];
    out[1 + c] = e.v[c].dot(q);
    out[1 + k + c] = q.dot(mq);
    out[1 + 2 * k + c] = mv.dot(q);
    if (jac) {
      jac->row(1 + c) = inv * e.v[c].transpose();
      jac->row(1 + k + c) = 2.0 * inv * mq.transpose();
      jac->row(1 + 2 * k + c) = inv * mv.transpose();
    }
  }
}

// ---------------------------------------------------------------- weights

enum class FieldTask { scf, occupancy };

inline std::string to_string(FieldTask t) { return t == FieldTask::scf ? "scf" : "occupancy"; }
inline FieldTask field_task_from_string(const std::string& s) {
  if (s == "scf") return FieldTask::scf;
  if (s == "occupancy") return FieldTask::occupancy;
  throw Error("unknown field task: " + s);
}

struct TrainingMeta {
  int epochs = 0;
  std::vector<double> loss_curve;
  std::vector<double> holdout_r2;  // per band, scf task
  double holdout_mean_r2 = 0.0;
  double holdout_accuracy = 0.0;  // occupancy task
  std::size_t train_examples = 0, holdout_examples = 0;
  double seconds = 0.0;
};

struct RegressorWeights {
  FieldTask task = FieldTask::scf;
  EncoderConfig encoder;
  Eigen::VectorXd input_mean, input_std;
  Mlp decoder;
  ScfConfig scf;  // target definition for the scf task
  TrainingMeta meta;

  void check() const {
    decoder.check();
    if (decoder.input_dim() != encoder.input_dim()) throw Error("decoder input does not match encoder");
    if (input_mean.size() != encoder.input_dim() || input_std.size() != encoder.input_dim())
      throw Error("input normalization shape mismatch");
    if ((input_std.array() <= 0.0).any()) throw Error("input scale must be positive");
    if (task == FieldTask::scf && decoder.output_dim() != scf.order + 1)
      throw Error("decoder output does not match SCF order");
  }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a(to_string(task).data(), to_string(task).size());
    auto mix = [&](const double* p, std::size_t n) { h = fnv1a(p, n * sizeof(double), h); };
    mix(input_mean.data(), input_mean.size());
    mix(input_std.data(), input_std.size());
    for (const auto& l : decoder.layers()) {
      mix(l.w.data(), l.w.size());
      mix(l.b.data(), l.b.size());
    }
    return h;
  }
};

inline nlohmann::json to_json(const TrainingMeta& m) {
  return {{"epochs", m.epochs},
          {"loss_curve", m.loss_curve},
          {"holdout_r2", m.holdout_r2},
          {"holdout_mean_r2", m.holdout_mean_r2},
          {"holdout_accuracy", m.holdout_accuracy},
          {"train_examples", m.train_examples},
          {"holdout_examples", m.holdout_examples},
          {"seconds", m.seconds}};
}

inline TrainingMeta training_meta_from_json(const nlohmann::json& j) {
  TrainingMeta m;
  m.epochs = j.at("epochs");
  m.loss_curve = j.at("loss_curve").get<std::vector<double>>();
  m.holdout_r2 = j.at("holdout_r2").get<std::vector<double>>();
  m.holdout_mean_r2 = j.at("holdout_mean_r2");
  m.holdout_accuracy = j.at("holdout_accuracy");
  m.train_examples = j.at("train_examples");
  m.holdout_examples = j.at("holdout_examples");
  m.seconds = j.at("seconds");
  return m;
}

// Container: 8-byte magic, u64 header length, JSON header, then raw
// little-endian doubles in header order.
inline constexpr char kWeightsMagic[8] = {'N', 'I', 'F', 'T', 'W', 'G', 'T', '1'};
inline constexpr int kWeightsVersion = 1;

inline void save_weights(const std::filesystem::path& path, const RegressorWeights& w) {
  w.check();
  nlohmann::json h;
  h["version"] = kWeightsVersion;
  h["task"] = to_string(w.task);
  h["activation"] = to_string(w.decoder.activation());
  h["widths"] = w.decoder.widths();
  h["input_dim"] = w.decoder.input_dim();
  h["encoder"] = {{"channels", w.encoder.channels},
                  {"r_max", w.encoder.r_max},
                  {"sigma", w.encoder.sigma},
                  {"cloud_points", w.encoder.cloud_points}};
  h["scf"] = {{"order", w.scf.order}, {"dir_count", w.scf.dir_count}, {"scheme", to_string(w.scf.scheme)}};
  h["training"] = to_json(w.meta);
  h["tensors"] = nlohmann::json::array({"input_mean", "input_std", "decoder (w row-major, b) per layer"});
  const std::string header = h.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(kWeightsMagic, 8);
  const std::uint64_t len = header.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  auto put = [&](double v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
  for (double v : w.input_mean) put(v);
  for (double v : w.input_std) put(v);
  for (const auto& l : w.decoder.layers()) {
    for (Eigen::Index r = 0; r < l.w.rows(); ++r)
      for (Eigen::Index c = 0; c < l.w.cols(); ++c) put(l.w(r, c));
    for (double v : l.b) put(v);
  }
}

inline RegressorWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open weights " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kWeightsMagic, 8) != 0) throw Error("not a field weights file: " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 30)) throw Error("corrupt weights header");
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  nlohmann::json h = nlohmann::json::parse(header);
  if (h.at("version") != kWeightsVersion) throw Error("unsupported weights version");
  RegressorWeights w;
  w.task = field_task_from_string(h.at("task"));
  const auto& e = h.at("encoder");
  w.encoder = {e.at("channels"), e.at("r_max"), e.at("sigma"), e.at("cloud_points")};
  const auto& s = h.at("scf");
  w.scf = {s.at("order"), s.at("dir_count"), direction_scheme_from_string(s.at("scheme"))};
  w.meta = training_meta_from_json(h.at("training"));
  const int in_dim = h.at("input_dim");
  auto get = [&] {
    double v;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw Error("truncated weights file");
    return v;
  };
  w.input_mean.resize(in_dim);
  w.input_std.resize(in_dim);
  for (auto& v : w.input_mean) v = get();
  for (auto& v : w.input_std) v = get();
  std::vector<DenseLayer> layers;
  int prev = in_dim;
  for (int width : h.at("widths").get<std::vector<int>>()) {
    DenseLayer l{Eigen::MatrixXd(width, prev), Eigen::VectorXd(width)};
    for (int r = 0; r < width; ++r)
      for (int c = 0; c < prev; ++c) l.w(r, c) = get();
    for (auto& v : l.b) v = get();
    layers.push_back(std::move(l));
    prev = width;
  }
  w.decoder = Mlp(std::move(layers), activation_from_string(h.at("activation")));
  w.check();
  return w;
}

// ---------------------------------------------------------------- learned

struct LearnedFieldOptions {
  bool include_output = true;   // concatenate the prediction layer too
  bool pre_activation = false;  // concatenate values before the nonlinearity
  double domain_scale = 1.5;
};

// Descriptor = concatenated decoder activations at (x, eps(O)); eps(O) is
// computed once at binding.
class LearnedField : public DescriptorField {
 public:
  LearnedField(std::shared_ptr<const RegressorWeights> weights, const Points& cloud, LearnedFieldOptions opt = {})
      : w_(std::move(weights)), opt_(opt) {
    w_->check();
    emb_ = encode_shape(cloud, w_->encoder);
    Aabb box;
    for (const auto& p : cloud) box.extend(p);
    domain_ = field_domain(box, opt_.domain_scale);
    for (int width : w_->decoder.widths()) dim_ += width;
    if (!opt_.include_output) dim_ -= w_->decoder.output_dim();
    // Object part of the standardized input is fixed per binding.
    const int qd = w_->encoder.query_dim();
    input_ = Eigen::VectorXd(w_->encoder.input_dim());
    input_.tail(w_->encoder.object_dim()) =
        (emb_.object_features - w_->input_mean.tail(w_->encoder.object_dim()))
            .cwiseQuotient(w_->input_std.tail(w_->encoder.object_dim()));
    inv_std_q_ = w_->input_std.head(qd).cwiseInverse();
  }

  std::string backend() const override { return "learned"; }
  std::size_t dim() const override { return dim_; }
  const Aabb& domain() const override { return domain_; }
  const ShapeEmbedding& embedding() const { return emb_; }
  const RegressorWeights& weights() const { return *w_; }

  std::string fingerprint() const override {
    std::string f = "learned:" + to_string(w_->task) + ":" + hex64(w_->hash());
    if (!opt_.include_output) f += ":no-output";
    if (opt_.pre_activation) f += ":pre";
    return f;
  }

  Eigen::VectorXd input_at(const Vec3& x, Eigen::MatrixXd* jac = nullptr) const {
    Eigen::VectorXd u = input_;
    const int qd = w_->encoder.query_dim();
    query_features(emb_, x, u.head(qd), jac);
    u.head(qd) = (u.head(qd) - w_->input_mean.head(qd)).cwiseProduct(inv_std_q_);
    if (jac) *jac = inv_std_q_.asDiagonal() * *jac;
    return u;
  }

  // Prediction-layer output (regressed SCF powers or occupancy logit).
  Eigen::VectorXd predict(const Vec3& x) const { return w_->decoder.predict(input_at(x)); }

  Eigen::VectorXd descriptor_at(const Vec3& x) const override {
    std::vector<Eigen::MatrixXd> pre;
    auto acts = w_->decoder.forward(input_at(x), opt_.pre_activation ? &pre : nullptr);
    return concat(opt_.pre_activation ? pre : acts);
  }

  // Reverse accumulation: one backward pass per descriptor entry.
  Eigen::MatrixXd gradient_at(const Vec3& x) const override {
    require_in_domain(x);
    Eigen::MatrixXd dq;
    Eigen::MatrixXd u = input_at(x, &dq);
    std::vector<Eigen::MatrixXd> pre;
    auto acts = w_->decoder.forward(u, opt_.pre_activation ? &pre : nullptr);
    const Eigen::Index d = static_cast<Eigen::Index>(dim_);
    const Eigen::MatrixXd ub = u.replicate(1, d);
    std::vector<Eigen::MatrixXd> acts_b;
    for (const auto& a : acts) acts_b.push_back(a.replicate(1, d));
    std::vector<Eigen::MatrixXd> seeds = split(Eigen::MatrixXd::Identity(d, d));
    Eigen::MatrixXd adj = opt_.pre_activation ? w_->decoder.backward(ub, acts_b, {}, nullptr, seeds)
                                              : w_->decoder.backward(ub, acts_b, seeds);
    const int qd = w_->encoder.query_dim();
    return (adj.topRows(qd).transpose() * dq).transpose();
  }

  // Forward-mode Jacobian (3 x dim), used to cross-check the reverse pass.
  Eigen::MatrixXd gradient_forward_at(const Vec3& x) const {
    Eigen::MatrixXd dq;
    Eigen::MatrixXd u = input_at(x, &dq);
    auto acts = w_->decoder.forward(u);
    Eigen::MatrixXd du = Eigen::MatrixXd::Zero(u.rows(), 3);
    du.topRows(w_->encoder.query_dim()) = dq;
    auto t = w_->decoder.tangents(acts, du);
    if (opt_.pre_activation) {
      // Tangent of z_i is W_i times the tangent of the previous activation.
      std::vector<Eigen::MatrixXd> tz;
      for (std::size_t i = 0; i < t.size(); ++i) tz.push_back(w_->decoder.layers()[i].w * (i == 0 ? du : t[i - 1]));
      t = std::move(tz);
    }
    Eigen::MatrixXd j(3, dim_);
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!opt_.include_output && w_->decoder.is_output(i)) break;
      j.middleCols(off, t[i].rows()) = t[i].transpose();
      off += t[i].rows();
    }
    return j;
  }

  double l1_to(const Vec3& x, const Eigen::VectorXd& target, Vec3* grad) const override {
    Eigen::MatrixXd dq;
    Eigen::MatrixXd u = input_at(x, grad ? &dq : nullptr);
    std::vector<Eigen::MatrixXd> pre;
    auto acts = w_->decoder.forward(u, opt_.pre_activation ? &pre : nullptr);
    Eigen::VectorXd diff = concat(opt_.pre_activation ? pre : acts) - target;
    if (grad) {
      Eigen::MatrixXd sg = diff.unaryExpr([](double v) { return double((v > 0) - (v < 0)); });
      auto seeds = split(sg);
      Eigen::MatrixXd adj = opt_.pre_activation ? w_->decoder.backward(u, acts, {}, nullptr, seeds)
                                                : w_->decoder.backward(u, acts, seeds);
      *grad = dq.transpose() * adj.topRows(w_->encoder.query_dim()).col(0);
    }
    return diff.cwiseAbs().sum();
  }

 private:
  Eigen::VectorXd concat(const std::vector<Eigen::MatrixXd>& layers) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(dim_));
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (!opt_.include_output && w_->decoder.is_output(i)) break;
      out.segment(off, layers[i].rows()) = layers[i].col(0);
      off += layers[i].rows();
    }
    return out;
  }

  // Splits rows of a (dim x k) adjoint into per-layer seeds.
  std::vector<Eigen::MatrixXd> split(const Eigen::MatrixXd& g) const {
    std::vector<Eigen::MatrixXd> seeds;
    Eigen::Index off = 0;
    for (std::size_t i = 0; i < w_->decoder.layers().size(); ++i) {
      if (!opt_.include_output && w_->decoder.is_output(i)) {
        seeds.emplace_back();
        break;
      }
      const Eigen::Index rows = w_->decoder.layers()[i].w.rows();
      seeds.push_back(g.middleRows(off, rows));
      off += rows;
    }
    return seeds;
  }

  std::shared_ptr<const RegressorWeights> w_;
  LearnedFieldOptions opt_;
  ShapeEmbedding emb_;
  Aabb domain_;
  std::size_t dim_ = 0;
  Eigen::VectorXd input_, inv_std_q_;
};

inline Points object_cloud(const Geometry& g, const EncoderConfig& cfg, std::uint64_t seed = 0) {
  return sample_surface(g, static_cast<std::size_t>(cfg.cloud_points), seed);
}

inline std::unique_ptr<LearnedField> learned_field(std::shared_ptr<const RegressorWeights> weights,
                                                   const Points& cloud, LearnedFieldOptions opt = {}) {
  return std::make_unique<LearnedField>(std::move(weights), cloud, opt);
}

// ---------------------------------------------------------------- heatmap

struct GridSpec {
  Aabb box;
  int res = 24;
};

struct Heatmap {
  Points points;
  std::vector<double> values;
  std::vector<Rgb> colors;

  std::size_t argmin() const {
    return static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
  }
};

// Blue (low) to red (high); a constant field maps to blue.
inline std::vector<Rgb> blue_red_ramp(const std::vector<double>& v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::vector<Rgb> c(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double t = *hi > *lo ? (v[i] - *lo) / (*hi - *lo) : 0.0;
    c[i] = {static_cast<std::uint8_t>(std::lround(255 * t)), 0, static_cast<std::uint8_t>(std::lround(255 * (1 - t)))};
  }
  return c;
}

// Per grid point g: ||f_A(x) - f_B(g)||_1.
inline Heatmap export_heatmap(const DescriptorField& a, const Vec3& x, const DescriptorField& b, const GridSpec& grid,
                              const std::filesystem::path& out = {}) {
  if (grid.res < 2) throw Error("heatmap grid needs at least 2 nodes per axis");
  if (a.dim() != b.dim()) throw Error("heatmap fields have different descriptor sizes");
  const Eigen::VectorXd fx = a.descriptor_at(x);
  const int n = grid.res;
  const Vec3 step = grid.box.extent() / (n - 1);
  Heatmap h;
  const std::size_t total = static_cast<std::size_t>(n) * n * n;
  h.points.resize(total);
  h.values.resize(total);
  parallel_for(total, [&](std::size_t id) {
    const int i = static_cast<int>(id / (n * n)), j = static_cast<int>(id / n % n), k = static_cast<int>(id % n);
    h.points[id] = grid.box.lo + step.cwiseProduct(Vec3(double(i), double(j), double(k)));
    h.values[id] = (fx - b.descriptor_at(h.points[id])).cwiseAbs().sum();
  });
  h.colors = blue_red_ramp(h.values);
  if (!out.empty()) write_ply(out, h.points, {}, {.binary = false, .colors = &h.colors, .scalars = {{"difference", &h.values}}});
  return h;
}

}  // namespace nift
