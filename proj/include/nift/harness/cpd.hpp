#pragma once

#include "nift/geometry.hpp"

#include <Eigen/SVD>

#include <numbers>

namespace nift {

struct CpdConfig {
  double w_outlier = 0.0;  // uniform outlier weight in [0, 1)
  int max_iters = 200;
  double tol = 1e-10;  // relative change of the negative log-likelihood
};

struct CpdResult {
  RigidTransform transform;  // maps source onto target
  int iterations = 0;
  bool converged = false;
  double sigma2 = 0.0;
  double neg_log_likelihood = 0.0;
};

// Rigid coherent point drift: the target points are samples of a Gaussian
// mixture centred on the moving source points. EM alternates soft
// correspondences with the closed-form weighted Procrustes update.
inline CpdResult cpd_rigid_register(const Points& source, const Points& target, const CpdConfig& cfg = {}) {
  if (source.size() < 4 || target.size() < 4) throw Error("CPD needs at least 4 points per cloud");
  if (!(cfg.w_outlier >= 0.0 && cfg.w_outlier < 1.0)) throw Error("CPD outlier weight must be in [0, 1)");
  if (cfg.max_iters < 1) throw Error("CPD max_iters must be at least 1");
  const Eigen::Index m = static_cast<Eigen::Index>(source.size()), n = static_cast<Eigen::Index>(target.size());
  Eigen::Matrix3Xd y(3, m), x(3, n);
  for (Eigen::Index i = 0; i < m; ++i) y.col(i) = source[static_cast<std::size_t>(i)];
  for (Eigen::Index i = 0; i < n; ++i) x.col(i) = target[static_cast<std::size_t>(i)];

  CpdResult res;
  Mat3 r = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  double sigma2 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) sigma2 += (y.colwise() - x.col(i)).colwise().squaredNorm().sum();
  sigma2 /= 3.0 * double(m) * double(n);
  double prev = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd p(m, n);
  for (int it = 0; it < cfg.max_iters; ++it) {
    // E-step.
    const Eigen::Matrix3Xd ty = (r * y).colwise() + t;
    const double c = std::pow(2.0 * std::numbers::pi * sigma2, 1.5) * cfg.w_outlier / (1.0 - cfg.w_outlier) *
                     double(m) / double(n);
    double nll = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      p.col(j) = (-(ty.colwise() - x.col(j)).colwise().squaredNorm() / (2.0 * sigma2)).array().exp().transpose();
      const double den = p.col(j).sum() + c;
      nll -= std::log(std::max(den, std::numeric_limits<double>::min()));
      if (den > 0.0) p.col(j) /= den;
    }
    nll += 1.5 * double(n) * std::log(sigma2);
    res.iterations = it + 1;
    res.neg_log_likelihood = nll;
    if (std::abs(prev - nll) <= cfg.tol * std::abs(nll)) {
      res.converged = true;
      break;
    }
    prev = nll;

    // M-step.
    const Eigen::VectorXd pt1 = p.colwise().sum().transpose(), p1 = p.rowwise().sum();
    const double np = p1.sum();
    if (!(np > 0.0)) break;
    const Vec3 mu_x = x * pt1 / np, mu_y = y * p1 / np;
    const Eigen::Matrix3Xd xh = x.colwise() - mu_x, yh = y.colwise() - mu_y;
    const Mat3 a = xh * p.transpose() * yh.transpose();
    Eigen::JacobiSVD<Mat3> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 cdiag = Mat3::Identity();
    cdiag(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
    r = svd.matrixU() * cdiag * svd.matrixV().transpose();
    t = mu_x - r * mu_y;
    const double sxx = (xh.colwise().squaredNorm().transpose().array() * pt1.array()).sum();
    sigma2 = std::max((sxx - (a.transpose() * r).trace()) / (3.0 * np), 1e-14);
  }
  res.transform = {r, t};
  res.sigma2 = sigma2;
  return res;
}

}  // namespace nift
