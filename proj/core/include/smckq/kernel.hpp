#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <variant>

#include "smckq/linalg.hpp"

namespace smckq {

class Rng;

/// Gaussian (squared-exponential) kernel without amplitude:
/// k(x, y) = exp(-sum_j (x_j - y_j)^2 / l_j^2).
struct GaussianKernelParams {
  Vector lengthscales;

  static GaussianKernelParams isotropic(Eigen::Index dim, double lengthscale);

  Eigen::Index dim() const { return lengthscales.size(); }
  void validate() const;
  double eval(const Vector& x, const Vector& y) const;
};

/// Product of independent normals N(mean_j, std_j^2).
struct GaussianMeasure {
  Vector mean;
  Vector std;

  static GaussianMeasure standard(Eigen::Index dim);
  static GaussianMeasure isotropic(Eigen::Index dim, double mean, double std);

  Eigen::Index dim() const { return mean.size(); }
  void validate() const;
  double log_density(const Vector& x) const;
  Vector sample(Rng& rng) const;
};

using ScoreFunction = std::function<Vector(const Vector&)>;

/// Langevin-Stein kernel built from a Gaussian base kernel and the score
/// (gradient of the log target density).
struct SteinKernelSpec {
  GaussianKernelParams base;
  ScoreFunction score;
};

/// Base kernel value and its coordinate-wise partials at (theta, phi).
struct SteinBaseDerivatives {
  double value = 0.0;
  Vector d_theta;        // dk/dtheta_j
  Vector d_phi;          // dk/dphi_j
  Vector d_theta_d_phi;  // d^2k/dtheta_j dphi_j
};

SteinBaseDerivatives stein_base_derivatives(const GaussianKernelParams& base, const Vector& theta,
                                            const Vector& phi);

/// Rows of `points` (n x d) plus any per-point data the kernel needs. For the
/// Stein variant `scores` holds u(x_i) in row i so the score function runs once
/// per point no matter how many Gram matrices the point enters.
struct PreparedPoints {
  Matrix points;
  Matrix scores;

  Eigen::Index size() const { return points.rows(); }
  PreparedPoints subset(std::span<const std::size_t> rows) const;
};

/// A kernel together with the measure it is integrated against.
///
/// Two variants exist: a Gaussian kernel against a diagonal Gaussian measure
/// (closed-form embeddings) and a Stein kernel, whose embeddings are
/// identically 1 under the target whose score it was built from.
/// Immutable after construction; safe to share across threads provided the
/// score function is itself thread-safe.
class KernelHandle {
 public:
  enum class Variant { kGaussian, kStein };

  static KernelHandle gaussian(GaussianKernelParams params, GaussianMeasure measure);
  static KernelHandle stein(SteinKernelSpec spec);

  Variant variant() const;
  Eigen::Index dim() const { return base().dim(); }
  /// Gaussian kernel (Gaussian variant) or base kernel (Stein variant).
  const GaussianKernelParams& base() const;
  /// Null for the Stein variant.
  const GaussianMeasure* measure() const;

  /// Same kernel family with new lengthscales.
  KernelHandle with_lengthscales(const Vector& lengthscales) const;

  double eval(const Vector& x, const Vector& y) const;
  /// z(x) = integral of k(x', x) against the measure.
  double mean_embedding(const Vector& x) const;
  /// Integral of k against the product measure; equals e_0^2.
  double double_integral() const;

  PreparedPoints prepare(const Matrix& points) const;
  Matrix gram(const PreparedPoints& pts) const;
  Vector embeddings(const PreparedPoints& pts) const;
  /// k(a_i, b_j) for prepared rows.
  double eval_prepared(const PreparedPoints& a, Eigen::Index i, const PreparedPoints& b,
                       Eigen::Index j) const;

 private:
  struct GaussianVariant {
    GaussianKernelParams params;
    GaussianMeasure measure;
  };
  struct SteinVariant {
    SteinKernelSpec spec;
  };

  explicit KernelHandle(std::variant<GaussianVariant, SteinVariant> impl) : impl_(std::move(impl)) {}

  void check_point(const Vector& x) const;

  std::variant<GaussianVariant, SteinVariant> impl_;
};

/// Stein kernel value given precomputed scores u_theta = u(theta), u_phi = u(phi).
double stein_kernel_eval(const GaussianKernelParams& base, const Eigen::Ref<const Vector>& theta,
                         const Eigen::Ref<const Vector>& u_theta,
                         const Eigen::Ref<const Vector>& phi,
                         const Eigen::Ref<const Vector>& u_phi);

}  // namespace smckq
