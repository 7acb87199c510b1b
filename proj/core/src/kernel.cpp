#include "smckq/kernel.hpp"

#include <cmath>
#include <numbers>

#include "smckq/error.hpp"
#include "smckq/rng.hpp"

namespace smckq {

namespace {

void check_finite(const Vector& v, const char* what) {
  require(v.allFinite(), ErrorCode::kNonFinite, std::string(what) + " has non-finite entries");
}

void check_dim(Eigen::Index got, Eigen::Index want, const char* what) {
  require(got == want, ErrorCode::kDimensionMismatch,
          std::string(what) + ": expected dimension " + std::to_string(want) + ", got " +
              std::to_string(got));
}

// Squared scaled distance; (x - y)^2 == (y - x)^2 exactly, so the kernel is
// bitwise symmetric.
template <typename A, typename B>
double scaled_sq_dist(const A& x, const B& y, const Vector& ell) {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < ell.size(); ++j) {
    const double d = x(j) - y(j);
    acc += d * d / (ell(j) * ell(j));
  }
  return acc;
}

}  // namespace

GaussianKernelParams GaussianKernelParams::isotropic(Eigen::Index dim, double lengthscale) {
  GaussianKernelParams p{Vector::Constant(dim, lengthscale)};
  p.validate();
  return p;
}

void GaussianKernelParams::validate() const {
  require(lengthscales.size() >= 1, ErrorCode::kInvalidArgument, "kernel needs >= 1 lengthscale");
  for (Eigen::Index j = 0; j < lengthscales.size(); ++j) {
    require(std::isfinite(lengthscales(j)) && lengthscales(j) > 0.0,
            ErrorCode::kInvalidArgument, "lengthscales must be positive and finite");
  }
}

double GaussianKernelParams::eval(const Vector& x, const Vector& y) const {
  return std::exp(-scaled_sq_dist(x, y, lengthscales));
}

GaussianMeasure GaussianMeasure::standard(Eigen::Index dim) { return isotropic(dim, 0.0, 1.0); }

GaussianMeasure GaussianMeasure::isotropic(Eigen::Index dim, double mean, double std) {
  GaussianMeasure m{Vector::Constant(dim, mean), Vector::Constant(dim, std)};
  m.validate();
  return m;
}

void GaussianMeasure::validate() const {
  require(mean.size() >= 1 && mean.size() == std.size(), ErrorCode::kDimensionMismatch,
          "measure mean/std dimensions differ");
  check_finite(mean, "measure mean");
  for (Eigen::Index j = 0; j < std.size(); ++j) {
    require(std::isfinite(std(j)) && std(j) > 0.0, ErrorCode::kInvalidArgument,
            "measure std must be positive and finite");
  }
}

double GaussianMeasure::log_density(const Vector& x) const {
  check_dim(x.size(), dim(), "GaussianMeasure::log_density");
  double acc = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double r = (x(j) - mean(j)) / std(j);
    acc += -0.5 * r * r - std::log(std(j)) - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return acc;
}

Vector GaussianMeasure::sample(Rng& rng) const {
  Vector x(dim());
  for (Eigen::Index j = 0; j < dim(); ++j) x(j) = mean(j) + std(j) * rng.normal();
  return x;
}

SteinBaseDerivatives stein_base_derivatives(const GaussianKernelParams& base, const Vector& theta,
                                            const Vector& phi) {
  check_dim(theta.size(), base.dim(), "stein_base_derivatives theta");
  check_dim(phi.size(), base.dim(), "stein_base_derivatives phi");
  SteinBaseDerivatives out;
  out.value = base.eval(theta, phi);
  const auto d = base.dim();
  out.d_theta.resize(d);
  out.d_phi.resize(d);
  out.d_theta_d_phi.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double l2 = base.lengthscales(j) * base.lengthscales(j);
    const double diff = theta(j) - phi(j);
    out.d_theta(j) = -2.0 / l2 * diff * out.value;
    out.d_phi(j) = 2.0 / l2 * diff * out.value;
    out.d_theta_d_phi(j) = (2.0 * l2 - 4.0 * diff * diff) / (l2 * l2) * out.value;
  }
  return out;
}

double stein_kernel_eval(const GaussianKernelParams& base, const Eigen::Ref<const Vector>& theta,
                         const Eigen::Ref<const Vector>& u_theta,
                         const Eigen::Ref<const Vector>& phi,
                         const Eigen::Ref<const Vector>& u_phi) {
  const Vector& ell = base.lengthscales;
  const double kb = std::exp(-scaled_sq_dist(theta, phi, ell));
  double acc = 1.0;
  for (Eigen::Index j = 0; j < ell.size(); ++j) {
    const double l2 = ell(j) * ell(j);
    const double diff = theta(j) - phi(j);
    const double mixed = (2.0 * l2 - 4.0 * diff * diff) / (l2 * l2) * kb;
    const double grad = 2.0 / l2 * diff * kb;  // dk/dphi_j; dk/dtheta_j = -grad
    // The two cross terms swap under (theta, phi) exchange; adding them as a
    // pair keeps the result bitwise symmetric.
    const double cross = u_theta(j) * grad + u_phi(j) * (-grad);
    acc += mixed + cross + u_theta(j) * u_phi(j) * kb;
  }
  return acc;
}

PreparedPoints PreparedPoints::subset(std::span<const std::size_t> rows) const {
  PreparedPoints out;
  out.points.resize(static_cast<Eigen::Index>(rows.size()), points.cols());
  out.scores.resize(scores.cols() > 0 ? static_cast<Eigen::Index>(rows.size()) : 0, scores.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    out.points.row(static_cast<Eigen::Index>(i)) = points.row(r);
    if (scores.cols() > 0) out.scores.row(static_cast<Eigen::Index>(i)) = scores.row(r);
  }
  return out;
}

KernelHandle KernelHandle::gaussian(GaussianKernelParams params, GaussianMeasure measure) {
  params.validate();
  measure.validate();
  check_dim(measure.dim(), params.dim(), "measure");
  return KernelHandle(GaussianVariant{std::move(params), std::move(measure)});
}

KernelHandle KernelHandle::stein(SteinKernelSpec spec) {
  spec.base.validate();
  require(static_cast<bool>(spec.score), ErrorCode::kInvalidArgument,
          "Stein kernel needs a score function");
  return KernelHandle(SteinVariant{std::move(spec)});
}

KernelHandle::Variant KernelHandle::variant() const {
  return std::holds_alternative<GaussianVariant>(impl_) ? Variant::kGaussian : Variant::kStein;
}

const GaussianKernelParams& KernelHandle::base() const {
  if (const auto* g = std::get_if<GaussianVariant>(&impl_)) return g->params;
  return std::get<SteinVariant>(impl_).spec.base;
}

const GaussianMeasure* KernelHandle::measure() const {
  if (const auto* g = std::get_if<GaussianVariant>(&impl_)) return &g->measure;
  return nullptr;
}

KernelHandle KernelHandle::with_lengthscales(const Vector& lengthscales) const {
  GaussianKernelParams p{lengthscales};
  p.validate();
  check_dim(p.dim(), dim(), "with_lengthscales");
  if (const auto* g = std::get_if<GaussianVariant>(&impl_)) return gaussian(p, g->measure);
  return stein(SteinKernelSpec{p, std::get<SteinVariant>(impl_).spec.score});
}

void KernelHandle::check_point(const Vector& x) const {
  check_dim(x.size(), dim(), "kernel argument");
  check_finite(x, "kernel argument");
}

double KernelHandle::eval(const Vector& x, const Vector& y) const {
  check_point(x);
  check_point(y);
  if (const auto* g = std::get_if<GaussianVariant>(&impl_)) return g->params.eval(x, y);
  const auto& spec = std::get<SteinVariant>(impl_).spec;
  const Vector ux = spec.score(x);
  const Vector uy = spec.score(y);
  check_dim(ux.size(), dim(), "score");
  check_dim(uy.size(), dim(), "score");
  return stein_kernel_eval(spec.base, x, ux, y, uy);
}

double KernelHandle::mean_embedding(const Vector& x) const {
  check_point(x);
  const auto* g = std::get_if<GaussianVariant>(&impl_);
  if (g == nullptr) return 1.0;
  double acc = 1.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double l = g->params.lengthscales(j);
    const double s = g->measure.std(j);
    const double denom = 2.0 * s * s + l * l;
    const double r = x(j) - g->measure.mean(j);
    acc *= l / std::sqrt(denom) * std::exp(-r * r / denom);
  }
  return acc;
}

double KernelHandle::double_integral() const {
  const auto* g = std::get_if<GaussianVariant>(&impl_);
  if (g == nullptr) return 1.0;
  double acc = 1.0;
  for (Eigen::Index j = 0; j < dim(); ++j) {
    const double l = g->params.lengthscales(j);
    const double s = g->measure.std(j);
    acc *= l / std::sqrt(4.0 * s * s + l * l);
  }
  return acc;
}

PreparedPoints KernelHandle::prepare(const Matrix& points) const {
  check_dim(points.cols(), dim(), "points");
  require(points.allFinite(), ErrorCode::kNonFinite, "points have non-finite entries");
  PreparedPoints out{points, Matrix()};
  if (const auto* s = std::get_if<SteinVariant>(&impl_)) {
    out.scores.resize(points.rows(), points.cols());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      const Vector u = s->spec.score(points.row(i).transpose());
      check_dim(u.size(), dim(), "score");
      require(u.allFinite(), ErrorCode::kNonFinite, "score is non-finite at a point");
      out.scores.row(i) = u.transpose();
    }
  }
  return out;
}

double KernelHandle::eval_prepared(const PreparedPoints& a, Eigen::Index i,
                                   const PreparedPoints& b, Eigen::Index j) const {
  if (const auto* g = std::get_if<GaussianVariant>(&impl_)) {
    return std::exp(
        -scaled_sq_dist(a.points.row(i), b.points.row(j), g->params.lengthscales));
  }
  const auto& base = std::get<SteinVariant>(impl_).spec.base;
  return stein_kernel_eval(base, a.points.row(i).transpose(), a.scores.row(i).transpose(),
                           b.points.row(j).transpose(), b.scores.row(j).transpose());
}

Matrix KernelHandle::gram(const PreparedPoints& pts) const {
  const auto n = pts.size();
  Matrix k(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i <= j; ++i) {
      const double v = eval_prepared(pts, i, pts, j);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

Vector KernelHandle::embeddings(const PreparedPoints& pts) const {
  Vector z(pts.size());
  if (variant() == Variant::kStein) {
    z.setOnes();
    return z;
  }
  for (Eigen::Index i = 0; i < pts.size(); ++i) z(i) = mean_embedding(pts.points.row(i).transpose());
  return z;
}

}  // namespace smckq
