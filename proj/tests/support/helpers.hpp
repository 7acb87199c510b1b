#pragma once

#include <cmath>

#include "smckq/error.hpp"
#include "smckq/kernel.hpp"
#include "smckq/rng.hpp"

namespace testing_support {

inline smckq::Vector vec(std::initializer_list<double> v) {
  smckq::Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

inline smckq::Matrix normal_matrix(Eigen::Index n, Eigen::Index d, smckq::Rng& rng, double scale = 1.0) {
  smckq::Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = scale * rng.normal();
  return m;
}

inline smckq::KernelHandle gaussian_handle(Eigen::Index d, double ell, double sigma = 1.0) {
  return smckq::KernelHandle::gaussian(smckq::GaussianKernelParams::isotropic(d, ell),
                                       smckq::GaussianMeasure::isotropic(d, 0.0, sigma));
}

inline smckq::KernelHandle stein_standard_normal(Eigen::Index d, double ell) {
  return smckq::KernelHandle::stein(
      {smckq::GaussianKernelParams::isotropic(d, ell), [](const smckq::Vector& x) -> smckq::Vector { return -x; }});
}

inline bool throws_code(const std::function<void()>& f, smckq::ErrorCode code) {
  try {
    f();
  } catch (const smckq::Error& e) {
    return e.code() == code;
  }
  return false;
}

}  // namespace testing_support
