#pragma once

// Seeded RNG streams and the sampling primitives the simulation engine uses.
// The distributions are written out here instead of using std::*_distribution
// because their std implementations are unspecified: a fixed seed must yield
// the same draws on every platform. mt19937_64 itself is pinned by the
// standard, so engine + explicit transforms gives a reproducible stream.

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "scm/errors.hpp"

namespace scm {

// splitmix64 finalizer; used to spread substream seeds apart.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  // Stream for one replication: master seed xor replication index, then a tag
  // so e.g. covariate and outcome draws stay decoupled (covariates must be
  // bit-identical across the two outcome kinds of a paired scenario).
  static RngStream substream(std::uint64_t master, std::uint64_t rep, std::uint64_t tag) {
    return RngStream(mix64(mix64(master ^ rep) + tag));
  }

  std::uint64_t raw() { return engine_(); }

  // Uniform on (0,1); never returns 0 so log(u) is safe.
  double uniform() {
    double u;
    do {
      u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    } while (u <= 0.0);
    return u;
  }

  // Box-Muller; generates pairs, returns them one at a time.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  // Marsaglia-Tsang for shape >= 1; shape < 1 boosted via the u^(1/shape) trick.
  double gamma(double shape) {
    require(shape > 0.0, errc::invalid_argument, "gamma shape must be positive");
    if (shape < 1.0) {
      double u = uniform();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  Eigen::VectorXd normal_vector(int n) {
    Eigen::VectorXd z(n);
    for (int i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace scm
