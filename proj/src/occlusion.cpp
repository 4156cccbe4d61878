#include "croa/occlusion.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <cmath>
#include <random>

namespace croa {

namespace {

// Deterministic standard-normal stream: Box-Muller over explicit uniforms so
// the draw sequence is identical across standard libraries.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  double uniform() { return std::ldexp(static_cast<double>(rng_() >> 11), -53); }

  std::mt19937_64 rng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Projection parameter of o onto segment (p, z); the gate requires it to lie
// strictly inside (0, 1).
bool betweenness_gate(const Vec2& p, const Vec2& z, const Vec2& o) {
  const Vec2 d = z - p;
  const double len2 = d.squaredNorm();
  if (len2 < 1e-30) return false;
  const double t = (o - p).dot(d) / len2;
  return t > 0.0 && t < 1.0;
}

}  // namespace

SampleSet draw_samples(const GaussianTarget& target, int count,
                       std::uint64_t seed, WeightMode mode) {
  if (count < 1) throw OcclusionError("sample count must be >= 1");
  Eigen::LLT<Eigen::Matrix2d> llt(target.covariance);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("covariance is not positive-definite");
  }
  const Eigen::Matrix2d chol = llt.matrixL();

  SampleSet set;
  set.seed = seed;
  set.samples.reserve(count);
  set.weights.resize(count);
  NormalStream stream(seed);
  for (int i = 0; i < count; ++i) {
    const Vec2 n(stream.next(), stream.next());
    set.samples.push_back(target.mean + chol * n);
  }

  if (mode == WeightMode::Uniform) {
    for (double& w : set.weights) w = 1.0 / count;
    return set;
  }
  // Q_i proportional to the pdf at the sample; the normalization constant
  // cancels, so the exponent of the quadratic form suffices.
  const Eigen::Matrix2d cov_inv = target.covariance.inverse();
  double total = 0.0;
  for (int i = 0; i < count; ++i) {
    const Vec2 d = set.samples[i] - target.mean;
    set.weights[i] = std::exp(-0.5 * d.dot(cov_inv * d));
    total += set.weights[i];
  }
  for (double& w : set.weights) w /= total;
  return set;
}

bool occluded(const Vec2& p, const Vec2& z, const OcclusionGeom& geom) {
  const double oz = (geom.center - z).norm();
  if (oz < kGeomTol) throw DegenerateGeometry("target sample at obstacle center");
  const double pz = (p - z).norm();
  if (pz < kGeomTol) throw DegenerateGeometry("robot at target sample");
  const double d = point_to_sight_line_distance(p, z, geom.center);
  if (geom.radius / oz < d / pz) return false;
  return betweenness_gate(p, z, geom.center);
}

double occlusion_probability(const Vec2& p, const SampleSet& samples,
                             std::span<const OcclusionGeom> geoms) {
  if (samples.size() == 0) throw OcclusionError("empty sample set");
  double prob = 0.0;
  for (int i = 0; i < samples.size(); ++i) {
    for (const OcclusionGeom& geom : geoms) {
      if (occluded(p, samples.samples[i], geom)) {
        prob += samples.weights[i];
        break;
      }
    }
  }
  return prob;
}

double xi_tight(const Vec2& p, const Vec2& g, const OcclusionGeom& geom) {
  const double d = point_to_sight_line_distance(p, g, geom.center);
  if (d < kGeomTol) throw OnSightLine("robot on the sight line; xi unbounded");
  const double og2 = (geom.center - g).squaredNorm();
  const double pg2 = (p - g).squaredNorm();
  return geom.radius * geom.radius * pg2 / (og2 * d * d);
}

double theta(const Vec2& p, const Vec2& g, const OcclusionGeom& geom) {
  const double d = point_to_sight_line_distance(p, g, geom.center);
  return -(geom.center - g).squaredNorm() * d * d;
}

Vec2 theta_gradient(const Vec2& p, const Vec2& g, const OcclusionGeom& geom) {
  const Vec2 og = geom.center - g;
  const double len = og.norm();
  if (len < kGeomTol) throw DegenerateGeometry("sample at obstacle center");
  const Vec2 a = Vec2(-og.y(), og.x()) / len;  // unit normal of the sight line
  const double c = a.dot(p - g);
  return -2.0 * og.squaredNorm() * c * a;
}

AffineScalar theta_linearized(const Vec2& expansion_p, const Vec2& g,
                              const OcclusionGeom& geom) {
  AffineScalar aff;
  aff.gradient = theta_gradient(expansion_p, g, geom);
  aff.offset = theta(expansion_p, g, geom) - aff.gradient.dot(expansion_p);
  return aff;
}

std::vector<SurrogateConstraint> build_occlusion_constraints(
    const Vec2& expansion_p, const SampleSet& samples,
    std::span<const OcclusionGeom> geoms) {
  std::vector<SurrogateConstraint> out;
  out.reserve(samples.size() * geoms.size());
  for (int i = 0; i < samples.size(); ++i) {
    const Vec2& g = samples.samples[i];
    for (std::size_t k = 0; k < geoms.size(); ++k) {
      if (!betweenness_gate(expansion_p, g, geoms[k].center)) continue;
      SurrogateConstraint sc;
      sc.sample_index = i;
      sc.obstacle_index = static_cast<int>(k);
      sc.radius = geoms[k].radius;
      sc.sample = g;
      sc.theta_hat = theta_linearized(expansion_p, g, geoms[k]);
      out.push_back(sc);
    }
  }
  return out;
}

}  // namespace croa
