#include "mlmspt/data_io.hpp"
#include "mlmspt/errors.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace mlmspt {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kTorusMajor = 1.0;
constexpr double kTorusMinor = 0.35;
constexpr double kCylinderRadius = 0.6;
constexpr double kCylinderHalfHeight = 1.0;

void sphere_point(Rng& rng, double* p, int& part) {
  double x, y, z, r2;
  do {
    x = rng.normal();
    y = rng.normal();
    z = rng.normal();
    r2 = x * x + y * y + z * z;
  } while (r2 < 1e-24);
  const double inv = 1.0 / std::sqrt(r2);
  p[0] = x * inv;
  p[1] = y * inv;
  p[2] = z * inv;
  part = p[2] >= 0.0 ? 0 : 1;
}

void cube_point(Rng& rng, double* p, int& part) {
  // Six faces of [-1, 1]^3, chosen proportionally to area (all equal here).
  constexpr std::array<double, 6> area{4, 4, 4, 4, 4, 4};
  double pick = rng.uniform() * 24.0;
  int face = 0;
  while (face < 5 && pick >= area[static_cast<std::size_t>(face)]) pick -= area[static_cast<std::size_t>(face++)];
  const int axis = face / 2;
  const double sign = face % 2 == 0 ? 1.0 : -1.0;
  const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0);
  p[axis] = sign;
  p[(axis + 1) % 3] = a;
  p[(axis + 2) % 3] = b;
  part = axis == 2 ? 1 : 0;
}

void torus_point(Rng& rng, double* p, int& part) {
  // Angles are uniform in parameter space; the area element grows with the
  // distance from the axis, so accept with probability proportional to it.
  double u, v;
  do {
    u = rng.uniform(0.0, kTwoPi);
    v = rng.uniform(0.0, kTwoPi);
  } while (rng.uniform() * (kTorusMajor + kTorusMinor) > kTorusMajor + kTorusMinor * std::cos(v));
  const double ring = kTorusMajor + kTorusMinor * std::cos(v);
  p[0] = ring * std::cos(u);
  p[1] = ring * std::sin(u);
  p[2] = kTorusMinor * std::sin(v);
  part = std::cos(v) >= 0.0 ? 0 : 1;
}

void cylinder_point(Rng& rng, double* p, int& part) {
  const double lateral = kTwoPi * kCylinderRadius * 2.0 * kCylinderHalfHeight;
  const double caps = 2.0 * std::numbers::pi * kCylinderRadius * kCylinderRadius;
  if (rng.uniform() * (lateral + caps) < lateral) {
    const double t = rng.uniform(0.0, kTwoPi);
    p[0] = kCylinderRadius * std::cos(t);
    p[1] = kCylinderRadius * std::sin(t);
    p[2] = rng.uniform(-kCylinderHalfHeight, kCylinderHalfHeight);
    part = 0;
  } else {
    const double top = rng.uniform() < 0.5 ? 1.0 : -1.0;
    const double r = kCylinderRadius * std::sqrt(rng.uniform());
    const double t = rng.uniform(0.0, kTwoPi);
    p[0] = r * std::cos(t);
    p[1] = r * std::sin(t);
    p[2] = top * kCylinderHalfHeight;
    part = 1;
  }
}

}  // namespace

std::string to_string(ShapeFamily family) {
  switch (family) {
    case ShapeFamily::sphere: return "sphere";
    case ShapeFamily::cube: return "cube";
    case ShapeFamily::torus: return "torus";
    case ShapeFamily::cylinder: return "cylinder";
  }
  return "sphere";
}

ShapeFamily parse_shape_family(std::string_view name) {
  for (auto f : {ShapeFamily::sphere, ShapeFamily::cube, ShapeFamily::torus, ShapeFamily::cylinder})
    if (name == to_string(f)) return f;
  throw ConfigError("unknown shape family '" + std::string(name) + "' (expected sphere, cube, torus or cylinder)");
}

void SynthConfig::validate() const {
  if (families.empty()) throw ConfigError("synthetic dataset needs at least one shape family");
  for (std::size_t i = 0; i < families.size(); ++i)
    for (std::size_t j = i + 1; j < families.size(); ++j)
      if (families[i] == families[j]) throw ConfigError("shape family " + to_string(families[i]) + " listed twice");
  if (samples_per_class == 0) throw ConfigError("samples per class must be positive");
  if (points_per_cloud == 0 || points_per_cloud % 4 != 0)
    throw ConfigError("points per cloud = " + std::to_string(points_per_cloud) +
                      " must be a positive multiple of 4 (pyramid halves the cloud twice)");
  if (!(noise_stddev >= 0.0)) throw ConfigError("noise stddev must be >= 0");
}

SurfaceSample sample_surface(ShapeFamily family, std::size_t n, Rng& rng) {
  SurfaceSample s;
  s.positions.resize(static_cast<Eigen::Index>(n), 3);
  s.parts.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double p[3] = {0.0, 0.0, 0.0};
    int part = 0;
    switch (family) {
      case ShapeFamily::sphere: sphere_point(rng, p, part); break;
      case ShapeFamily::cube: cube_point(rng, p, part); break;
      case ShapeFamily::torus: torus_point(rng, p, part); break;
      case ShapeFamily::cylinder: cylinder_point(rng, p, part); break;
    }
    for (int c = 0; c < 3; ++c) s.positions(static_cast<Eigen::Index>(i), c) = p[c];
    s.parts[i] = part;
  }
  return s;
}

void normalize_unit_sphere(Matrix<double>& positions) {
  const Eigen::RowVector3d centroid = positions.colwise().mean();
  positions.rowwise() -= centroid;
  const double radius = positions.rowwise().norm().maxCoeff();
  if (radius > 0.0) positions /= radius;
}

Dataset make_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Dataset d;
  d.task = cfg.task;
  for (std::size_t c = 0; c < cfg.families.size(); ++c) {
    Category cat{to_string(cfg.families[c]), {}};
    if (cfg.task == Task::segmentation) cat.parts = {static_cast<int>(2 * c), static_cast<int>(2 * c + 1)};
    d.categories.push_back(std::move(cat));
  }
  for (std::size_t c = 0; c < cfg.families.size(); ++c) {
    for (std::size_t k = 0; k < cfg.samples_per_class; ++k) {
      Rng rng(mix_seed(cfg.seed, c, k));
      SurfaceSample s = sample_surface(cfg.families[c], cfg.points_per_cloud, rng);
      if (cfg.noise_stddev > 0.0)
        for (Eigen::Index i = 0; i < s.positions.size(); ++i) s.positions.data()[i] += cfg.noise_stddev * rng.normal();
      normalize_unit_sphere(s.positions);
      PointCloud cloud;
      // Round through f32 so in-memory clouds equal their on-disk form.
      cloud.positions = s.positions.cast<float>().cast<double>();
      cloud.attributes.resize(cloud.positions.rows(), 0);
      cloud.shape_label = static_cast<int>(c);
      if (cfg.task == Task::segmentation) {
        cloud.point_labels.resize(s.parts.size());
        for (std::size_t i = 0; i < s.parts.size(); ++i) cloud.point_labels[i] = static_cast<int>(2 * c) + s.parts[i];
      }
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%03zu.pcf", to_string(cfg.families[c]).c_str(), k);
      d.clouds.push_back(std::move(cloud));
      d.sources.emplace_back(name);
    }
  }
  return d;
}

fs::path generate_synthetic(const SynthConfig& cfg, const fs::path& out_dir) {
  const Dataset d = make_synthetic(cfg);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create directory " + out_dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.task = d.task;
  m.categories = d.categories;
  for (std::size_t i = 0; i < d.clouds.size(); ++i) {
    const fs::path points = out_dir / d.sources[i];
    write_pointcloud(points, d.clouds[i]);
    ManifestEntry e{points, {}, *d.clouds[i].shape_label};
    if (d.task == Task::segmentation) {
      e.labels = fs::path(points).replace_extension(".plb");
      write_labels(e.labels, d.clouds[i].point_labels);
    }
    m.entries.push_back(std::move(e));
  }
  const fs::path manifest = out_dir / "manifest.txt";
  write_manifest(manifest, m);
  return manifest;
}

}  // namespace mlmspt
