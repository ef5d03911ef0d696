#pragma once

#include "mlmspt/model.hpp"
#include "mlmspt/pointcloud.hpp"
#include "mlmspt/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mlmspt {

namespace fs = std::filesystem;

// Point-cloud file (little-endian):
//   "PCF1" | u32 N | u32 C | N*C f32, row-major
// Label file:
//   "PLB1" | u32 N | N u32

void write_pointcloud(const fs::path& path, const PointCloud& cloud);
/// Throws ParseError (with byte offset) on a bad magic, N = 0, C < 3, a payload
/// that disagrees with the header, or non-finite values; IoError if unreadable.
PointCloud load_pointcloud(const fs::path& path);

void write_labels(const fs::path& path, const std::vector<int>& labels);
std::vector<int> load_labels(const fs::path& path);

/// Category (shape class) with the part labels it owns for segmentation.
struct Category {
  std::string name;
  std::vector<int> parts;
};

struct ManifestEntry {
  fs::path points;
  fs::path labels;  // segmentation only
  int label = 0;    // shape class / category index
};

/// Text manifest. Records, one per line, comma separated; '#' starts a comment:
///   task,<cls|seg>
///   class,<index>,<name>[,<part> <part> ...]
///   sample,<points path>,<class index>                      (cls)
///   sample,<points path>,<labels path>,<category index>     (seg)
/// Relative paths resolve against the manifest's directory.
struct DatasetManifest {
  Task task = Task::classification;
  std::vector<Category> categories;
  std::vector<ManifestEntry> entries;

  /// One past the largest part label of any category.
  std::size_t num_part_labels() const;
};

DatasetManifest read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const DatasetManifest& manifest);

/// Manifest plus every cloud loaded and validated.
struct Dataset {
  Task task = Task::classification;
  std::vector<Category> categories;
  std::vector<PointCloud> clouds;
  std::vector<fs::path> sources;

  std::size_t num_outputs() const;  // classes (cls) or part labels (seg)
  std::size_t points_per_cloud() const;
  std::size_t channels() const;
};

Dataset load_dataset(const fs::path& manifest_path);

enum class ShapeFamily { sphere, cube, torus, cylinder };

std::string to_string(ShapeFamily family);
ShapeFamily parse_shape_family(std::string_view name);

struct SynthConfig {
  std::vector<ShapeFamily> families{ShapeFamily::sphere, ShapeFamily::cube, ShapeFamily::torus,
                                    ShapeFamily::cylinder};
  std::size_t samples_per_class = 8;
  std::size_t points_per_cloud = 256;
  double noise_stddev = 0.01;
  std::uint64_t seed = 0;
  Task task = Task::classification;

  void validate() const;
};

/// Area-uniform surface samples of a family's canonical shape, with the
/// two-part label of each point (0 or 1, see generate_synthetic).
struct SurfaceSample {
  Matrix<double> positions;
  std::vector<int> parts;
};

SurfaceSample sample_surface(ShapeFamily family, std::size_t n, Rng& rng);

/// Centroid to the origin, largest radius scaled to 1.
void normalize_unit_sphere(Matrix<double>& positions);

/// In-memory synthetic dataset. Segmentation categories own parts
/// {2c, 2c + 1}: sphere upper/lower hemisphere, cube top+bottom faces/sides,
/// torus outer/inner half, cylinder body/caps.
Dataset make_synthetic(const SynthConfig& cfg);

/// Writes every cloud (plus label files for segmentation) and manifest.txt
/// under `out_dir`; returns the manifest path.
fs::path generate_synthetic(const SynthConfig& cfg, const fs::path& out_dir);

}  // namespace mlmspt
