#include "mlmspt/data_io.hpp"

#include "binary_io.hpp"
#include "mlmspt/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mlmspt {

using detail::ByteReader;
using detail::ByteWriter;

void write_pointcloud(const fs::path& path, const PointCloud& cloud) {
  cloud.validate();
  const Matrix<double> f = cloud.features();
  ByteWriter w;
  w.bytes("PCF1");
  w.u32(static_cast<std::uint32_t>(f.rows()));
  w.u32(static_cast<std::uint32_t>(f.cols()));
  for (Eigen::Index i = 0; i < f.size(); ++i) w.f32(static_cast<float>(f.data()[i]));
  detail::write_file(path, w.data());
}

PointCloud load_pointcloud(const fs::path& path) {
  ByteReader r(detail::read_file(path));
  if (r.bytes(4, "magic") != "PCF1") throw ParseError(path.string() + ": bad magic, expected PCF1", 0);
  const std::uint32_t n = r.u32("point count");
  const std::uint32_t c = r.u32("channel count");
  if (n == 0) throw ParseError(path.string() + ": point count must be at least 1", 4);
  if (c < 3) throw ParseError(path.string() + ": channel count must be at least 3", 8);
  const std::size_t expected = static_cast<std::size_t>(n) * c * 4;
  if (r.remaining() < expected)
    throw ParseError(path.string() + ": truncated payload, header declares " + std::to_string(n) + " x " +
                         std::to_string(c) + " values but only " + std::to_string(r.remaining() / 4) +
                         " follow",
                     r.offset() + r.remaining());
  if (r.remaining() > expected)
    throw ParseError(path.string() + ": " + std::to_string(r.remaining() - expected) +
                         " trailing bytes after payload",
                     r.offset() + expected);
  Matrix<double> f(n, c);
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    const std::size_t at = r.offset();
    const float v = r.f32("coordinates");
    if (!std::isfinite(v)) throw ParseError(path.string() + ": non-finite value", at);
    f.data()[i] = v;
  }
  PointCloud cloud;
  cloud.positions = f.leftCols(3);
  cloud.attributes = f.rightCols(c - 3);
  return cloud;
}

void write_labels(const fs::path& path, const std::vector<int>& labels) {
  ByteWriter w;
  w.bytes("PLB1");
  w.u32(static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) {
    if (l < 0) throw ContractError("negative label cannot be written");
    w.u32(static_cast<std::uint32_t>(l));
  }
  detail::write_file(path, w.data());
}

std::vector<int> load_labels(const fs::path& path) {
  ByteReader r(detail::read_file(path));
  if (r.bytes(4, "magic") != "PLB1") throw ParseError(path.string() + ": bad magic, expected PLB1", 0);
  const std::uint32_t n = r.u32("label count");
  if (r.remaining() != static_cast<std::size_t>(n) * 4)
    throw ParseError(path.string() + ": payload holds " + std::to_string(r.remaining()) +
                         " bytes, header declares " + std::to_string(n) + " labels",
                     r.offset());
  std::vector<int> out(n);
  for (auto& l : out) {
    const std::size_t at = r.offset();
    const std::uint32_t v = r.u32("labels");
    if (v > static_cast<std::uint32_t>(INT32_MAX)) throw ParseError(path.string() + ": label out of range", at);
    l = static_cast<int>(v);
  }
  return out;
}

std::size_t DatasetManifest::num_part_labels() const {
  int hi = -1;
  for (const auto& c : categories)
    for (int p : c.parts) hi = std::max(hi, p);
  return static_cast<std::size_t>(hi + 1);
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, sep)) out.push_back(trim(field));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

int parse_int(const std::string& s, const std::string& where) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || v < 0)
    throw ConfigError(where + ": expected a non-negative integer, got '" + s + "'");
  return v;
}

}  // namespace

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };

  DatasetManifest m;
  bool have_task = false;
  std::string raw;
  for (int lineno = 1; std::getline(in, raw); ++lineno) {
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    auto f = split(line, ',');
    if (f[0] == "task" && f.size() == 2) {
      m.task = parse_task(f[1]);
      have_task = true;
    } else if (f[0] == "class" && (f.size() == 3 || f.size() == 4)) {
      const int idx = parse_int(f[1], where);
      if (idx != static_cast<int>(m.categories.size()))
        throw ConfigError(where + ": class indices must be listed in order starting at 0");
      Category c{f[2], {}};
      if (f.size() == 4) {
        std::istringstream ps(f[3]);
        std::string tok;
        while (ps >> tok) c.parts.push_back(parse_int(tok, where));
      }
      m.categories.push_back(std::move(c));
    } else if (f[0] == "sample" && f.size() == 3 && m.task == Task::classification) {
      m.entries.push_back({resolve(f[1]), {}, parse_int(f[2], where)});
    } else if (f[0] == "sample" && f.size() == 4 && m.task == Task::segmentation) {
      m.entries.push_back({resolve(f[1]), resolve(f[2]), parse_int(f[3], where)});
    } else {
      throw ConfigError(where + ": unrecognised record '" + line + "'");
    }
    if (!have_task) throw ConfigError(where + ": manifest must start with a task record");
  }
  if (!have_task) throw ConfigError(path.string() + ": manifest has no task record");
  if (m.categories.empty()) throw ConfigError(path.string() + ": manifest declares no classes");
  for (const auto& e : m.entries)
    if (e.label >= static_cast<int>(m.categories.size()))
      throw ConfigError(path.string() + ": sample " + e.points.string() + " has class " +
                        std::to_string(e.label) + " outside the class table");
  if (m.task == Task::segmentation)
    for (const auto& c : m.categories)
      if (c.parts.empty()) throw ConfigError(path.string() + ": segmentation class " + c.name + " lists no parts");
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "# mlmspt dataset manifest\n";
  out << "task," << to_string(m.task) << '\n';
  for (std::size_t i = 0; i < m.categories.size(); ++i) {
    out << "class," << i << ',' << m.categories[i].name;
    if (m.task == Task::segmentation) {
      out << ',';
      for (std::size_t j = 0; j < m.categories[i].parts.size(); ++j)
        out << (j ? " " : "") << m.categories[i].parts[j];
    }
    out << '\n';
  }
  const fs::path base = path.parent_path();
  auto rel = [&](const fs::path& p) {
    return p.parent_path() == base ? p.filename().generic_string() : p.generic_string();
  };
  for (const auto& e : m.entries) {
    out << "sample," << rel(e.points);
    if (m.task == Task::segmentation) out << ',' << rel(e.labels);
    out << ',' << e.label << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + path.string());
}

std::size_t Dataset::num_outputs() const {
  if (task == Task::classification) return categories.size();
  int hi = -1;
  for (const auto& c : categories)
    for (int p : c.parts) hi = std::max(hi, p);
  return static_cast<std::size_t>(hi + 1);
}

std::size_t Dataset::points_per_cloud() const {
  return clouds.empty() ? 0 : clouds.front().size();
}

std::size_t Dataset::channels() const {
  return clouds.empty() ? 0 : clouds.front().channels();
}

Dataset load_dataset(const fs::path& manifest_path) {
  const DatasetManifest m = read_manifest(manifest_path);
  Dataset d;
  d.task = m.task;
  d.categories = m.categories;
  for (const auto& e : m.entries) {
    PointCloud c = load_pointcloud(e.points);
    c.shape_label = e.label;
    if (m.task == Task::segmentation) {
      c.point_labels = load_labels(e.labels);
      const auto& parts = m.categories[static_cast<std::size_t>(e.label)].parts;
      for (int l : c.point_labels)
        if (std::find(parts.begin(), parts.end(), l) == parts.end())
          throw ConfigError(e.labels.string() + ": label " + std::to_string(l) + " is not a part of class " +
                            m.categories[static_cast<std::size_t>(e.label)].name);
    }
    c.validate();
    if (!d.clouds.empty() && (c.size() != d.points_per_cloud() || c.channels() != d.channels()))
      throw ConfigError(e.points.string() + ": every cloud in a dataset must have the same point and channel count");
    d.clouds.push_back(std::move(c));
    d.sources.push_back(e.points);
  }
  if (d.clouds.empty()) throw ConfigError(manifest_path.string() + ": manifest lists no samples");
  return d;
}

}  // namespace mlmspt
