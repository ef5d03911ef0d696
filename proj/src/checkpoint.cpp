#include "mlmspt/checkpoint.hpp"

#include "binary_io.hpp"
#include "mlmspt/errors.hpp"

namespace mlmspt {

namespace {

constexpr std::string_view kMagic = "MLMSPT01";

}  // namespace

template <typename T>
std::vector<char> encode_checkpoint(const std::string& config_text, const ParameterStore<T>& params) {
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.str(config_text);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) w.u32(static_cast<std::uint32_t>(e));
    for (Eigen::Index i = 0; i < t.value.size(); ++i) w.f32(static_cast<float>(t.value.data()[i]));
  }
  return w.data();
}

RawCheckpoint decode_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.bytes(kMagic.size(), "magic") != kMagic)
    throw CheckpointError("not a checkpoint or unsupported version (expected magic MLMSPT01)");
  RawCheckpoint out;
  out.config_text = r.str("config block");
  const std::uint32_t count = r.u32("parameter count");
  // A damaged extent usually surfaces while reading the next record, so
  // failures also name the record before it.
  auto context = [&out]() {
    if (out.tensors.empty()) return std::string();
    const auto& [name, t] = out.tensors.back();
    return " (after parameter " + name + " with shape " + shape_string(t.shape) + ")";
  };
  for (std::uint32_t p = 0; p < count; ++p) {
    std::string name;
    try {
      name = r.str("parameter name");
    } catch (const ParseError& e) {
      throw CheckpointError(e.what() + context());
    }
    const std::uint32_t rank = r.u32("rank");
    if (rank < 1 || rank > 2)
      throw CheckpointError("parameter " + name + " has unsupported rank " + std::to_string(rank) + context());
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32("extent"));
    const std::size_t n = shape_numel(shape);
    if (r.remaining() / 4 < n)
      throw CheckpointError("parameter " + name + " with shape " + shape_string(shape) +
                            " runs past the end of the file");
    Tensor<float> t(shape);
    for (std::size_t i = 0; i < n; ++i) t.value.data()[i] = r.f32("values");
    out.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (r.remaining() != 0)
    throw CheckpointError(std::to_string(r.remaining()) + " trailing bytes" + context());
  return out;
}

RawCheckpoint read_checkpoint_raw(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(detail::read_file(path));
  } catch (const ParseError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

template <typename T>
void write_checkpoint_raw(const std::filesystem::path& path, const std::string& config_text,
                          const ParameterStore<T>& params) {
  detail::write_file(path, encode_checkpoint(config_text, params));
}

template <typename T>
void save_checkpoint(const ParameterStore<T>& params, const ModelConfig& cfg, const std::filesystem::path& path) {
  check_parameters(cfg, params);
  write_checkpoint_raw(path, cfg.to_text(), params);
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  RawCheckpoint raw = read_checkpoint_raw(path);
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_text(raw.config_text);
    cfg.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": invalid model config block: " + e.what());
  }
  ParameterStore<T> params;
  for (auto& [name, t] : raw.tensors) {
    if (params.contains(name)) throw CheckpointError(path.string() + ": duplicate parameter " + name);
    params.add(name, Tensor<T>(t.shape, t.value.template cast<T>()));
  }
  try {
    return Model<T>(std::move(cfg), std::move(params));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

template std::vector<char> encode_checkpoint<float>(const std::string&, const ParameterStore<float>&);
template std::vector<char> encode_checkpoint<double>(const std::string&, const ParameterStore<double>&);
template void write_checkpoint_raw<float>(const std::filesystem::path&, const std::string&, const ParameterStore<float>&);
template void write_checkpoint_raw<double>(const std::filesystem::path&, const std::string&, const ParameterStore<double>&);
template void save_checkpoint<float>(const ParameterStore<float>&, const ModelConfig&, const std::filesystem::path&);
template void save_checkpoint<double>(const ParameterStore<double>&, const ModelConfig&, const std::filesystem::path&);
template Model<float> load_checkpoint<float>(const std::filesystem::path&);
template Model<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace mlmspt
