#include "tamseg/checkpoint.hpp"

#include <json.hpp>

#include "tamseg/tnsr.hpp"

namespace tamseg {

using nlohmann::json;

namespace {

json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace

void copy_values(const Tensor& dst, const Tensor& src) {
  if (dst.shape() != src.shape()) {
    throw ShapeError("copy_values: " + shape_str(src.shape()) + " into " + shape_str(dst.shape()));
  }
  Tensor target = dst;
  const auto values = src.to_vector();
  dispatch(dst.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto out = target.mutable_data<T>();
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<T>(values[i]);
  });
}

void save_checkpoint(const std::filesystem::path& dir, const ParameterSet& params,
                     std::string_view config_json) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "tamseg-checkpoint";
  manifest["version"] = TAMSEG_VERSION;
  manifest["config"] = json::parse(config_json);
  manifest["tensors"] = json::array();
  for (const auto& e : params.entries()) {
    const std::string bytes = encode_tnsr(e.tensor);
    const std::string file = e.name + ".tnsr";
    atomic_write(dir / file, bytes);
    manifest["tensors"].push_back({{"name", e.name},
                                   {"file", file},
                                   {"shape", e.tensor.shape()},
                                   {"dtype", std::string(dtype_name(e.tensor.dtype()))},
                                   {"trainable", e.trainable},
                                   {"fnv1a", fnv1a_hex(bytes)}});
  }
  atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::string read_checkpoint_config(const std::filesystem::path& dir) {
  json manifest = read_manifest(dir);
  if (!manifest.contains("config")) throw FormatError(dir.string() + ": manifest has no config");
  return manifest["config"].dump();
}

void load_checkpoint_tensors(const std::filesystem::path& dir, const ParameterSet& params) {
  json manifest = read_manifest(dir);
  for (const auto& e : params.entries()) {
    const json* found = nullptr;
    for (const auto& t : manifest["tensors"]) {
      if (t.value("name", "") == e.name) found = &t;
    }
    if (!found) throw FormatError(dir.string() + ": checkpoint lacks tensor " + e.name);
    const auto path = dir / found->at("file").get<std::string>();
    const std::string bytes = read_file(path);
    if (fnv1a_hex(bytes) != found->at("fnv1a").get<std::string>()) {
      throw FormatError(path.string() + ": checksum mismatch");
    }
    Tensor stored = decode_tnsr_tensor(bytes);
    if (stored.shape() != e.tensor.shape()) {
      throw ShapeError(path.string() + ": stored " + shape_str(stored.shape()) + ", model expects " +
                       shape_str(e.tensor.shape()));
    }
    copy_values(e.tensor, stored);
  }
}

}  // namespace tamseg
