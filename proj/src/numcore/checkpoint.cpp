#include "eclab/numcore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace eclab::num {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

std::size_t elem_size(DType dt) { return dt == DType::f32 ? 4 : 8; }

}  // namespace

bool Checkpoint::has(const std::string& name) const {
  for (const auto& p : tensors)
    if (p.name == name) return true;
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& p : tensors)
    if (p.name == name) return p.tensor;
  throw DataError("checkpoint has no tensor named '" + name + "'");
}

void Checkpoint::put(const std::string& name, const Tensor& t) {
  for (auto& p : tensors) {
    if (p.name == name) {
      p.tensor = t;
      return;
    }
  }
  tensors.push_back({name, t});
}

Checkpoint snapshot(const ParamList& params, std::int64_t step, nlohmann::json config,
                    nlohmann::json meta) {
  Checkpoint c;
  c.step = step;
  c.config = std::move(config);
  c.meta = std::move(meta);
  for (const auto& p : params) c.tensors.push_back({p.name, p.tensor.detach()});
  return c;
}

void restore(const Checkpoint& ckpt, const ParamList& params) {
  for (const auto& p : params) {
    const Tensor& src = ckpt.get(p.name);
    if (src.shape() != p.tensor.shape() || src.dtype() != p.tensor.dtype()) {
      throw ShapeError("restore: '" + p.name + "' is " + shape_str(src.shape()) + " " +
                       dtype_name(src.dtype()) + " in checkpoint but " + shape_str(p.tensor.shape()) +
                       " " + dtype_name(p.tensor.dtype()) + " in model");
    }
    Tensor dst = p.tensor;
    dst.buffer() = src.buffer();
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["step"] = ckpt.step;
  manifest["config"] = ckpt.config;
  manifest["meta"] = ckpt.meta;
  nlohmann::json table = nlohmann::json::array();
  std::ofstream bin(dir / "tensors.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw DataError("cannot write " + (dir / "tensors.bin").string());
  std::uint64_t offset = 0;
  for (const auto& p : ckpt.tensors) {
    const Tensor& t = p.tensor;
    const std::uint64_t length = t.numel() * elem_size(t.dtype());
    dispatch(t.dtype(), [&]<class T>() {
      auto v = t.data<T>();
      bin.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(length));
    });
    table.push_back({{"name", p.name},
                     {"dtype", dtype_name(t.dtype())},
                     {"shape", t.shape()},
                     {"offset", offset},
                     {"length", length}});
    offset += length;
  }
  manifest["tensors"] = table;
  if (!bin) throw DataError("short write to " + (dir / "tensors.bin").string());
  std::ofstream man(dir / "manifest.json", std::ios::trunc);
  if (!man) throw DataError("cannot write " + (dir / "manifest.json").string());
  man << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto man_path = dir / "manifest.json";
  std::ifstream man(man_path);
  if (!man) throw DataError("cannot open " + man_path.string());
  nlohmann::json manifest;
  try {
    man >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(man_path.string(), e.what());
  }
  if (manifest.value("format_version", -1) != kCheckpointFormatVersion) {
    throw ParseError(man_path.string(), "unsupported format_version");
  }
  std::ifstream bin(dir / "tensors.bin", std::ios::binary);
  if (!bin) throw DataError("cannot open " + (dir / "tensors.bin").string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
  Checkpoint c;
  c.step = manifest.at("step").get<std::int64_t>();
  c.config = manifest.value("config", nlohmann::json::object());
  c.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    const std::string name = entry.at("name");
    const DType dt = dtype_from_name(entry.at("dtype"));
    const Shape shape = entry.at("shape").get<Shape>();
    const std::uint64_t offset = entry.at("offset"), length = entry.at("length");
    if (length != shape_numel(shape) * elem_size(dt)) {
      throw ParseError(man_path.string(), "tensor '" + name + "' length does not match its shape");
    }
    if (offset + length > bytes.size()) {
      throw ParseError((dir / "tensors.bin").string(),
                       "truncated at tensor '" + name + "' (offset " + std::to_string(offset) + ")");
    }
    Tensor t = Tensor::zeros(shape, dt);
    dispatch(dt, [&]<class T>() { std::memcpy(t.data<T>().data(), bytes.data() + offset, length); });
    c.tensors.push_back({name, t});
  }
  return c;
}

bool tensors_bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  return dispatch(a.dtype(), [&]<class T>() {
    auto x = a.data<T>();
    auto y = b.data<T>();
    return std::memcmp(x.data(), y.data(), x.size_bytes()) == 0;
  });
}

bool checkpoints_bit_equal(const Checkpoint& a, const Checkpoint& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    if (a.tensors[i].name != b.tensors[i].name) return false;
    if (!tensors_bit_equal(a.tensors[i].tensor, b.tensors[i].tensor)) return false;
  }
  return true;
}

}  // namespace eclab::num
