#include "evdepth/checkpoint.hpp"

#include <algorithm>
#include <cstring>

#include "evdepth/array_io.hpp"
#include "evdepth/error.hpp"

namespace evdepth {

namespace {

constexpr char kMagic[8] = {'E', 'V', 'D', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)), sizeof(T));
    return value;
  }

  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw Error(ErrorCategory::kFormat, path_.string() + ": truncated checkpoint");
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  const std::string& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

std::uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat: return 0;
    case torch::kDouble: return 1;
    case torch::kLong: return 2;
    default: throw Error(ErrorCategory::kFormat, "unsupported tensor dtype in checkpoint");
  }
}

torch::ScalarType dtype_from_code(std::uint8_t c) {
  switch (c) {
    case 0: return torch::kFloat;
    case 1: return torch::kDouble;
    case 2: return torch::kLong;
    default: throw Error(ErrorCategory::kFormat, "unknown tensor dtype code");
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  const std::string manifest = ckpt.manifest.dump();
  put<std::uint64_t>(out, manifest.size());
  out += manifest;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    auto t = tensor.detach().contiguous().cpu();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, dtype_code(t.scalar_type()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dim()));
    for (auto d : t.sizes()) put<std::int64_t>(out, d);
    out.append(static_cast<const char*>(t.data_ptr()), t.nbytes());
  }
  atomic_write(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_text(path);
  Reader in(bytes, path);
  if (std::memcmp(in.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorCategory::kFormat, path.string() + ": not an evdepth checkpoint");
  }
  Checkpoint ckpt;
  const auto manifest_len = in.get<std::uint64_t>();
  const char* manifest = in.take(manifest_len);
  try {
    ckpt.manifest = nlohmann::json::parse(manifest, manifest + manifest_len);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCategory::kFormat, path.string() + ": manifest: " + e.what());
  }
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get<std::uint32_t>();
    std::string name(in.take(name_len), name_len);
    const auto dtype = dtype_from_code(in.get<std::uint8_t>());
    const auto rank = in.get<std::uint32_t>();
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) d = in.get<std::int64_t>();
    auto t = torch::empty(dims, torch::TensorOptions().dtype(dtype));
    std::memcpy(t.data_ptr(), in.take(t.nbytes()), t.nbytes());
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

void export_state(const torch::nn::Module& module, const std::string& prefix, Checkpoint& ckpt) {
  for (const auto& item : module.named_parameters()) {
    ckpt.tensors[prefix + item.key()] = item.value().detach().clone();
  }
  for (const auto& item : module.named_buffers()) {
    ckpt.tensors[prefix + item.key()] = item.value().detach().clone();
  }
}

void import_state(torch::nn::Module& module, const std::string& prefix, const Checkpoint& ckpt,
                  const std::vector<std::string>& skip) {
  torch::NoGradGuard guard;
  auto assign = [&](const std::string& name, torch::Tensor& target) {
    if (std::find(skip.begin(), skip.end(), name) != skip.end()) return;
    auto it = ckpt.tensors.find(prefix + name);
    if (it == ckpt.tensors.end()) {
      throw Error(ErrorCategory::kFormat, "checkpoint lacks tensor " + prefix + name);
    }
    if (it->second.sizes() != target.sizes()) {
      throw Error(ErrorCategory::kShape, "checkpoint tensor " + prefix + name +
                                             " has a different shape");
    }
    target.copy_(it->second);
  };
  for (auto& item : module.named_parameters()) assign(item.key(), item.value());
  for (auto& item : module.named_buffers()) assign(item.key(), item.value());
}

}  // namespace evdepth
