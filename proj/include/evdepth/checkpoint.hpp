#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace evdepth {

/// Single-file archive: magic "EVDCKPT1", u64 manifest length, manifest JSON,
/// u32 tensor count, then per tensor: u32 name length, name, u8 dtype
/// (0 = f32, 1 = f64, 2 = i64), u32 rank, i64 dims, raw little-endian data.
/// Tensors are stored in name order so identical state gives identical bytes.
struct Checkpoint {
  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters and buffers of `module`, keyed `<prefix><dotted name>`.
void export_state(const torch::nn::Module& module, const std::string& prefix, Checkpoint& ckpt);

/// Copies every `<prefix>` entry back into `module`. Missing or mis-shaped
/// entries are rejected; `skip` names (without prefix) are left untouched.
void import_state(torch::nn::Module& module, const std::string& prefix, const Checkpoint& ckpt,
                  const std::vector<std::string>& skip = {});

}  // namespace evdepth
