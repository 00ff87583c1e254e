#pragma once

// Binary checkpoint container shared by every module.
//
// Layout (little-endian):
//   magic "LSE1" | u32 version | u32 config_len | config bytes (JSON text)
//   u32 tensor_count
//   per tensor: u32 name_len | name | u8 dtype (0 = f32, 1 = f64) | u8 ndim |
//               u64 dims[ndim] | raw element data

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lse/params.hpp"
#include "lse/tensor.hpp"

namespace lse {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct NamedTensor {
    std::string name;
    DType dtype = DType::f64;
    Tensor value;
};

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    std::string config;  // JSON document describing what the tensors belong to
    std::vector<NamedTensor> tensors;

    const NamedTensor* find(const std::string& name) const noexcept;
    const Tensor& at(const std::string& name) const;
    void add(std::string name, Tensor value, DType dtype = DType::f64);
    // Appends every parameter of `params` under `prefix`.
    void add_params(const ParamSet& params, const std::string& prefix = "");
    // Loads every parameter of `params` from `prefix`+name; all must be present.
    void load_params(ParamSet& params, const std::string& prefix = "") const;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lse
