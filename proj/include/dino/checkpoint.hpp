#pragma once

// DCK1 checkpoint container.
//
//   "DCK1" | u32 version | str config_text | u32 array count
//   per array: str name | u8 dtype | u32 rank | u32 dims[rank] | raw LE data
//
// dtype: 1 = f32, 2 = f64, 3 = u64. Training randomness is a pure function of
// (seed, step, epoch), so the step counters are the whole RNG state.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dino/param_set.hpp"

namespace dino {

template <typename T>
struct Checkpoint {
  std::string config_text;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::uint64_t optimizer_steps = 0;
  ParamSet<T> student;
  ParamSet<T> teacher;
  Tensor<T> center;
  ParamSet<T> adam_m;
  ParamSet<T> adam_v;
};

enum class DType : std::uint8_t { f32 = 1, f64 = 2, u64 = 3 };

// Raw view of one stored array, for inspection tools.
struct ArrayInfo {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::size_t> shape;
};

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<T>& ckpt);
// FormatError on bad magic/version, truncation, trailing bytes, a dtype other
// than T's, or a missing required array.
template <typename T>
Checkpoint<T> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path);  // atomic rename
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

// Config text and array table without materializing values.
std::vector<ArrayInfo> list_checkpoint(const std::vector<std::uint8_t>& bytes, std::string* config_text = nullptr);

template <typename T>
bool checkpoints_equal(const Checkpoint<T>& a, const Checkpoint<T>& b);

}  // namespace dino
