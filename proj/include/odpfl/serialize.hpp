#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "odpfl/tensor.hpp"
#include "odpfl/weights.hpp"

namespace odpfl {

// Flat binary container for named tensors:
//   magic "ODPB", u32 version, u32 tensor count,
//   name table   (per tensor: u32 length + bytes),
//   shape table  (per tensor: u32 rank + u32 dims),
//   data         (per tensor: 64-bit little-endian floats, row-major).
std::vector<uint8_t> serialize_bundle(const WeightBundle& bundle);
WeightBundle deserialize_bundle(const std::vector<uint8_t>& bytes);

void save_bundle(const WeightBundle& bundle, const std::string& path);
WeightBundle load_bundle(const std::string& path);

// payload size of the binary form, for message byte accounting
size_t bundle_byte_size(const WeightBundle& bundle);

// descriptors travel as a single-tensor bundle
void save_descriptor(const Tensor& descriptor, const std::string& path);
Tensor load_descriptor(const std::string& path);
size_t descriptor_byte_size(const Tensor& descriptor);

// CSV for inspection: one row per tensor: name, dims joined by 'x', values
// with 17 significant digits (doubles round-trip exactly)
void save_bundle_csv(const WeightBundle& bundle, const std::string& path);
WeightBundle load_bundle_csv(const std::string& path);

std::string format_g17(double v);

// small shared CSV helpers
std::vector<std::string> split_csv_line(const std::string& line);
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace odpfl
