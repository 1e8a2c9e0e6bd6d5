#pragma once

#include <string>
#include <vector>

#include "gazeracer/nn/tensor.hpp"

namespace gazeracer::nn {

/// NNW1 weight file: magic "NNW1", model tag, u32 entry count, per entry
/// (name, u32 rank, u32 dims, float32 values), trailing CRC32 of everything
/// before it. Strings are u32 length + bytes; all integers little-endian.
template <class T>
std::string save_params(const std::string& tag, const std::vector<Param<T>*>& params);

/// Loads into an existing architecture. Throws std::invalid_argument on bad
/// magic, checksum, tag, entry count, or a name/shape mismatch (naming the
/// entry).
template <class T>
void load_params(const std::string& bytes, const std::string& tag,
                 const std::vector<Param<T>*>& params);

/// Model tag stored in a weight file.
std::string weights_tag(const std::string& bytes);

}  // namespace gazeracer::nn
