#include "gazeracer/nn/weights.hpp"

#include <stdexcept>

#include <zlib.h>

#include "gazeracer/util/io.hpp"

namespace gazeracer::nn {

namespace {

std::uint32_t crc32_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

std::string_view checked_body(const std::string& bytes) {
  if (bytes.size() < 8) throw std::invalid_argument("weights: file too short");
  const std::string_view body(bytes.data(), bytes.size() - 4);
  io::ByteReader tail(std::string_view(bytes).substr(bytes.size() - 4));
  if (tail.u32() != crc32_of(body)) throw std::invalid_argument("weights: checksum mismatch");
  return body;
}

}  // namespace

template <class T>
std::string save_params(const std::string& tag, const std::vector<Param<T>*>& params) {
  io::ByteWriter w;
  w.magic("NNW1");
  w.str(tag);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    w.str(p->name);
    w.u32(static_cast<std::uint32_t>(p->value.shape.size()));
    for (int d : p->value.shape) w.u32(static_cast<std::uint32_t>(d));
    for (T v : p->value.data) w.f32(static_cast<float>(v));
  }
  const std::uint32_t crc = crc32_of(w.data());
  w.u32(crc);
  return w.take();
}

template <class T>
void load_params(const std::string& bytes, const std::string& tag,
                 const std::vector<Param<T>*>& params) {
  io::ByteReader r(checked_body(bytes));
  r.expect_magic("NNW1", "weights");
  const std::string file_tag = r.str();
  if (file_tag != tag) {
    throw std::invalid_argument("weights: model tag '" + file_tag + "' does not match '" + tag + "'");
  }
  const std::uint32_t count = r.u32();
  if (count != params.size()) {
    throw std::invalid_argument("weights: file has " + std::to_string(count) +
                                " entries, architecture has " + std::to_string(params.size()));
  }
  // Validate everything before touching the model.
  std::vector<std::vector<float>> values(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    Shape shape(r.u32());
    for (auto& d : shape) d = static_cast<int>(r.u32());
    const auto* p = params[i];
    if (name != p->name) {
      throw std::invalid_argument("weights: entry " + std::to_string(i) + " is '" + name +
                                  "', expected '" + p->name + "'");
    }
    if (shape != p->value.shape) {
      throw std::invalid_argument("weights: shape mismatch at '" + name + "': file " +
                                  shape_str(shape) + ", model " + shape_str(p->value.shape));
    }
    values[i].resize(shape_size(shape));
    for (auto& v : values[i]) v = r.f32();
  }
  if (r.remaining() != 0) throw std::invalid_argument("weights: trailing bytes");
  for (std::uint32_t i = 0; i < count; ++i) {
    params[i]->value.data.assign(values[i].begin(), values[i].end());
  }
}

std::string weights_tag(const std::string& bytes) {
  io::ByteReader r(checked_body(bytes));
  r.expect_magic("NNW1", "weights");
  return r.str();
}

template std::string save_params(const std::string&, const std::vector<Param<float>*>&);
template std::string save_params(const std::string&, const std::vector<Param<double>*>&);
template void load_params(const std::string&, const std::string&, const std::vector<Param<float>*>&);
template void load_params(const std::string&, const std::string&, const std::vector<Param<double>*>&);

}  // namespace gazeracer::nn
