#pragma once

// Binary checkpoint container.
//
//   magic        4 bytes  "DGLR"
//   version      u32
//   count        u64      number of records
//   record*:
//     name_len   u32
//     name       name_len bytes, UTF-8
//     rank       u32
//     extents    rank x u64
//     payload    prod(extents) x f64 (IEEE-754 binary64)
//
// Every integer and real is little-endian regardless of host order.
// Optimizer state lives under the reserved "opt/" prefix.

#include <bit>
#include <cstdint>
#include <fstream>
#include <map>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "dglr/params.hpp"
#include "dglr/tensor.hpp"

namespace dglr::checkpoint {

inline constexpr char kMagic[4] = {'D', 'G', 'L', 'R'};
inline constexpr std::uint32_t kVersion = 1;
inline const std::string kOptPrefix = "opt/";

struct Record {
  std::string name;
  Tensor tensor;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

inline std::uint64_t get_uint(std::istream& is, int bytes) {
  unsigned char b[8] = {};
  is.read(reinterpret_cast<char*>(b), bytes);
  if (!is) throw FormatError("checkpoint: unexpected end of file");
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace detail

inline void write(std::ostream& os, const std::vector<Record>& records) {
  os.write(kMagic, 4);
  detail::put_u32(os, kVersion);
  detail::put_u64(os, records.size());
  for (const Record& r : records) {
    detail::put_u32(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(r.tensor.rank()));
    for (std::size_t e : r.tensor.shape()) detail::put_u64(os, e);
    for (double v : r.tensor.data()) {
      detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!os) throw Error("checkpoint: write failed");
}

inline std::vector<Record> read(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw FormatError("checkpoint: bad magic, expected \"DGLR\"");
  }
  const auto version = detail::get_uint(is, 4);
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = detail::get_uint(is, 8);
  std::vector<Record> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    Record r;
    const auto name_len = detail::get_uint(is, 4);
    r.name.resize(name_len);
    is.read(r.name.data(), static_cast<std::streamsize>(name_len));
    const auto rank = detail::get_uint(is, 4);
    if (rank > 8) throw FormatError("checkpoint: implausible rank for " + r.name);
    Shape shape(rank);
    for (auto& e : shape) e = detail::get_uint(is, 8);
    Tensor t(shape);
    for (double& v : t.vec()) v = std::bit_cast<double>(detail::get_uint(is, 8));
    r.tensor = std::move(t);
    out.push_back(std::move(r));
  }
  return out;
}

inline void save(const std::string& path, const std::vector<Record>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("checkpoint: cannot open '" + path + "' for writing");
  write(os, records);
}

inline std::vector<Record> load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open '" + path + "'");
  return read(is);
}

inline std::vector<Record> param_records(const ParamSet& params) {
  std::vector<Record> out;
  for (const auto& e : params.entries()) out.push_back({e.name, e.var->value});
  return out;
}

inline std::vector<Record> adam_records(const AdamState& state) {
  std::vector<Record> out;
  out.push_back({kOptPrefix + "step", Tensor({1}, static_cast<double>(state.step))});
  out.push_back({kOptPrefix + "lr", Tensor({1}, state.learning_rate)});
  out.push_back({kOptPrefix + "beta1", Tensor({1}, state.beta1)});
  out.push_back({kOptPrefix + "beta2", Tensor({1}, state.beta2)});
  out.push_back({kOptPrefix + "eps", Tensor({1}, state.epsilon)});
  for (const auto& [name, m] : state.first_moment) {
    out.push_back({kOptPrefix + "m/" + name, m});
  }
  for (const auto& [name, v] : state.second_moment) {
    out.push_back({kOptPrefix + "v/" + name, v});
  }
  return out;
}

// Copies matching records into existing parameters; shapes must agree and
// every parameter must be present.
inline void restore_params(ParamSet& params, const std::vector<Record>& records) {
  std::map<std::string, const Tensor*> by_name;
  for (const Record& r : records) by_name[r.name] = &r.tensor;
  for (const auto& e : params.entries()) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) {
      throw FormatError("checkpoint: missing parameter '" + e.name + "'");
    }
    if (it->second->shape() != e.var->value.shape()) {
      throw FormatError("checkpoint: parameter '" + e.name + "' has shape " +
                        shape_str(it->second->shape()) + ", model expects " +
                        shape_str(e.var->value.shape()));
    }
    e.var->value = *it->second;
  }
}

inline AdamState restore_adam(const std::vector<Record>& records) {
  AdamState s;
  for (const Record& r : records) {
    if (r.name.rfind(kOptPrefix, 0) != 0) continue;
    const std::string key = r.name.substr(kOptPrefix.size());
    if (key == "step") s.step = static_cast<std::uint64_t>(r.tensor[0]);
    else if (key == "lr") s.learning_rate = r.tensor[0];
    else if (key == "beta1") s.beta1 = r.tensor[0];
    else if (key == "beta2") s.beta2 = r.tensor[0];
    else if (key == "eps") s.epsilon = r.tensor[0];
    else if (key.rfind("m/", 0) == 0) s.first_moment[key.substr(2)] = r.tensor;
    else if (key.rfind("v/", 0) == 0) s.second_moment[key.substr(2)] = r.tensor;
  }
  return s;
}

}  // namespace dglr::checkpoint
