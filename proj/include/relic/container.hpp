#pragma once

#include <string>
#include <utility>
#include <vector>

#include "relic/tensor.hpp"

namespace relic {

// Named-tensor container used for checkpoints.
// Layout: magic "RLCK", u32 version, u32 tensor count, then per tensor:
// u16 name length, UTF-8 name, u8 rank, u32 dims, little-endian f32 payload.
struct TensorContainer {
  std::vector<std::pair<std::string, Tensor>> entries;

  void put(const std::string& name, Tensor t) { entries.emplace_back(name, std::move(t)); }
  const Tensor* find(const std::string& name) const {
    for (auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  }
  const Tensor& get(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw std::runtime_error("container: missing tensor '" + name + "'");
    return *t;
  }
  bool has(const std::string& name) const { return find(name) != nullptr; }
};

void save_container(const TensorContainer& c, const std::string& path);
TensorContainer load_container(const std::string& path);

}  // namespace relic
