#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "numkit/tensor.hpp"

namespace numkit {

/// Checkpoint layout: one JSON header line {"config":..., "tensors":[{name,shape}...]}
/// terminated by '\n', followed by each tensor's values as raw little-endian
/// 64-bit reals, concatenated in header order.
void save_checkpoint(const std::string& path, const nlohmann::json& config,
                     const std::vector<std::pair<std::string, Tensor>>& tensors);

struct Checkpoint {
  nlohmann::json config;
  std::vector<std::string> order;        // header order
  std::map<std::string, Tensor> tensors;

  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) != 0; }
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace numkit
