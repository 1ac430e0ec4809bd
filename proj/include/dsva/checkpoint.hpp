#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsva/tensor.hpp"

namespace dsva {

std::uint32_t crc32(std::span<const std::uint8_t> bytes,
                    std::uint32_t seed = 0);

// Ordered name -> tensor map; the checkpoint unit and the freeze-contract
// checksum unit.
class ParamRegistry {
public:
  void add(std::string name, Tensor t);
  Tensor& get(const std::string& name);
  bool has(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& items() const {
    return items_;
  }
  // tensors whose name starts with `prefix` ("" = all), registration order
  std::vector<Tensor> tensors(const std::string& prefix = "") const;
  // CRC32 over the f64 payloads of the matching group
  std::uint32_t checksum(const std::string& prefix = "") const;

private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// "DSVA-CKPT" container: per-parameter name, shape and f64 payload with a
// trailing CRC32 over everything before it.
void save_checkpoint(const ParamRegistry& reg, const std::string& path);

// Strict by-name load into an existing registry: every stored parameter must
// exist with the same shape, and every registry entry must be present.
void load_checkpoint(ParamRegistry& reg, const std::string& path);

}  // namespace dsva
