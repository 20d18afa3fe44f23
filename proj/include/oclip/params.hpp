#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "oclip/config.hpp"
#include "oclip/tensor.hpp"

namespace oclip {

// Named parameter tensors in creation order. The order is part of the
// checkpoint format and of the initialization stream.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const Tensor& at(std::size_t i) const { return values_.at(i); }
  void set_at(std::size_t i, Tensor value);
  std::size_t total_values() const;

  // Copy whose tensors are leaves on `tape`.
  ParamStore bind(Tape& tape) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Gains, biases and the temperature are excluded from weight decay.
bool is_decayed(const std::string& name);

// Projections ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); embedding tables ~ N(0, 0.02);
// biases 0; gains 1; temperature = config.temperature_init.
ParamStore init_params(const ModelConfig& config, std::uint64_t seed);

}  // namespace oclip
