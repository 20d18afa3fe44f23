#pragma once

#include <cstddef>
#include <string>

#include "oclip/vocab.hpp"

namespace oclip {

// Architectural hyperparameters. Defaults are the desk-scale model; the
// original pre-training used a ResNet-50 backbone on 512x512 inputs, which the
// patch backbone here stands in for.
struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 6;
  std::size_t k_max = 25;
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t channels = 1;
  std::size_t ffn_mult = 4;
  double temperature_init = 0.07;
  std::string backbone = "patch";
  std::string alphabet = std::string(CharVocab::kDefaultAlphabet);

  std::size_t vocab_size() const { return alphabet.size() + 2; }
  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t head_dim() const { return d_model / n_heads; }
  CharVocab vocab() const { return CharVocab(alphabet); }

  // Throws a contract error naming the first violated constraint.
  void validate() const;

  // Flat JSON object with every field above.
  std::string to_json() const;
  // Missing fields keep their defaults; the result is validated.
  static ModelConfig from_json(const std::string& text);

  // d_model 8, one head, two decoder layers, 16x16 images.
  static ModelConfig tiny();
};

inline constexpr double kTemperatureMin = 5e-3;
inline constexpr double kTemperatureMax = 5.0;

}  // namespace oclip
