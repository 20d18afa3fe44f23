#include "oclip/config.hpp"

#include <json.hpp>

#include "oclip/error.hpp"

namespace oclip {

void ModelConfig::validate() const {
  const auto check = [](bool cond, const std::string& what) {
    require(cond, ErrorKind::kContract, "invalid model config: " + what);
  };
  check(d_model > 0 && n_heads > 0, "d_model and n_heads must be positive");
  check(d_model % n_heads == 0, "d_model must be divisible by n_heads");
  check(n_enc_layers > 0, "n_enc_layers must be positive");
  check(n_dec_layers > 0, "n_dec_layers must be positive");
  check(k_max > 0, "k_max must be positive");
  check(patch_size > 0 && image_size > 0, "image_size and patch_size must be positive");
  check(image_size % patch_size == 0, "image_size must be divisible by patch_size");
  check(channels > 0, "channels must be positive");
  check(ffn_mult > 0, "ffn_mult must be positive");
  check(temperature_init >= kTemperatureMin && temperature_init <= kTemperatureMax,
        "temperature_init outside [5e-3, 5]");
  check(backbone == "patch", "only the patch backbone is implemented");
  CharVocab{alphabet};
}

std::string ModelConfig::to_json() const {
  nlohmann::json j = {{"d_model", d_model},       {"n_heads", n_heads},
                      {"n_enc_layers", n_enc_layers}, {"n_dec_layers", n_dec_layers},
                      {"k_max", k_max},           {"image_size", image_size},
                      {"patch_size", patch_size}, {"channels", channels},
                      {"ffn_mult", ffn_mult},     {"temperature_init", temperature_init},
                      {"backbone", backbone},     {"alphabet", alphabet}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  require(!j.is_discarded() && j.is_object(), ErrorKind::kFormat, "model config is not a JSON object");
  ModelConfig c;
  try {
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_enc_layers = j.value("n_enc_layers", c.n_enc_layers);
    c.n_dec_layers = j.value("n_dec_layers", c.n_dec_layers);
    c.k_max = j.value("k_max", c.k_max);
    c.image_size = j.value("image_size", c.image_size);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.channels = j.value("channels", c.channels);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
    c.temperature_init = j.value("temperature_init", c.temperature_init);
    c.backbone = j.value("backbone", c.backbone);
    c.alphabet = j.value("alphabet", c.alphabet);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("model config field has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 1;
  c.n_enc_layers = 1;
  c.n_dec_layers = 2;
  c.k_max = 8;
  c.image_size = 16;
  c.patch_size = 8;
  c.ffn_mult = 2;
  return c;
}

}  // namespace oclip
