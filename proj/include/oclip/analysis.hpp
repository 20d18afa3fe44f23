#pragma once

// Evaluation on trained parameters: decoder attention maps, retrieval
// accuracy, masked-character accuracy and per-group gradient checks.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oclip/config.hpp"
#include "oclip/params.hpp"
#include "oclip/synthdata.hpp"

namespace oclip {

struct AttentionMap {
  std::size_t grid = 0;           // patches per side
  std::size_t size = 0;           // pixels per side
  std::vector<double> cells;      // [grid*grid], sums to 1
  std::vector<double> pixels;     // [size*size], nearest-neighbour upsampled, sums to 1
  std::string text;
  std::size_t mask_pos = 0;
  char predicted = '?';
  char target = '?';
  Box box;

  // Attention mass falling inside `box`.
  double mass_in_box() const;
  // box area / image area.
  double box_fraction() const;
};

// The masked position used when inspecting an instance. Depends only on the
// sample seed and the instance text, so other instances cannot change it.
std::size_t inspection_mask_pos(const Sample& sample, const std::string& text);

// One map per instance of `sample`, read from decoder layer `layer` (default:
// last) and averaged over heads unless `head` is given.
std::vector<AttentionMap> attention_maps(const ParamStore& params, const ModelConfig& config,
                                         const Sample& sample,
                                         std::optional<std::size_t> layer = std::nullopt,
                                         std::optional<std::size_t> head = std::nullopt);

// Binary P5 graymap, linearly normalized so the map's maximum is 255.
void write_pgm(const std::string& path, std::span<const double> values, std::size_t width,
               std::size_t height);
std::vector<std::uint8_t> normalize_to_bytes(std::span<const double> values);

// Writes inst<i>.pgm / inst<i>.txt per instance plus composite.pgm (image
// followed by every map, side by side). Returns the maps.
std::vector<AttentionMap> export_attention(const ParamStore& params, const ModelConfig& config,
                                           const Sample& sample, const std::string& out_dir,
                                           std::optional<std::size_t> layer = std::nullopt,
                                           std::optional<std::size_t> head = std::nullopt);

struct LocalityReport {
  std::size_t instances = 0;
  double mean_mass = 0.0;       // mean attention mass inside the queried box
  double mean_fraction = 0.0;   // mean box area fraction
  double mean_ratio = 0.0;      // mean of per-instance mass / fraction

  double ratio_of_means() const { return mean_fraction > 0 ? mean_mass / mean_fraction : 0.0; }
};

LocalityReport attention_locality(const ParamStore& params, const ModelConfig& config,
                                  std::span<const Sample> samples);

struct RetrievalReport {
  std::size_t batches = 0;
  std::size_t rows = 0;
  double i2t = 0.0;
  double t2i = 0.0;
};

// Splits `samples` into consecutive batches of `batch` (a trailing partial
// batch is dropped unless it is the only one) and scores top-1 retrieval.
// Every instance of each sample is masked once, with positions drawn from `seed`.
RetrievalReport evaluate_retrieval(const ParamStore& params, const ModelConfig& config,
                                   std::span<const Sample> samples, std::size_t batch,
                                   std::uint64_t seed = 0);

struct MaskedAccuracy {
  std::size_t predictions = 0;
  std::size_t correct = 0;
  double accuracy() const {
    return predictions ? static_cast<double>(correct) / static_cast<double>(predictions) : 0.0;
  }
};

// Masks every position of every instance in turn and scores the argmax.
MaskedAccuracy masked_accuracy(const ParamStore& params, const ModelConfig& config,
                               std::span<const Sample> samples, bool use_decoder = true);

struct GroupCheck {
  std::string name;
  std::size_t values = 0;
  double max_rel_error = 0.0;
  bool pass = false;
};

// Finite-difference check of the summed pre-training loss with respect to
// every parameter group of a model built from `config`, on a two-sample batch.
std::vector<GroupCheck> grad_check(const ModelConfig& config, std::uint64_t seed, double tolerance);

}  // namespace oclip
