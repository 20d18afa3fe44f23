#pragma once

// Synthetic scene-text corpus: rendering, masking, weak-annotation subsets,
// confidence filtering of OCR manifests, and the corpus/manifest line formats.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oclip/model.hpp"
#include "oclip/rng.hpp"
#include "oclip/vocab.hpp"

namespace oclip {

inline constexpr std::size_t kGlyphWidth = 5;
inline constexpr std::size_t kGlyphHeight = 7;
inline constexpr std::size_t kGlyphAdvance = kGlyphWidth + 1;
inline constexpr std::size_t kMaxInstanceLength = 25;

class GlyphFont {
 public:
  using Bitmap = std::array<std::array<bool, kGlyphWidth>, kGlyphHeight>;

  // The 5x7 font compiled in from assets/font5x7.txt.
  static const GlyphFont& builtin();
  static GlyphFont parse(const std::string& text);

  bool has(char c) const { return glyphs_[static_cast<unsigned char>(c)].has_value(); }
  const Bitmap& glyph(char c) const;

 private:
  std::array<std::optional<Bitmap>, 256> glyphs_{};
};

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int area() const { return (x1 - x0) * (y1 - y0); }
  bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  bool operator==(const Box&) const = default;
};

struct TextBox {
  std::string text;
  Box box;  // evaluation only, never fed to the model
  bool operator==(const TextBox&) const = default;
};

struct Sample {
  std::uint64_t seed = 0;
  std::size_t size = 0;               // square side in pixels
  std::vector<std::uint8_t> pixels;   // size*size, row-major, value/255 is intensity
  std::vector<TextBox> instances;

  // [1, size, size] in [0, 1].
  Tensor image() const;
  bool operator==(const Sample&) const = default;
};

struct GenConfig {
  std::size_t image_size = 64;
  std::size_t min_instances = 2;
  std::size_t max_instances = 4;
  std::size_t min_length = 3;
  std::size_t max_length = 8;
  std::size_t max_scale = 2;
  double noise_amplitude = 0.25;  // background is U[0, amplitude) before quantization
  std::string alphabet = std::string(CharVocab::kDefaultAlphabet);

  void validate() const;
};

// Deterministic in (seed, config). Instances that cannot be placed without
// overlap after 100 attempts are dropped.
Sample render_sample(std::uint64_t seed, const GenConfig& config);

// Sample i is rendered from seed ^ i.
std::vector<Sample> generate_corpus(std::uint64_t seed, std::size_t count, const GenConfig& config);

// PAD-fills to k_max and replaces one uniformly chosen character with MASK.
TextInstanceEncoding mask_instance(const std::string& text, SplitMix64& rng,
                                   const CharVocab& vocab, std::size_t k_max);

// Keeps ceil(fraction * n) instances chosen uniformly, in their original
// order. Pixels are untouched, so unannotated text stays visible.
Sample subset_annotations(const Sample& sample, double fraction, SplitMix64& rng);

struct ManifestRecord {
  std::string image_id;
  std::string text;
  double det_conf = 0.0;
  double rec_conf = 0.0;
  bool operator==(const ManifestRecord&) const = default;
};

struct ManifestFilterResult {
  std::vector<ManifestRecord> kept;
  std::size_t dropped = 0;
  std::size_t malformed = 0;
  std::size_t images_kept = 0;
  std::size_t images_dropped = 0;
};

// Keeps records with det_conf >= det_threshold and rec_conf >= rec_threshold,
// in input order. Records with confidences outside [0,1] count as malformed.
ManifestFilterResult filter_manifest(std::span<const ManifestRecord> records,
                                     double det_threshold, double rec_threshold);

// Streams a manifest file through filter_manifest. Lines that do not parse
// are skipped and counted as malformed.
ManifestFilterResult filter_manifest_file(const std::string& in_path, const std::string& out_path,
                                          double det_threshold, double rec_threshold);

struct Batch {
  std::vector<SampleInput> inputs;
  std::vector<std::vector<TextBox>> annotations;  // kept instances, aligned with inputs
};

// subset_annotations then mask_instance per kept instance. Image a pairs with
// text set a.
Batch make_batch(std::span<const Sample> samples, double fraction, SplitMix64& rng,
                 const CharVocab& vocab, std::size_t k_max);

// ---- line formats -------------------------------------------------------

std::string corpus_line(const Sample& sample);
Sample parse_corpus_line(const std::string& line);
// Returns the 64-bit FNV-1a digest of the bytes written.
std::uint64_t write_corpus(const std::string& path, std::span<const Sample> samples);
std::vector<Sample> read_corpus(const std::string& path);

std::string manifest_line(const ManifestRecord& record);
// nullopt for anything that is not a well-formed record.
std::optional<ManifestRecord> parse_manifest_line(const std::string& line);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                      std::uint64_t hash = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(const std::string& s, std::uint64_t hash = 0xcbf29ce484222325ULL);

}  // namespace oclip
