#include "oclip/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "font_data.hpp"
#include "oclip/error.hpp"

namespace oclip {

using nlohmann::json;

// ---- font ---------------------------------------------------------------

GlyphFont GlyphFont::parse(const std::string& text) {
  GlyphFont font;
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("# ", 0) == 0) continue;
    lines.push_back(line);
  }
  std::size_t i = 0;
  while (i < lines.size()) {
    require(lines[i].size() == 1, ErrorKind::kFormat, "font: expected a symbol line, got '" + lines[i] + "'");
    const char symbol = lines[i][0];
    require(i + kGlyphHeight < lines.size(), ErrorKind::kFormat,
            std::string("font: glyph '") + symbol + "' is truncated");
    Bitmap bitmap{};
    bool any = false;
    for (std::size_t r = 0; r < kGlyphHeight; ++r) {
      const std::string& row = lines[i + 1 + r];
      require(row.size() == kGlyphWidth, ErrorKind::kFormat,
              std::string("font: glyph '") + symbol + "' row has wrong width");
      for (std::size_t c = 0; c < kGlyphWidth; ++c) {
        require(row[c] == '#' || row[c] == '.', ErrorKind::kFormat, "font: bad cell");
        bitmap[r][c] = row[c] == '#';
        any = any || bitmap[r][c];
      }
    }
    require(any, ErrorKind::kFormat, std::string("font: glyph '") + symbol + "' is empty");
    font.glyphs_[static_cast<unsigned char>(symbol)] = bitmap;
    i += 1 + kGlyphHeight;
  }
  return font;
}

const GlyphFont& GlyphFont::builtin() {
  static const GlyphFont font = parse(detail::kFontAsset);
  return font;
}

const GlyphFont::Bitmap& GlyphFont::glyph(char c) const {
  const auto& g = glyphs_[static_cast<unsigned char>(c)];
  require(g.has_value(), ErrorKind::kIndex, std::string("no glyph for symbol '") + c + "'");
  return *g;
}

// ---- rendering ----------------------------------------------------------

Tensor Sample::image() const {
  std::vector<double> v(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) v[i] = pixels[i] / 255.0;
  return Tensor({1, size, size}, std::move(v));
}

void GenConfig::validate() const {
  const auto check = [](bool cond, const std::string& what) {
    require(cond, ErrorKind::kUsage, "invalid generator config: " + what);
  };
  check(image_size >= kGlyphHeight, "image_size too small for one glyph row");
  check(min_instances <= max_instances, "min_instances > max_instances");
  check(min_length >= 1 && min_length <= max_length, "need 1 <= min_length <= max_length");
  check(max_length <= kMaxInstanceLength, "max_length exceeds 25");
  check(max_length * kGlyphAdvance - 1 <= image_size, "max_length text does not fit the canvas");
  check(max_scale >= 1, "max_scale must be at least 1");
  check(noise_amplitude >= 0.0 && noise_amplitude <= 1.0, "noise_amplitude outside [0,1]");
  const CharVocab vocab(alphabet);
  for (char c : alphabet) {
    check(GlyphFont::builtin().has(c), std::string("no glyph for alphabet symbol '") + c + "'");
  }
}

namespace {

bool overlaps_with_gap(const Box& a, const Box& b) {
  return a.x0 - 1 < b.x1 && b.x0 - 1 < a.x1 && a.y0 - 1 < b.y1 && b.y0 - 1 < a.y1;
}

}  // namespace

Sample render_sample(std::uint64_t seed, const GenConfig& config) {
  config.validate();
  SplitMix64 rng(seed);
  const auto side = static_cast<int>(config.image_size);
  Sample sample;
  sample.seed = seed;
  sample.size = config.image_size;

  struct Placed {
    TextBox tb;
    int scale;
  };
  std::vector<Placed> placed;
  const std::size_t count =
      config.min_instances + rng.below(config.max_instances - config.min_instances + 1);
  for (std::size_t n = 0; n < count; ++n) {
    const std::size_t len = config.min_length + rng.below(config.max_length - config.min_length + 1);
    std::string text(len, ' ');
    for (auto& c : text) c = config.alphabet[rng.below(config.alphabet.size())];
    int scale = 1 + static_cast<int>(rng.below(config.max_scale));
    const auto width_at = [&](int s) { return static_cast<int>(len * kGlyphAdvance - 1) * s; };
    while (scale > 1 && (width_at(scale) > side || static_cast<int>(kGlyphHeight) * scale > side)) --scale;
    const int w = width_at(scale);
    const int h = static_cast<int>(kGlyphHeight) * scale;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(side - w + 1)));
      const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(side - h + 1)));
      const Box box{x0, y0, x0 + w, y0 + h};
      const bool clear = std::none_of(placed.begin(), placed.end(), [&](const Placed& p) {
        return overlaps_with_gap(box, p.tb.box);
      });
      if (clear) {
        placed.push_back({{text, box}, scale});
        break;
      }
    }
  }

  sample.pixels.resize(config.image_size * config.image_size);
  for (auto& px : sample.pixels) {
    px = static_cast<std::uint8_t>(std::floor(rng.uniform() * config.noise_amplitude * 255.0));
  }
  const GlyphFont& font = GlyphFont::builtin();
  for (const auto& p : placed) {
    for (std::size_t j = 0; j < p.tb.text.size(); ++j) {
      const auto& bm = font.glyph(p.tb.text[j]);
      const int gx = p.tb.box.x0 + static_cast<int>(j * kGlyphAdvance) * p.scale;
      for (std::size_t r = 0; r < kGlyphHeight; ++r)
        for (std::size_t c = 0; c < kGlyphWidth; ++c) {
          if (!bm[r][c]) continue;
          for (int dy = 0; dy < p.scale; ++dy)
            for (int dx = 0; dx < p.scale; ++dx) {
              const int x = gx + static_cast<int>(c) * p.scale + dx;
              const int y = p.tb.box.y0 + static_cast<int>(r) * p.scale + dy;
              sample.pixels[static_cast<std::size_t>(y * side + x)] = 255;
            }
        }
    }
    sample.instances.push_back(p.tb);
  }
  return sample;
}

std::vector<Sample> generate_corpus(std::uint64_t seed, std::size_t count, const GenConfig& config) {
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(render_sample(seed ^ i, config));
  return out;
}

// ---- masking and weak annotation ---------------------------------------

TextInstanceEncoding mask_instance(const std::string& text, SplitMix64& rng,
                                   const CharVocab& vocab, std::size_t k_max) {
  require(!text.empty(), ErrorKind::kContract, "mask_instance: empty text instance");
  require(text.size() <= k_max, ErrorKind::kContract,
          "mask_instance: '" + text + "' longer than k_max = " + std::to_string(k_max));
  TextInstanceEncoding enc;
  enc.char_ids.assign(k_max, vocab.pad_id());
  for (std::size_t j = 0; j < text.size(); ++j) enc.char_ids[j] = vocab.id(text[j]);
  enc.valid_len = text.size();
  const std::size_t pos = rng.below(text.size());
  enc.mask_pos = pos;
  enc.mask_target = enc.char_ids[pos];
  enc.char_ids[pos] = vocab.mask_id();
  return enc;
}

Sample subset_annotations(const Sample& sample, double fraction, SplitMix64& rng) {
  require(fraction > 0.0 && fraction <= 1.0, ErrorKind::kUsage,
          "annotation fraction must lie in (0, 1], got " + std::to_string(fraction));
  const std::size_t n = sample.instances.size();
  const auto keep = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + rng.below(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  Sample out;
  out.seed = sample.seed;
  out.size = sample.size;
  out.pixels = sample.pixels;
  for (auto i : idx) out.instances.push_back(sample.instances[i]);
  return out;
}

ManifestFilterResult filter_manifest(std::span<const ManifestRecord> records,
                                     double det_threshold, double rec_threshold) {
  require(det_threshold >= 0.0 && det_threshold <= 1.0 && rec_threshold >= 0.0 &&
              rec_threshold <= 1.0,
          ErrorKind::kUsage, "thresholds must lie in [0, 1]");
  ManifestFilterResult out;
  std::set<std::string> seen, kept_ids;
  for (const auto& r : records) {
    const bool valid = r.det_conf >= 0.0 && r.det_conf <= 1.0 && r.rec_conf >= 0.0 &&
                       r.rec_conf <= 1.0;
    if (!valid) {
      ++out.malformed;
      continue;
    }
    seen.insert(r.image_id);
    if (r.det_conf >= det_threshold && r.rec_conf >= rec_threshold) {
      out.kept.push_back(r);
      kept_ids.insert(r.image_id);
    } else {
      ++out.dropped;
    }
  }
  out.images_kept = kept_ids.size();
  out.images_dropped = seen.size() - kept_ids.size();
  return out;
}

Batch make_batch(std::span<const Sample> samples, double fraction, SplitMix64& rng,
                 const CharVocab& vocab, std::size_t k_max) {
  require(!samples.empty(), ErrorKind::kContract, "make_batch: empty batch");
  Batch batch;
  for (const auto& s : samples) {
    require(!s.instances.empty(), ErrorKind::kContract,
            "make_batch: sample " + std::to_string(s.seed) + " has no text instances");
    Sample kept = subset_annotations(s, fraction, rng);
    SampleInput input;
    input.image = kept.image();
    for (const auto& tb : kept.instances) {
      input.instances.push_back(mask_instance(tb.text, rng, vocab, k_max));
    }
    batch.inputs.push_back(std::move(input));
    batch.annotations.push_back(std::move(kept.instances));
  }
  return batch;
}

// ---- line formats -------------------------------------------------------

namespace {

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(bytes.size() * 2, '0');
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    out[2 * i] = kDigits[bytes[i] >> 4];
    out[2 * i + 1] = kDigits[bytes[i] & 15];
  }
  return out;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::string corpus_line(const Sample& sample) {
  json j;
  j["seed"] = sample.seed;
  j["size"] = sample.size;
  j["image"] = to_hex(sample.pixels);
  json inst = json::array();
  for (const auto& tb : sample.instances) {
    inst.push_back({{"text", tb.text}, {"box", {tb.box.x0, tb.box.y0, tb.box.x1, tb.box.y1}}});
  }
  j["instances"] = std::move(inst);
  return j.dump();
}

Sample parse_corpus_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("corpus record is not valid JSON: ") + e.what());
  }
  try {
    Sample s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.size = j.at("size").get<std::size_t>();
    const auto hex = j.at("image").get<std::string>();
    require(hex.size() == 2 * s.size * s.size, ErrorKind::kFormat,
            "corpus record image has " + std::to_string(hex.size() / 2) + " bytes, expected " +
                std::to_string(s.size * s.size));
    s.pixels.resize(s.size * s.size);
    for (std::size_t i = 0; i < s.pixels.size(); ++i) {
      const int hi = hex_value(hex[2 * i]), lo = hex_value(hex[2 * i + 1]);
      require(hi >= 0 && lo >= 0, ErrorKind::kFormat, "corpus record image is not hex");
      s.pixels[i] = static_cast<std::uint8_t>(hi * 16 + lo);
    }
    for (const auto& inst : j.at("instances")) {
      TextBox tb;
      tb.text = inst.at("text").get<std::string>();
      const auto& b = inst.at("box");
      require(b.is_array() && b.size() == 4, ErrorKind::kFormat, "corpus box must hold 4 ints");
      tb.box = {b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
      s.instances.push_back(std::move(tb));
    }
    return s;
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed corpus record: ") + e.what());
  }
}

std::uint64_t write_corpus(const std::string& path, std::span<const Sample> samples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot open " + path + " for writing");
  std::uint64_t hash = fnv1a64(std::string());
  for (const auto& s : samples) {
    const std::string line = corpus_line(s) + "\n";
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    hash = fnv1a64(line, hash);
  }
  out.flush();
  require(out.good(), ErrorKind::kIo, "failed writing " + path);
  return hash;
}

std::vector<Sample> read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open corpus " + path);
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(parse_corpus_line(line));
    } catch (const Error& e) {
      fail(e.kind(), path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string manifest_line(const ManifestRecord& record) {
  json j;
  j["image_id"] = record.image_id;
  j["text"] = record.text;
  j["det_conf"] = record.det_conf;
  j["rec_conf"] = record.rec_conf;
  return j.dump();
}

std::optional<ManifestRecord> parse_manifest_line(const std::string& line) {
  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  const auto str = [&](const char* key) -> const json* {
    auto it = j.find(key);
    return it != j.end() && it->is_string() ? &*it : nullptr;
  };
  const auto num = [&](const char* key) -> const json* {
    auto it = j.find(key);
    return it != j.end() && it->is_number() ? &*it : nullptr;
  };
  const json* id = j.contains("image_id") && j["image_id"].is_number_integer() ? &j["image_id"]
                                                                              : str("image_id");
  const json* text = str("text");
  const json* det = num("det_conf");
  const json* rec = num("rec_conf");
  if (!id || !text || !det || !rec) return std::nullopt;
  ManifestRecord r;
  r.image_id = id->is_string() ? id->get<std::string>() : id->dump();
  r.text = text->get<std::string>();
  r.det_conf = det->get<double>();
  r.rec_conf = rec->get<double>();
  if (!(r.det_conf >= 0.0 && r.det_conf <= 1.0 && r.rec_conf >= 0.0 && r.rec_conf <= 1.0)) {
    return std::nullopt;
  }
  return r;
}

ManifestFilterResult filter_manifest_file(const std::string& in_path, const std::string& out_path,
                                          double det_threshold, double rec_threshold) {
  std::ifstream in(in_path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open manifest " + in_path);
  std::vector<ManifestRecord> records;
  std::size_t malformed = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (auto r = parse_manifest_line(line)) {
      records.push_back(std::move(*r));
    } else {
      ++malformed;
    }
  }
  ManifestFilterResult result = filter_manifest(records, det_threshold, rec_threshold);
  result.malformed += malformed;
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot open " + out_path + " for writing");
  for (const auto& r : result.kept) out << manifest_line(r) << '\n';
  out.flush();
  require(out.good(), ErrorKind::kIo, "failed writing " + out_path);
  return result;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t hash) {
  for (auto b : bytes) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::uint64_t fnv1a64(const std::string& s, std::uint64_t hash) {
  return fnv1a64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()),
                                               s.size()),
                 hash);
}

}  // namespace oclip
