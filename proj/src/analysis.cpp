#include "oclip/analysis.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "oclip/error.hpp"
#include "oclip/model.hpp"
#include "oclip/objectives.hpp"
#include "oclip/rng.hpp"

namespace oclip {

namespace {

constexpr std::uint64_t kStreamInspect = 9;

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

TextInstanceEncoding encode_with_mask(const std::string& text, std::size_t pos,
                                      const CharVocab& vocab, std::size_t k_max) {
  require(!text.empty() && text.size() <= k_max, ErrorKind::kContract,
          "instance '" + text + "' does not fit k_max");
  require(pos < text.size(), ErrorKind::kContract, "mask position beyond instance");
  TextInstanceEncoding enc;
  enc.char_ids.assign(k_max, vocab.pad_id());
  for (std::size_t j = 0; j < text.size(); ++j) enc.char_ids[j] = vocab.id(text[j]);
  enc.valid_len = text.size();
  enc.mask_pos = pos;
  enc.mask_target = enc.char_ids[pos];
  enc.char_ids[pos] = vocab.mask_id();
  return enc;
}

}  // namespace

double AttentionMap::mass_in_box() const {
  double m = 0.0;
  for (int y = box.y0; y < box.y1; ++y)
    for (int x = box.x0; x < box.x1; ++x) m += pixels[static_cast<std::size_t>(y) * size + x];
  return m;
}

double AttentionMap::box_fraction() const {
  return static_cast<double>(box.area()) / static_cast<double>(size * size);
}

std::size_t inspection_mask_pos(const Sample& sample, const std::string& text) {
  require(!text.empty(), ErrorKind::kContract, "empty instance text");
  SplitMix64 rng(derive_seed(sample.seed ^ fnv1a64(text), kStreamInspect));
  return rng.below(text.size());
}

std::vector<AttentionMap> attention_maps(const ParamStore& params, const ModelConfig& config,
                                         const Sample& sample, std::optional<std::size_t> layer,
                                         std::optional<std::size_t> head) {
  require(!sample.instances.empty(), ErrorKind::kContract, "sample has no text instances");
  const std::size_t use_layer = layer.value_or(config.n_dec_layers - 1);
  require(use_layer < config.n_dec_layers, ErrorKind::kIndex,
          "decoder layer " + std::to_string(use_layer) + " out of range");
  require(!head || *head < config.n_heads, ErrorKind::kIndex, "attention head out of range");
  const CharVocab vocab = config.vocab();

  std::vector<TextInstanceEncoding> encs;
  for (const auto& tb : sample.instances) {
    encs.push_back(
        encode_with_mask(tb.text, inspection_mask_pos(sample, tb.text), vocab, config.k_max));
  }
  const Tensor ie = encode_image(sample.image(), params, config);
  const Tensor te = encode_text(encs, params, config);
  const Decoded dec = decode(te, ie, params, config);
  const Tensor logits = predict_masked(dec.out, params);

  const std::size_t n = encs.size(), s = config.num_patches(), heads = config.n_heads;
  const std::size_t grid = config.grid(), ps = config.patch_size, side = config.image_size;
  const auto attn = dec.attn.data();
  std::vector<AttentionMap> maps;
  for (std::size_t i = 0; i < n; ++i) {
    AttentionMap m;
    m.grid = grid;
    m.size = side;
    m.cells.assign(s, 0.0);
    const std::size_t h0 = head.value_or(0), h1 = head ? *head + 1 : heads;
    for (std::size_t h = h0; h < h1; ++h) {
      const double* row = attn.data() + ((use_layer * heads + h) * n + i) * s;
      for (std::size_t c = 0; c < s; ++c) m.cells[c] += row[c];
    }
    for (auto& c : m.cells) c /= static_cast<double>(h1 - h0);
    m.pixels.assign(side * side, 0.0);
    const double per_pixel = 1.0 / static_cast<double>(ps * ps);
    for (std::size_t y = 0; y < side; ++y)
      for (std::size_t x = 0; x < side; ++x)
        m.pixels[y * side + x] = m.cells[(y / ps) * grid + x / ps] * per_pixel;
    m.text = sample.instances[i].text;
    m.mask_pos = *encs[i].mask_pos;
    m.target = vocab.symbol(encs[i].mask_target);
    m.predicted = vocab.symbol(argmax(logits.data().subspan(i * config.vocab_size(), config.vocab_size())));
    m.box = sample.instances[i].box;
    maps.push_back(std::move(m));
  }
  return maps;
}

std::vector<std::uint8_t> normalize_to_bytes(std::span<const double> values) {
  std::vector<std::uint8_t> out(values.size(), 0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (range <= 0.0) return out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / range));
  }
  return out;
}

namespace {

void write_pgm_bytes(const std::string& path, std::span<const std::uint8_t> bytes,
                     std::size_t width, std::size_t height) {
  require(bytes.size() == width * height, ErrorKind::kDimension, "graymap size mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot open " + path + " for writing");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorKind::kIo, "failed writing " + path);
}

}  // namespace

void write_pgm(const std::string& path, std::span<const double> values, std::size_t width,
               std::size_t height) {
  write_pgm_bytes(path, normalize_to_bytes(values), width, height);
}

std::vector<AttentionMap> export_attention(const ParamStore& params, const ModelConfig& config,
                                           const Sample& sample, const std::string& out_dir,
                                           std::optional<std::size_t> layer,
                                           std::optional<std::size_t> head) {
  auto maps = attention_maps(params, config, sample, layer, head);
  std::filesystem::create_directories(out_dir);
  const std::size_t side = config.image_size;
  const std::size_t panels = maps.size() + 1;
  std::vector<std::uint8_t> composite(side * side * panels, 0);
  const auto blit = [&](std::span<const std::uint8_t> img, std::size_t panel) {
    for (std::size_t y = 0; y < side; ++y)
      std::copy_n(img.data() + y * side, side, composite.data() + y * side * panels + panel * side);
  };
  blit(sample.pixels, 0);
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto& m = maps[i];
    const auto bytes = normalize_to_bytes(m.pixels);
    const std::string stem = out_dir + "/inst" + std::to_string(i);
    write_pgm_bytes(stem + ".pgm", bytes, side, side);
    blit(bytes, i + 1);
    std::ofstream txt(stem + ".txt", std::ios::trunc);
    require(txt.good(), ErrorKind::kIo, "cannot write " + stem + ".txt");
    std::string shown = m.text;
    shown[m.mask_pos] = '?';
    txt << "text: " << m.text << "\n"
        << "query: " << shown << "\n"
        << "mask_pos: " << m.mask_pos << "\n"
        << "target: " << m.target << "\n"
        << "predicted: " << m.predicted << "\n"
        << "box: " << m.box.x0 << ' ' << m.box.y0 << ' ' << m.box.x1 << ' ' << m.box.y1 << "\n"
        << "mass_in_box: " << m.mass_in_box() << "\n"
        << "box_fraction: " << m.box_fraction() << "\n";
  }
  write_pgm_bytes(out_dir + "/composite.pgm", composite, side * panels, side);
  return maps;
}

LocalityReport attention_locality(const ParamStore& params, const ModelConfig& config,
                                  std::span<const Sample> samples) {
  LocalityReport r;
  for (const auto& s : samples) {
    if (s.instances.empty()) continue;
    for (const auto& m : attention_maps(params, config, s)) {
      const double mass = m.mass_in_box(), frac = m.box_fraction();
      r.mean_mass += mass;
      r.mean_fraction += frac;
      r.mean_ratio += mass / frac;
      ++r.instances;
    }
  }
  if (r.instances) {
    const auto n = static_cast<double>(r.instances);
    r.mean_mass /= n;
    r.mean_fraction /= n;
    r.mean_ratio /= n;
  }
  return r;
}

RetrievalReport evaluate_retrieval(const ParamStore& params, const ModelConfig& config,
                                   std::span<const Sample> samples, std::size_t batch,
                                   std::uint64_t seed) {
  require(batch > 0, ErrorKind::kUsage, "retrieval batch must be positive");
  require(!samples.empty(), ErrorKind::kContract, "retrieval needs a nonempty corpus");
  const CharVocab vocab = config.vocab();
  const std::size_t chunks = samples.size() < batch ? 1 : samples.size() / batch;
  const std::size_t per = samples.size() < batch ? samples.size() : batch;
  RetrievalReport report;
  std::size_t hits_i2t = 0, hits_t2i = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const auto chunk = samples.subspan(c * per, per);
    SplitMix64 rng(derive_seed(seed, c));
    const Batch b = make_batch(chunk, 1.0, rng, vocab, config.k_max);
    std::vector<Tensor> imgs, txts;
    for (const auto& in : b.inputs) {
      const Tensor ie = encode_image(in.image, params, config);
      const Tensor te = encode_text(in.instances, params, config);
      Pooled p = pool_for_contrastive(ie, te);
      imgs.push_back(std::move(p.img_vec));
      txts.push_back(std::move(p.txt_vec));
    }
    const Tensor logits = similarity_matrix(concat(imgs, 0), concat(txts, 0), params.get("temperature"));
    const auto v = logits.data();
    for (std::size_t a = 0; a < per; ++a) {
      if (argmax(v.subspan(a * per, per)) == a) ++hits_i2t;
      std::size_t best = 0;
      for (std::size_t r = 1; r < per; ++r)
        if (v[r * per + a] > v[best * per + a]) best = r;
      if (best == a) ++hits_t2i;
    }
    report.rows += per;
  }
  report.batches = chunks;
  report.i2t = static_cast<double>(hits_i2t) / static_cast<double>(report.rows);
  report.t2i = static_cast<double>(hits_t2i) / static_cast<double>(report.rows);
  return report;
}

MaskedAccuracy masked_accuracy(const ParamStore& params, const ModelConfig& config,
                               std::span<const Sample> samples, bool use_decoder) {
  const CharVocab vocab = config.vocab();
  MaskedAccuracy acc;
  for (const auto& s : samples) {
    if (s.instances.empty()) continue;
    SampleInput in;
    in.image = s.image();
    for (const auto& tb : s.instances)
      for (std::size_t j = 0; j < tb.text.size(); ++j)
        in.instances.push_back(encode_with_mask(tb.text, j, vocab, config.k_max));
    const auto out = forward(std::span<const SampleInput>(&in, 1), params, config, {use_decoder});
    const auto logits = out[0].masked_logits.data();
    const std::size_t v = config.vocab_size();
    for (std::size_t r = 0; r < in.instances.size(); ++r) {
      ++acc.predictions;
      if (argmax(logits.subspan(r * v, v)) == in.instances[r].mask_target) ++acc.correct;
    }
  }
  return acc;
}

std::vector<GroupCheck> grad_check(const ModelConfig& config, std::uint64_t seed, double tolerance) {
  config.validate();
  GenConfig gen;
  gen.image_size = config.image_size;
  gen.alphabet = config.alphabet;
  gen.min_instances = 1;
  gen.max_instances = 2;
  gen.min_length = 1;
  gen.max_length = std::min(config.k_max, (config.image_size + 1) / kGlyphAdvance);
  gen.max_scale = 1;
  const std::vector<Sample> samples = {render_sample(seed, gen), render_sample(seed ^ 1, gen)};
  SplitMix64 rng(derive_seed(seed, 5));
  const Batch batch = make_batch(samples, 1.0, rng, config.vocab(), config.k_max);
  const ParamStore params = init_params(config, derive_seed(seed, 6));

  std::vector<GroupCheck> report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ScalarFn loss = [&](Tape&, const Tensor& x) {
      ParamStore p = params;
      p.set_at(i, x);
      const auto outs = forward(batch.inputs, p, config);
      return compute_losses(outs, batch.inputs, p.get("temperature")).total;
    };
    GroupCheck g;
    g.name = params.names()[i];
    g.values = params.at(i).numel();
    g.max_rel_error = finite_diff_check(loss, params.at(i));
    g.pass = g.max_rel_error <= tolerance;
    report.push_back(std::move(g));
  }
  return report;
}

}  // namespace oclip
