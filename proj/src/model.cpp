#include "oclip/model.hpp"

#include <cmath>

#include "oclip/error.hpp"

namespace oclip {
namespace {

Tensor linear(const Tensor& x, const ParamStore& p, const std::string& prefix) {
  Tensor y = matmul(x, p.get(prefix + ".weight"));
  const std::string bias = prefix + ".bias";
  return p.contains(bias) ? add(y, p.get(bias)) : y;
}

Tensor norm(const Tensor& x, const ParamStore& p, const std::string& prefix) {
  return layer_norm(x, p.get(prefix + ".gain"), p.get(prefix + ".bias"));
}

Tensor feed_forward(const Tensor& x, const ParamStore& p, const std::string& prefix) {
  return linear(gelu(linear(x, p, prefix + ".fc1")), p, prefix + ".fc2");
}

// Scaled dot-product attention over `heads` heads. Post-softmax weights land
// in `weights` ([heads, n, m]) when requested.
Tensor attention(const Tensor& query, const Tensor& keyval, const ParamStore& p,
                 const std::string& prefix, std::size_t heads, Tensor* weights) {
  const std::size_t d = query.dim(1);
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor q = linear(query, p, prefix + ".q");
  const Tensor k = linear(keyval, p, prefix + ".k");
  const Tensor v = linear(keyval, p, prefix + ".v");
  std::vector<Tensor> outs;
  outs.reserve(heads);
  std::vector<double> saved;
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor qh = heads == 1 ? q : slice(q, 1, h * dh, dh);
    const Tensor kh = heads == 1 ? k : slice(k, 1, h * dh, dh);
    const Tensor vh = heads == 1 ? v : slice(v, 1, h * dh, dh);
    const Tensor probs = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    if (weights) saved.insert(saved.end(), probs.data().begin(), probs.data().end());
    outs.push_back(matmul(probs, vh));
  }
  if (weights) *weights = Tensor({heads, query.dim(0), keyval.dim(0)}, std::move(saved));
  const Tensor merged = heads == 1 ? outs[0] : concat(outs, 1);
  return linear(merged, p, prefix + ".o");
}

// Pre-norm self-attention block shared by the image and text encoders.
Tensor encoder_block(const Tensor& x, const ParamStore& p, const std::string& prefix,
                     std::size_t heads, Tensor* weights) {
  const Tensor h = norm(x, p, prefix + ".ln1");
  const Tensor a = add(x, attention(h, h, p, prefix + ".attn", heads, weights));
  return add(a, feed_forward(norm(a, p, prefix + ".ln2"), p, prefix + ".ffn"));
}

}  // namespace

void TextInstanceEncoding::validate(const ModelConfig& config) const {
  require(char_ids.size() == config.k_max, ErrorKind::kDimension,
          "text instance holds " + std::to_string(char_ids.size()) + " ids, expected k_max = " +
              std::to_string(config.k_max));
  require(valid_len > 0 && valid_len <= config.k_max, ErrorKind::kContract,
          "text instance length must lie in [1, k_max]");
  for (auto id : char_ids) {
    require(id < config.vocab_size(), ErrorKind::kIndex,
            "character id " + std::to_string(id) + " outside vocabulary");
  }
  if (mask_pos) {
    require(*mask_pos < valid_len, ErrorKind::kContract, "mask position beyond instance length");
    require(char_ids[*mask_pos] == config.vocab_size() - 1, ErrorKind::kContract,
            "masked position does not hold the MASK id");
    require(mask_target < config.vocab_size() - 2, ErrorKind::kContract,
            "mask target must be a printable symbol");
  }
}

Tensor patchify(const Tensor& image, const ModelConfig& config) {
  const std::size_t c = config.channels, side = config.image_size, ps = config.patch_size;
  require(image.shape() == Shape{c, side, side}, ErrorKind::kDimension,
          "image of shape " + shape_str(image.shape()) + " does not match configured " +
              shape_str({c, side, side}));
  const std::size_t grid = config.grid();
  const std::size_t pd = config.patch_dim();
  const auto px = image.data();
  std::vector<double> out(grid * grid * pd);
  for (std::size_t gy = 0; gy < grid; ++gy)
    for (std::size_t gx = 0; gx < grid; ++gx) {
      double* dst = out.data() + (gy * grid + gx) * pd;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < ps; ++y)
          for (std::size_t x = 0; x < ps; ++x)
            *dst++ = px[(ch * side + gy * ps + y) * side + gx * ps + x];
    }
  return Tensor({grid * grid, pd}, std::move(out));
}

Tensor encode_image(const Tensor& image, const ParamStore& params, const ModelConfig& config,
                    Tensor* attn) {
  const Tensor patches = patchify(image, config);
  Tensor x = add(linear(patches, params, "image.patch"), params.get("image.pos.table"));
  x = encoder_block(x, params, "image.block", config.n_heads, attn);
  return norm(x, params, "image.ln_out");
}

Tensor encode_text(std::span<const TextInstanceEncoding> instances, const ParamStore& params,
                   const ModelConfig& config) {
  require(!instances.empty(), ErrorKind::kContract, "encode_text needs at least one instance");
  const std::size_t k = config.k_max;
  const Tensor& table = params.get("text.char.table");
  const Tensor& pos = params.get("text.pos.table");
  std::vector<Tensor> pooled;
  pooled.reserve(instances.size());
  for (const auto& inst : instances) {
    inst.validate(config);
    // PAD-masked attention computed on the valid prefix alone: masked keys
    // receive exactly zero weight and PAD rows are never pooled, so dropping
    // them leaves every pooled value bit-identical.
    const std::size_t n = inst.valid_len;
    const std::span<const std::size_t> ids(inst.char_ids.data(), n);
    Tensor x = add(embedding_gather(table, ids), n == k ? pos : slice(pos, 0, 0, n));
    for (std::size_t l = 0; l < config.n_enc_layers; ++l) {
      x = encoder_block(x, params, "text.layer" + std::to_string(l), config.n_heads, nullptr);
    }
    const Tensor valid = norm(x, params, "text.ln_out");
    pooled.push_back(reshape(mean(valid, 0), {1, config.d_model}));
  }
  return pooled.size() == 1 ? pooled[0] : concat(pooled, 0);
}

Decoded decode(const Tensor& te, const Tensor& ie, const ParamStore& params,
               const ModelConfig& config) {
  require(te.rank() == 2 && ie.rank() == 2 && te.dim(1) == config.d_model &&
              ie.dim(1) == config.d_model,
          ErrorKind::kDimension,
          "decode: te " + shape_str(te.shape()) + " / ie " + shape_str(ie.shape()) +
              " inconsistent with d_model " + std::to_string(config.d_model));
  const std::size_t n = te.dim(0), s = ie.dim(0);
  std::vector<double> all_attn;
  all_attn.reserve(config.n_dec_layers * config.n_heads * n * s);
  Tensor q = te;
  for (std::size_t l = 0; l < config.n_dec_layers; ++l) {
    const std::string p = "decoder.layer" + std::to_string(l);
    Tensor w;
    q = add(q, attention(norm(q, params, p + ".ln_q"), ie, params, p + ".cross", config.n_heads,
                         &w));
    q = add(q, feed_forward(norm(q, params, p + ".ln_ffn"), params, p + ".ffn"));
    all_attn.insert(all_attn.end(), w.data().begin(), w.data().end());
  }
  return {norm(q, params, "decoder.ln_out"),
          Tensor({config.n_dec_layers, config.n_heads, n, s}, std::move(all_attn))};
}

Tensor predict_masked(const Tensor& dec_out, const ParamStore& params) {
  return linear(dec_out, params, "head");
}

Pooled pool_for_contrastive(const Tensor& ie, const Tensor& te) {
  require(te.rank() == 2 && te.dim(0) > 0, ErrorKind::kContract,
          "pool_for_contrastive needs a nonempty text set");
  const std::size_t d = ie.dim(1);
  return {l2_normalize(reshape(mean(ie, 0), {1, d}), 1),
          l2_normalize(reshape(mean(te, 0), {1, d}), 1)};
}

std::vector<SampleOutput> forward(std::span<const SampleInput> batch, const ParamStore& params,
                                  const ModelConfig& config, const ForwardOptions& options) {
  require(!batch.empty(), ErrorKind::kContract, "forward needs at least one sample");
  std::vector<SampleOutput> outputs;
  outputs.reserve(batch.size());
  for (const auto& sample : batch) {
    for (const auto& inst : sample.instances) {
      require(inst.mask_pos.has_value(), ErrorKind::kContract,
              "every instance needs exactly one masked character");
    }
    SampleOutput out;
    const Tensor ie = encode_image(sample.image, params, config);
    const Tensor te = encode_text(sample.instances, params, config);
    if (options.use_decoder) {
      Decoded dec = decode(te, ie, params, config);
      out.masked_logits = predict_masked(dec.out, params);
      out.attn = std::move(dec.attn);
    } else {
      out.masked_logits = predict_masked(te, params);
    }
    Pooled pooled = pool_for_contrastive(ie, te);
    out.img_vec = std::move(pooled.img_vec);
    out.txt_vec = std::move(pooled.txt_vec);
    outputs.push_back(std::move(out));
  }
  return outputs;
}

}  // namespace oclip
