#pragma once

// Image encoder, character-aware text encoder and the cross-attention-only
// visual-textual decoder.

#include <optional>
#include <span>
#include <vector>

#include "oclip/config.hpp"
#include "oclip/params.hpp"
#include "oclip/tensor.hpp"

namespace oclip {

// One transcription, PAD-filled to k_max, with at most one masked character.
struct TextInstanceEncoding {
  std::vector<std::size_t> char_ids;
  std::size_t valid_len = 0;
  std::optional<std::size_t> mask_pos;
  std::size_t mask_target = 0;

  void validate(const ModelConfig& config) const;
};

// [C,H,W] -> [S, C*P*P], patches in row-major grid order, each patch
// flattened channel-major then row-major.
Tensor patchify(const Tensor& image, const ModelConfig& config);

// Patch projection + positional table + one self-attention/FFN block.
// Returns ie [S, d_model]. When `attn` is given it receives [n_heads, S, S].
Tensor encode_image(const Tensor& image, const ParamStore& params, const ModelConfig& config,
                    Tensor* attn = nullptr);

// te [n, d_model]: each instance runs through the encoder on its own, with
// PAD keys masked, and its valid positions are mean-pooled.
Tensor encode_text(std::span<const TextInstanceEncoding> instances, const ParamStore& params,
                   const ModelConfig& config);

struct Decoded {
  Tensor out;   // [n, d_model]
  Tensor attn;  // [n_dec_layers, n_heads, n, S], post-softmax, not differentiable
};

// Queries are the instance embeddings, keys/values the image embeddings.
// There is no query self-attention, so row i never depends on other rows.
Decoded decode(const Tensor& te, const Tensor& ie, const ParamStore& params,
               const ModelConfig& config);

// [n, vocab_size]
Tensor predict_masked(const Tensor& dec_out, const ParamStore& params);

struct Pooled {
  Tensor img_vec;  // [1, d_model], unit norm
  Tensor txt_vec;  // [1, d_model], unit norm
};

Pooled pool_for_contrastive(const Tensor& ie, const Tensor& te);

struct SampleInput {
  Tensor image;
  std::vector<TextInstanceEncoding> instances;
};

struct ForwardOptions {
  // false classifies the masked characters from te directly (no decoder).
  bool use_decoder = true;
};

struct SampleOutput {
  Tensor masked_logits;  // [n, vocab_size]
  Tensor img_vec;
  Tensor txt_vec;
  Tensor attn;  // empty when the decoder is bypassed
};

std::vector<SampleOutput> forward(std::span<const SampleInput> batch, const ParamStore& params,
                                  const ModelConfig& config, const ForwardOptions& options = {});

}  // namespace oclip
