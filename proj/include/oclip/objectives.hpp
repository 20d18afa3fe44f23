#pragma once

#include <span>
#include <vector>

#include "oclip/model.hpp"
#include "oclip/tensor.hpp"

namespace oclip {

// Masked-character cross-entropy averaged over every instance in the batch,
// whichever image it belongs to.
Tensor masked_char_loss(std::span<const Tensor> masked_logits,
                        std::span<const std::vector<std::size_t>> targets);

// logits[a][b] = img[a] . txt[b] / temperature
Tensor similarity_matrix(const Tensor& img_vecs, const Tensor& txt_vecs, const Tensor& temperature);

// Row-wise softmax of the similarity logits (image-to-text), and of their
// transpose (text-to-image).
Tensor i2t_probabilities(const Tensor& logits);
Tensor t2i_probabilities(const Tensor& logits);

// Mean over the batch of H(y_i2t, p_i2t) + H(y_t2i, p_t2i) with diagonal
// one-hot targets.
Tensor batch_contrastive_loss(const Tensor& img_vecs, const Tensor& txt_vecs,
                              const Tensor& temperature);

struct LossBreakdown {
  Tensor l_cls;
  Tensor l_bc;
  Tensor total;
  std::vector<double> instance_correct;  // 1.0 where argmax == target

  double accuracy() const;
};

// Exact sum. Non-finite components raise a divergence error.
LossBreakdown total_loss(Tensor l_cls, Tensor l_bc);

struct ObjectiveOptions {
  bool contrastive = true;  // false zeroes l_bc
};

// Applies the losses above to the outputs of `forward`.
LossBreakdown compute_losses(std::span<const SampleOutput> outputs,
                             std::span<const SampleInput> batch, const Tensor& temperature,
                             const ObjectiveOptions& options = {});

}  // namespace oclip
