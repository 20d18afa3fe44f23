#include "oclip/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oclip/error.hpp"

namespace oclip {

Tensor masked_char_loss(std::span<const Tensor> masked_logits,
                        std::span<const std::vector<std::size_t>> targets) {
  require(masked_logits.size() == targets.size(), ErrorKind::kContract,
          "masked_char_loss: one target list per image required");
  std::vector<Tensor> rows;
  std::vector<std::size_t> flat;
  for (std::size_t i = 0; i < masked_logits.size(); ++i) {
    require(masked_logits[i].dim(0) == targets[i].size(), ErrorKind::kContract,
            "masked_char_loss: every instance needs a target");
    rows.push_back(masked_logits[i]);
    flat.insert(flat.end(), targets[i].begin(), targets[i].end());
  }
  require(!flat.empty(), ErrorKind::kContract, "masked_char_loss: no masked instances");
  const Tensor all = rows.size() == 1 ? rows[0] : concat(rows, 0);
  return cross_entropy(all, flat);
}

Tensor similarity_matrix(const Tensor& img_vecs, const Tensor& txt_vecs,
                         const Tensor& temperature) {
  require(temperature.numel() == 1 && temperature[0] > 0.0, ErrorKind::kContract,
          "similarity_matrix: temperature must be a positive scalar");
  require(img_vecs.shape() == txt_vecs.shape(), ErrorKind::kDimension,
          "similarity_matrix: " + shape_str(img_vecs.shape()) + " vs " +
              shape_str(txt_vecs.shape()));
  return divide_scalar(matmul(img_vecs, transpose(txt_vecs)), temperature);
}

Tensor i2t_probabilities(const Tensor& logits) { return softmax(logits, 1); }

Tensor t2i_probabilities(const Tensor& logits) { return softmax(transpose(logits), 1); }

Tensor batch_contrastive_loss(const Tensor& img_vecs, const Tensor& txt_vecs,
                              const Tensor& temperature) {
  const Tensor logits = similarity_matrix(img_vecs, txt_vecs, temperature);
  std::vector<std::size_t> diag(logits.dim(0));
  std::iota(diag.begin(), diag.end(), std::size_t{0});
  return add(cross_entropy(logits, diag), cross_entropy(transpose(logits), diag));
}

double LossBreakdown::accuracy() const {
  if (instance_correct.empty()) return 0.0;
  return std::accumulate(instance_correct.begin(), instance_correct.end(), 0.0) /
         static_cast<double>(instance_correct.size());
}

LossBreakdown total_loss(Tensor l_cls, Tensor l_bc) {
  require(std::isfinite(l_cls.item()) && std::isfinite(l_bc.item()), ErrorKind::kDivergence,
          "non-finite loss (l_cls=" + std::to_string(l_cls.item()) +
              ", l_bc=" + std::to_string(l_bc.item()) + ")");
  LossBreakdown out;
  out.total = add(l_cls, l_bc);
  out.l_cls = std::move(l_cls);
  out.l_bc = std::move(l_bc);
  return out;
}

LossBreakdown compute_losses(std::span<const SampleOutput> outputs,
                             std::span<const SampleInput> batch, const Tensor& temperature,
                             const ObjectiveOptions& options) {
  require(outputs.size() == batch.size() && !batch.empty(), ErrorKind::kContract,
          "compute_losses: outputs do not match batch");
  std::vector<Tensor> logits;
  std::vector<std::vector<std::size_t>> targets;
  std::vector<Tensor> imgs, txts;
  std::vector<double> correct;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    logits.push_back(outputs[i].masked_logits);
    auto& t = targets.emplace_back();
    const auto lv = outputs[i].masked_logits.data();
    const std::size_t v = outputs[i].masked_logits.dim(1);
    for (std::size_t r = 0; r < batch[i].instances.size(); ++r) {
      const std::size_t target = batch[i].instances[r].mask_target;
      t.push_back(target);
      const auto row = lv.subspan(r * v, v);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      correct.push_back(best == target ? 1.0 : 0.0);
    }
    imgs.push_back(outputs[i].img_vec);
    txts.push_back(outputs[i].txt_vec);
  }
  Tensor l_cls = masked_char_loss(logits, targets);
  Tensor l_bc = Tensor::scalar(0.0);
  if (options.contrastive) {
    const Tensor img = imgs.size() == 1 ? imgs[0] : concat(imgs, 0);
    const Tensor txt = txts.size() == 1 ? txts[0] : concat(txts, 0);
    l_bc = batch_contrastive_loss(img, txt, temperature);
  }
  LossBreakdown out = total_loss(std::move(l_cls), std::move(l_bc));
  out.instance_correct = std::move(correct);
  return out;
}

}  // namespace oclip
