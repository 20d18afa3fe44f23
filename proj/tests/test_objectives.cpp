#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "oclip/error.hpp"
#include "oclip/objectives.hpp"
#include "oclip/params.hpp"
#include "oclip/synthdata.hpp"

using namespace oclip;
using oclip::testing::random_tensor;

namespace {

Tensor unit_rows(Shape shape, std::uint64_t seed) { return l2_normalize(random_tensor(shape, seed), 1); }

// Symmetric cross-entropy with diagonal targets, written out with scalar loops.
double contrastive_oracle(const Tensor& img, const Tensor& txt, double tau) {
  const std::size_t n = img.dim(0), d = img.dim(1);
  std::vector<double> l(n * n);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += img[a * d + k] * txt[b * d + k];
      l[a * n + b] = dot / tau;
    }
  double i2t = 0.0, t2i = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    double row = 0.0, col = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      row += std::exp(l[a * n + b]);
      col += std::exp(l[b * n + a]);
    }
    i2t += std::log(row) - l[a * n + a];
    t2i += std::log(col) - l[a * n + a];
  }
  return (i2t + t2i) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("batch contrastive loss matches the scalar oracle") {
  for (std::size_t n : {2u, 3u, 8u}) {
    const Tensor img = unit_rows({n, 5}, 10 + n), txt = unit_rows({n, 5}, 20 + n);
    const double tau = 0.25;
    const double got = batch_contrastive_loss(img, txt, Tensor::scalar(tau)).item();
    CHECK(std::abs(got - contrastive_oracle(img, txt, tau)) <= 1e-12);
  }
}

TEST_CASE("uniform similarity gives 2 ln N") {
  for (std::size_t n : {2u, 5u, 8u}) {
    const Tensor v = unit_rows({1, 6}, 3);
    std::vector<Tensor> rows(n, v);
    const Tensor img = concat(rows, 0);
    const double got = batch_contrastive_loss(img, img, Tensor::scalar(0.07)).item();
    CHECK(std::abs(got - 2.0 * std::log(static_cast<double>(n))) <= 1e-9);
  }
}

TEST_CASE("single pair contrastive loss is zero") {
  const Tensor a = unit_rows({1, 4}, 1), b = unit_rows({1, 4}, 2);
  CHECK(batch_contrastive_loss(a, b, Tensor::scalar(0.07)).item() == 0.0);
}

TEST_CASE("contrastive gradients against finite differences") {
  const Tensor img = unit_rows({4, 3}, 5), txt = unit_rows({4, 3}, 6);
  const Tensor tau = Tensor::scalar(0.3);
  CHECK(finite_diff_check([&](Tape&, const Tensor& x) { return batch_contrastive_loss(x, txt, tau); }, img) <= 1e-6);
  CHECK(finite_diff_check([&](Tape&, const Tensor& x) { return batch_contrastive_loss(img, x, tau); }, txt) <= 1e-6);
  CHECK(finite_diff_check([&](Tape&, const Tensor& t) { return batch_contrastive_loss(img, txt, t); }, tau) <= 1e-6);
}

TEST_CASE("similarity matrix and retrieval probabilities") {
  const Tensor img = unit_rows({3, 4}, 7), txt = unit_rows({3, 4}, 8);
  const Tensor l = similarity_matrix(img, txt, Tensor::scalar(0.5));
  CHECK(l.shape() == Shape{3, 3});
  double dot = 0.0;
  for (std::size_t k = 0; k < 4; ++k) dot += img[4 + k] * txt[8 + k];
  CHECK(l[1 * 3 + 2] == doctest::Approx(dot / 0.5).epsilon(1e-14));
  const Tensor p = i2t_probabilities(l), q = t2i_probabilities(l);
  for (std::size_t r = 0; r < 3; ++r) {
    double sp = 0.0, sq = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      sp += p[r * 3 + c];
      sq += q[r * 3 + c];
    }
    CHECK(sp == doctest::Approx(1.0));
    CHECK(sq == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(similarity_matrix(img, txt, Tensor::scalar(0.0)), Error);
  CHECK_THROWS_AS(similarity_matrix(img, txt, Tensor::scalar(-1.0)), Error);
}

TEST_CASE("masked character loss averages over instances across images") {
  const Tensor a = random_tensor({1, 5}, 1, -2, 2), b = random_tensor({3, 5}, 2, -2, 2);
  const std::vector<Tensor> logits = {a, b};
  const std::vector<std::vector<std::size_t>> targets = {{4}, {0, 2, 1}};
  const Tensor got = masked_char_loss(logits, targets);
  const std::vector<std::size_t> flat = {4, 0, 2, 1};
  const Tensor parts[] = {a, b};
  CHECK(std::abs(got.item() - cross_entropy(concat(parts, 0), flat).item()) <= 1e-15);
}

TEST_CASE("total loss is the exact sum and rejects non-finite parts") {
  const LossBreakdown l = total_loss(Tensor::scalar(1.2345678901234), Tensor::scalar(0.1));
  CHECK(l.total.item() == 1.2345678901234 + 0.1);
  try {
    total_loss(Tensor::scalar(std::nan("")), Tensor::scalar(0.0));
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDivergence);
  }
}

TEST_CASE("losses on an untrained model") {
  const ModelConfig c;
  const ParamStore p = init_params(c, 3);
  GenConfig g;
  const auto samples = generate_corpus(4, 8, g);
  SplitMix64 rng(5);
  const Batch batch = make_batch(samples, 1.0, rng, c.vocab(), c.k_max);
  const auto outs = forward(batch.inputs, p, c);

  const LossBreakdown with = compute_losses(outs, batch.inputs, p.get("temperature"));
  const double ln_v = std::log(static_cast<double>(c.vocab_size()));
  CHECK(std::abs(with.l_cls.item() - ln_v) <= 0.1 * ln_v);
  CHECK(with.total.item() == with.l_cls.item() + with.l_bc.item());
  CHECK(with.l_bc.item() > 0.0);

  const LossBreakdown without = compute_losses(outs, batch.inputs, p.get("temperature"), {false});
  CHECK(without.l_bc.item() == 0.0);
  CHECK(without.total.item() == without.l_cls.item());
  CHECK(without.l_cls.item() == with.l_cls.item());
  CHECK(with.instance_correct.size() == [&] {
    std::size_t n = 0;
    for (const auto& in : batch.inputs) n += in.instances.size();
    return n;
  }());
}
