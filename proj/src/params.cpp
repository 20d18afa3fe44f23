#include "oclip/params.hpp"

#include <cmath>

#include "oclip/error.hpp"
#include "oclip/rng.hpp"

namespace oclip {

void ParamStore::add(const std::string& name, Tensor value) {
  require(!contains(name), ErrorKind::kContract, "duplicate parameter " + name);
  index_.emplace(name, names_.size());
  names_.push_back(name);
  values_.push_back(std::move(value));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorKind::kIndex, "unknown parameter " + name);
  return values_[it->second];
}

void ParamStore::set(const std::string& name, Tensor value) {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorKind::kIndex, "unknown parameter " + name);
  set_at(it->second, std::move(value));
}

void ParamStore::set_at(std::size_t i, Tensor value) {
  require(value.shape() == values_.at(i).shape(), ErrorKind::kShape,
          names_[i] + ": expected " + shape_str(values_[i].shape()) + ", got " +
              shape_str(value.shape()));
  values_[i] = std::move(value);
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

ParamStore ParamStore::bind(Tape& tape) const {
  ParamStore out;
  out.names_ = names_;
  out.index_ = index_;
  out.values_.reserve(values_.size());
  for (const auto& v : values_) out.values_.push_back(tape.variable(v));
  return out;
}

bool is_decayed(const std::string& name) {
  const auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() &&
           name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return !(ends_with(".gain") || ends_with(".bias") || name == "temperature");
}

namespace {

class Initializer {
 public:
  Initializer(ParamStore& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  void linear(const std::string& prefix, std::size_t in, std::size_t out, bool bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(in * out);
    for (auto& v : w) v = rng_.uniform(-bound, bound);
    store_.add(prefix + ".weight", Tensor({in, out}, std::move(w)));
    if (bias) store_.add(prefix + ".bias", Tensor::zeros({out}));
  }

  void table(const std::string& name, std::size_t rows, std::size_t d) {
    std::vector<double> w(rows * d);
    for (auto& v : w) v = rng_.normal(0.0, 0.02);
    store_.add(name, Tensor({rows, d}, std::move(w)));
  }

  void norm(const std::string& prefix, std::size_t d) {
    store_.add(prefix + ".gain", Tensor::full({d}, 1.0));
    store_.add(prefix + ".bias", Tensor::zeros({d}));
  }

  // Keys carry no bias: it would shift every score in a row equally and so
  // never receive a gradient through the softmax.
  void attention(const std::string& prefix, std::size_t d) {
    linear(prefix + ".q", d, d);
    linear(prefix + ".k", d, d, false);
    linear(prefix + ".v", d, d);
    linear(prefix + ".o", d, d);
  }

  void ffn(const std::string& prefix, std::size_t d, std::size_t hidden) {
    linear(prefix + ".fc1", d, hidden);
    linear(prefix + ".fc2", hidden, d);
  }

  void block(const std::string& prefix, std::size_t d, std::size_t hidden) {
    norm(prefix + ".ln1", d);
    attention(prefix + ".attn", d);
    norm(prefix + ".ln2", d);
    ffn(prefix + ".ffn", d, hidden);
  }

 private:
  ParamStore& store_;
  SplitMix64 rng_;
};

}  // namespace

ParamStore init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ParamStore store;
  Initializer init(store, seed);
  const std::size_t d = config.d_model;
  const std::size_t hidden = d * config.ffn_mult;

  init.linear("image.patch", config.patch_dim(), d);
  init.table("image.pos.table", config.num_patches(), d);
  init.block("image.block", d, hidden);
  init.norm("image.ln_out", d);

  init.table("text.char.table", config.vocab_size(), d);
  init.table("text.pos.table", config.k_max, d);
  for (std::size_t l = 0; l < config.n_enc_layers; ++l) {
    init.block("text.layer" + std::to_string(l), d, hidden);
  }
  init.norm("text.ln_out", d);

  for (std::size_t l = 0; l < config.n_dec_layers; ++l) {
    const std::string p = "decoder.layer" + std::to_string(l);
    init.norm(p + ".ln_q", d);
    init.attention(p + ".cross", d);
    init.norm(p + ".ln_ffn", d);
    init.ffn(p + ".ffn", d, hidden);
  }
  init.norm("decoder.ln_out", d);

  init.linear("head", d, config.vocab_size());
  store.add("temperature", Tensor::scalar(config.temperature_init));
  return store;
}

}  // namespace oclip
