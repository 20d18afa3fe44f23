#include "oclip/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "oclip/error.hpp"
#include "oclip/log.hpp"
#include "oclip/model.hpp"
#include "oclip/objectives.hpp"
#include "oclip/rng.hpp"

namespace oclip {

using nlohmann::json;

namespace {

constexpr std::uint64_t kStreamInit = 1;
constexpr std::uint64_t kStreamMask = 2;
constexpr std::uint64_t kStreamOrder = 3;
constexpr std::uint64_t kStreamSubset = 4;

}  // namespace

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr_init, double lr_min) {
  require(total_steps > 0, ErrorKind::kContract, "cosine_lr: total_steps must be positive");
  require(step <= total_steps, ErrorKind::kContract, "cosine_lr: step beyond total_steps");
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

OptimState OptimState::for_params(const ParamStore& params, double lr_init, double weight_decay) {
  OptimState s;
  s.lr_init = lr_init;
  s.weight_decay = weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    s.m.emplace_back(params.at(i).numel(), 0.0);
    s.v.emplace_back(params.at(i).numel(), 0.0);
  }
  return s;
}

void adamw_step(ParamStore& params, std::span<const std::vector<double>> grads, OptimState& state,
                double lr) {
  require(grads.size() == params.size() && state.m.size() == params.size(), ErrorKind::kContract,
          "adamw_step: gradients/state do not match the parameter set");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(grads[i].size() == params.at(i).numel(), ErrorKind::kShape,
            "adamw_step: gradient size mismatch for " + params.names()[i]);
    for (double g : grads[i]) {
      require(std::isfinite(g), ErrorKind::kDivergence,
              "non-finite gradient in parameter " + params.names()[i]);
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto theta = params.at(i).data();
    std::vector<double> next(theta.begin(), theta.end());
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    const bool decay = is_decayed(params.names()[i]);
    for (std::size_t j = 0; j < next.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      if (decay) next[j] -= lr * state.weight_decay * next[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      next[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    params.set_at(i, Tensor(params.at(i).shape(), std::move(next)));
  }
}

Checkpoint Checkpoint::fresh(const ModelConfig& config, const TrainHyper& hyper) {
  Checkpoint c;
  c.config = config;
  c.hyper = hyper;
  c.params = init_params(config, derive_seed(hyper.seed, kStreamInit));
  c.optim = OptimState::for_params(c.params, hyper.lr, hyper.weight_decay);
  c.step = 0;
  c.rng_state = derive_seed(hyper.seed, kStreamMask);
  return c;
}

// ---- checkpoint format ---------------------------------------------------

namespace {

json config_to_json(const ModelConfig& c) { return json::parse(c.to_json()); }

ModelConfig config_from_json(const json& j) { return ModelConfig::from_json(j.dump()); }

json hyper_to_json(const TrainHyper& h) {
  return {{"batch", h.batch},         {"steps", h.steps},     {"fraction", h.fraction},
          {"seed", h.seed},           {"lr", h.lr},           {"lr_min", h.lr_min},
          {"weight_decay", h.weight_decay}, {"contrastive", h.contrastive},
          {"use_decoder", h.use_decoder}};
}

TrainHyper hyper_from_json(const json& j) {
  TrainHyper h;
  h.batch = j.at("batch").get<std::size_t>();
  h.steps = j.at("steps").get<std::uint64_t>();
  h.fraction = j.at("fraction").get<double>();
  h.seed = j.at("seed").get<std::uint64_t>();
  h.lr = j.at("lr").get<double>();
  h.lr_min = j.at("lr_min").get<double>();
  h.weight_decay = j.at("weight_decay").get<double>();
  h.contrastive = j.at("contrastive").get<bool>();
  h.use_decoder = j.at("use_decoder").get<bool>();
  return h;
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

double get_f64(const std::uint8_t* p) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[b]) << (8 * b);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  json tensors = json::array();
  std::size_t offset = 0;
  std::vector<const std::vector<double>*> arrays;
  std::vector<std::vector<double>> param_copies;
  param_copies.reserve(ckpt.params.size());
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const Tensor& t = ckpt.params.at(i);
    param_copies.emplace_back(t.data().begin(), t.data().end());
  }
  const auto add_entry = [&](const std::string& name, const Shape& shape,
                             const std::vector<double>& values) {
    tensors.push_back({{"name", name}, {"shape", shape}, {"offset", offset}});
    offset += values.size();
    arrays.push_back(&values);
  };
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    add_entry(ckpt.params.names()[i], ckpt.params.at(i).shape(), param_copies[i]);
  }
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    add_entry("adam.m/" + ckpt.params.names()[i], ckpt.params.at(i).shape(), ckpt.optim.m.at(i));
  }
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    add_entry("adam.v/" + ckpt.params.names()[i], ckpt.params.at(i).shape(), ckpt.optim.v.at(i));
  }
  json header;
  header["config"] = config_to_json(ckpt.config);
  header["train"] = hyper_to_json(ckpt.hyper);
  header["optim"] = {{"beta1", ckpt.optim.beta1},
                     {"beta2", ckpt.optim.beta2},
                     {"eps", ckpt.optim.eps},
                     {"weight_decay", ckpt.optim.weight_decay},
                     {"lr_init", ckpt.optim.lr_init},
                     {"t", ckpt.optim.t}};
  header["step"] = ckpt.step;
  header["rng_state"] = ckpt.rng_state;
  header["tensors"] = std::move(tensors);
  header["values"] = offset;

  std::vector<std::uint8_t> out = {'O', 'C', 'L', 'P'};
  out.push_back(static_cast<std::uint8_t>(Checkpoint::kVersion & 0xff));
  out.push_back(static_cast<std::uint8_t>(Checkpoint::kVersion >> 8));
  const std::string text = header.dump();
  out.insert(out.end(), text.begin(), text.end());
  out.push_back('\n');
  out.reserve(out.size() + offset * 8);
  for (const auto* a : arrays)
    for (double v : *a) put_f64(out, v);
  return out;
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 6, ErrorKind::kTruncated, "checkpoint shorter than its preamble");
  require(bytes[0] == 'O' && bytes[1] == 'C' && bytes[2] == 'L' && bytes[3] == 'P',
          ErrorKind::kFormat, "not a checkpoint (bad magic bytes)");
  const auto version = static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
  require(version == Checkpoint::kVersion, ErrorKind::kVersion,
          "checkpoint version " + std::to_string(version) + " is not supported (expected " +
              std::to_string(Checkpoint::kVersion) + ")");
  const auto nl = std::find(bytes.begin() + 6, bytes.end(), std::uint8_t{'\n'});
  require(nl != bytes.end(), ErrorKind::kTruncated, "checkpoint header is not terminated");
  const std::string text(bytes.begin() + 6, nl);
  const json header = json::parse(text, nullptr, false);
  require(!header.is_discarded(), ErrorKind::kFormat, "checkpoint header is not valid JSON");

  Checkpoint ckpt;
  std::size_t total = 0;
  std::vector<std::tuple<std::string, Shape, std::size_t>> entries;
  try {
    ckpt.config = config_from_json(header.at("config"));
    ckpt.hyper = hyper_from_json(header.at("train"));
    const auto& o = header.at("optim");
    ckpt.optim.beta1 = o.at("beta1").get<double>();
    ckpt.optim.beta2 = o.at("beta2").get<double>();
    ckpt.optim.eps = o.at("eps").get<double>();
    ckpt.optim.weight_decay = o.at("weight_decay").get<double>();
    ckpt.optim.lr_init = o.at("lr_init").get<double>();
    ckpt.optim.t = o.at("t").get<std::uint64_t>();
    ckpt.step = header.at("step").get<std::uint64_t>();
    ckpt.rng_state = header.at("rng_state").get<std::uint64_t>();
    total = header.at("values").get<std::size_t>();
    for (const auto& t : header.at("tensors")) {
      entries.emplace_back(t.at("name").get<std::string>(), t.at("shape").get<Shape>(),
                           t.at("offset").get<std::size_t>());
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, std::string("checkpoint header incomplete: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, std::string("checkpoint config invalid: ") + e.what());
  }

  const std::size_t data_start = static_cast<std::size_t>(nl - bytes.begin()) + 1;
  require(bytes.size() - data_start >= total * 8, ErrorKind::kTruncated,
          "checkpoint data section holds " + std::to_string((bytes.size() - data_start) / 8) +
              " of " + std::to_string(total) + " values");
  require(bytes.size() - data_start == total * 8, ErrorKind::kFormat,
          "trailing bytes after checkpoint data");
  const auto read_values = [&](std::size_t offset, std::size_t n) {
    require(offset + n <= total, ErrorKind::kFormat, "tensor extends past the data section");
    std::vector<double> v(n);
    const std::uint8_t* p = bytes.data() + data_start + offset * 8;
    for (std::size_t i = 0; i < n; ++i) v[i] = get_f64(p + 8 * i);
    return v;
  };

  // Layout must match what the config would build, name by name.
  const ParamStore reference = init_params(ckpt.config, 0);
  const std::size_t np = reference.size();
  require(entries.size() == 3 * np, ErrorKind::kShape,
          "checkpoint holds " + std::to_string(entries.size()) + " tensors, config implies " +
              std::to_string(3 * np));
  ckpt.optim.m.resize(np);
  ckpt.optim.v.resize(np);
  for (std::size_t i = 0; i < np; ++i) {
    const std::string& name = reference.names()[i];
    const Shape& shape = reference.at(i).shape();
    for (std::size_t part = 0; part < 3; ++part) {
      const auto& [ename, eshape, eoffset] = entries[part * np + i];
      const std::string expected = part == 0 ? name : (part == 1 ? "adam.m/" : "adam.v/") + name;
      require(ename == expected && eshape == shape, ErrorKind::kShape,
              "checkpoint tensor " + ename + " " + shape_str(eshape) + " does not match config (" +
                  expected + " " + shape_str(shape) + ")");
      auto values = read_values(eoffset, numel(shape));
      if (part == 0) {
        ckpt.params.add(name, Tensor(shape, std::move(values)));
      } else if (part == 1) {
        ckpt.optim.m[i] = std::move(values);
      } else {
        ckpt.optim.v[i] = std::move(values);
      }
    }
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::kIo, "cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    require(out.good(), ErrorKind::kIo, "failed writing " + tmp);
  }
  require(std::rename(tmp.c_str(), path.c_str()) == 0, ErrorKind::kIo,
          "cannot move checkpoint into place at " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kIo, "cannot open checkpoint " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

std::string metric_line(const MetricRow& row) {
  json j;
  j["step"] = row.step;
  j["l_cls"] = row.l_cls;
  j["l_bc"] = row.l_bc;
  j["total"] = row.total;
  j["acc"] = row.acc;
  j["lr"] = row.lr;
  return j.dump();
}

// ---- training loop -------------------------------------------------------

std::vector<Sample> annotated_view(std::span<const Sample> corpus, const TrainHyper& hyper) {
  const std::uint64_t base = derive_seed(hyper.seed, kStreamSubset);
  std::vector<Sample> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    SplitMix64 rng(derive_seed(base, i));
    out.push_back(subset_annotations(corpus[i], hyper.fraction, rng));
  }
  return out;
}

std::vector<std::size_t> batch_indices(std::size_t corpus_size, const TrainHyper& hyper,
                                       std::uint64_t step) {
  require(corpus_size > 0 && hyper.batch > 0, ErrorKind::kContract,
          "batch_indices: empty corpus or batch");
  const std::size_t b = std::min(hyper.batch, corpus_size);
  const std::size_t per_epoch = corpus_size / b;
  const std::uint64_t epoch = step / per_epoch;
  const std::size_t slot = static_cast<std::size_t>(step % per_epoch);
  std::vector<std::size_t> perm(corpus_size);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  SplitMix64 rng(derive_seed(derive_seed(hyper.seed, kStreamOrder), epoch));
  for (std::size_t i = corpus_size; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  return {perm.begin() + static_cast<std::ptrdiff_t>(slot * b),
          perm.begin() + static_cast<std::ptrdiff_t>((slot + 1) * b)};
}

TrainResult train(std::span<const Sample> corpus, Checkpoint start, const TrainOptions& options) {
  const TrainHyper& hyper = start.hyper;
  require(!corpus.empty(), ErrorKind::kContract, "train: empty corpus");
  require(hyper.batch > 0, ErrorKind::kUsage, "train: batch must be positive");
  require(hyper.steps > 0, ErrorKind::kUsage, "train: steps must be positive");
  require(hyper.fraction > 0.0 && hyper.fraction <= 1.0, ErrorKind::kUsage,
          "train: fraction must lie in (0, 1]");
  require(start.step <= hyper.steps, ErrorKind::kContract, "train: checkpoint is past the schedule");

  const ModelConfig config = start.config;
  const CharVocab vocab = config.vocab();
  for (const auto& s : corpus) {
    require(!s.instances.empty(), ErrorKind::kUsage,
            "corpus sample " + std::to_string(s.seed) + " has no text instances");
    require(s.size == config.image_size, ErrorKind::kUsage,
            "corpus image size " + std::to_string(s.size) + " does not match model image size " +
                std::to_string(config.image_size));
    for (const auto& tb : s.instances) {
      require(tb.text.size() <= config.k_max, ErrorKind::kUsage,
              "instance '" + tb.text + "' is longer than k_max");
      for (char ch : tb.text)
        require(vocab.contains(ch), ErrorKind::kUsage,
                "instance '" + tb.text + "' uses a symbol outside the model alphabet");
    }
  }
  const std::vector<Sample> view = annotated_view(corpus, hyper);
  const std::size_t temperature_index = [&] {
    const auto& names = start.params.names();
    return static_cast<std::size_t>(std::find(names.begin(), names.end(), "temperature") - names.begin());
  }();

  std::ofstream metrics;
  if (!options.metrics_path.empty()) {
    // On resume keep only the rows before the checkpoint; later ones came
    // from a run that did not reach its next checkpoint.
    std::vector<std::string> kept;
    if (start.step > 0) {
      std::ifstream old(options.metrics_path);
      std::string line;
      while (std::getline(old, line)) {
        const json j = json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.is_object() && j.contains("step") &&
            j["step"].is_number_unsigned() && j["step"].get<std::uint64_t>() < start.step) {
          kept.push_back(line);
        }
      }
    }
    metrics.open(options.metrics_path, std::ios::trunc);
    require(metrics.good(), ErrorKind::kIo, "cannot open metrics log " + options.metrics_path);
    for (const auto& line : kept) metrics << line << '\n';
  }

  TrainResult result;
  result.checkpoint = std::move(start);
  Checkpoint& ckpt = result.checkpoint;
  SplitMix64 rng(ckpt.rng_state);

  while (ckpt.step < hyper.steps) {
    const std::uint64_t step = ckpt.step;
    std::vector<Sample> picked;
    for (auto i : batch_indices(view.size(), hyper, step)) picked.push_back(view[i]);
    const Batch batch = make_batch(picked, 1.0, rng, vocab, config.k_max);

    MetricRow row;
    std::vector<std::vector<double>> grads;
    try {
      Tape tape;
      const ParamStore bound = ckpt.params.bind(tape);
      const auto outputs = forward(batch.inputs, bound, config, {hyper.use_decoder});
      const LossBreakdown losses = compute_losses(outputs, batch.inputs, bound.get("temperature"),
                                                  {hyper.contrastive});
      row.step = step;
      row.l_cls = losses.l_cls.item();
      row.l_bc = losses.l_bc.item();
      row.total = losses.total.item();
      row.acc = losses.accuracy();
      row.lr = cosine_lr(step, hyper.steps, ckpt.optim.lr_init, hyper.lr_min);
      const Gradients g = tape.backward(losses.total);
      grads.reserve(bound.size());
      for (std::size_t i = 0; i < bound.size(); ++i) grads.push_back(g.of(bound.at(i)));
      adamw_step(ckpt.params, grads, ckpt.optim, row.lr);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kDivergence && !options.checkpoint_path.empty()) {
        save_checkpoint(options.checkpoint_path, ckpt);
        log_error("diverged at step " + std::to_string(step) +
                  "; last good state written to " + options.checkpoint_path);
      }
      throw;
    }

    const double tau = std::clamp(ckpt.params.at(temperature_index).item(), kTemperatureMin,
                                  kTemperatureMax);
    ckpt.params.set_at(temperature_index, Tensor::scalar(tau));
    ckpt.step = step + 1;
    ckpt.rng_state = rng.state();

    result.metrics.push_back(row);
    if (metrics.is_open()) metrics << metric_line(row) << '\n' << std::flush;
    if (options.on_step) options.on_step(row);
    log_debug(metric_line(row));
    if (!options.checkpoint_path.empty() && options.checkpoint_every > 0 &&
        ckpt.step % options.checkpoint_every == 0 && ckpt.step < hyper.steps) {
      save_checkpoint(options.checkpoint_path, ckpt);
    }
  }
  if (!options.checkpoint_path.empty()) save_checkpoint(options.checkpoint_path, ckpt);
  return result;
}

}  // namespace oclip
