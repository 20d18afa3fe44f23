#include "oclip/oclip.h"

#include <exception>
#include <memory>
#include <new>
#include <optional>
#include <string>
#include <vector>

#include "oclip/analysis.hpp"
#include "oclip/error.hpp"
#include "oclip/synthdata.hpp"
#include "oclip/trainer.hpp"

struct oclip_corpus {
  std::vector<oclip::Sample> samples;
};

struct oclip_model {
  oclip::Checkpoint checkpoint;
};

namespace {

thread_local std::string g_last_error;

oclip_status to_status(oclip::ErrorKind kind) {
  return static_cast<oclip_status>(static_cast<int>(kind) + 1);
}

template <typename F>
oclip_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return OCLIP_OK;
  } catch (const oclip::Error& e) {
    g_last_error = e.what();
    return to_status(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return OCLIP_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return OCLIP_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  oclip::require(p != nullptr, oclip::ErrorKind::kUsage, std::string(what) + " must not be null");
}

oclip::ModelConfig parse_config(const char* text, const char* fallback) {
  const std::string s = text ? text : fallback;
  if (s == "default") return oclip::ModelConfig{};
  if (s == "tiny") return oclip::ModelConfig::tiny();
  oclip::require(!s.empty() && s.front() == '{', oclip::ErrorKind::kUsage,
                 "config must be 'default', 'tiny' or a JSON object");
  return oclip::ModelConfig::from_json(s);
}

oclip::TrainOptions train_options(const oclip_train_options* o, oclip_metric_fn fn, void* user) {
  oclip::TrainOptions t;
  if (o) {
    t.checkpoint_every = o->checkpoint_every;
    if (o->checkpoint_path) t.checkpoint_path = o->checkpoint_path;
    if (o->metrics_path) t.metrics_path = o->metrics_path;
  }
  if (fn) {
    t.on_step = [fn, user](const oclip::MetricRow& r) {
      const oclip_metric m{r.step, r.l_cls, r.l_bc, r.total, r.acc, r.lr};
      fn(&m, user);
    };
  }
  return t;
}

}  // namespace

extern "C" {

const char* oclip_version(void) { return "0.1.0"; }

const char* oclip_status_name(oclip_status status) {
  if (status == OCLIP_OK) return "ok";
  if (status == OCLIP_ERR_INTERNAL) return "internal";
  if (status < OCLIP_OK || status > OCLIP_ERR_INTERNAL) return "unknown";
  return oclip::to_string(static_cast<oclip::ErrorKind>(static_cast<int>(status) - 1));
}

const char* oclip_last_error(void) { return g_last_error.c_str(); }

void oclip_gen_options_default(oclip_gen_options* options) {
  if (!options) return;
  const oclip::GenConfig g;
  *options = oclip_gen_options{0,           64,           g.image_size,      g.min_instances,
                               g.max_instances, g.min_length, g.max_length, g.max_scale,
                               g.noise_amplitude, nullptr};
}

oclip_status oclip_corpus_generate(const oclip_gen_options* options, oclip_corpus** out) {
  return guarded([&] {
    need(options, "options");
    need(out, "out");
    oclip::GenConfig g;
    g.image_size = options->image_size;
    g.min_instances = options->min_instances;
    g.max_instances = options->max_instances;
    g.min_length = options->min_length;
    g.max_length = options->max_length;
    g.max_scale = options->max_scale;
    g.noise_amplitude = options->noise_amplitude;
    if (options->alphabet) g.alphabet = options->alphabet;
    auto c = std::make_unique<oclip_corpus>();
    c->samples = oclip::generate_corpus(options->seed, options->count, g);
    *out = c.release();
  });
}

oclip_status oclip_corpus_load(const char* path, oclip_corpus** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto c = std::make_unique<oclip_corpus>();
    c->samples = oclip::read_corpus(path);
    *out = c.release();
  });
}

oclip_status oclip_corpus_save(const oclip_corpus* corpus, const char* path, uint64_t* digest) {
  return guarded([&] {
    need(corpus, "corpus");
    need(path, "path");
    const std::uint64_t d = oclip::write_corpus(path, corpus->samples);
    if (digest) *digest = d;
  });
}

size_t oclip_corpus_size(const oclip_corpus* corpus) { return corpus ? corpus->samples.size() : 0; }

size_t oclip_corpus_instances(const oclip_corpus* corpus) {
  if (!corpus) return 0;
  size_t n = 0;
  for (const auto& s : corpus->samples) n += s.instances.size();
  return n;
}

void oclip_corpus_free(oclip_corpus* corpus) { delete corpus; }

void oclip_train_options_default(oclip_train_options* options) {
  if (!options) return;
  const oclip::TrainHyper h;
  *options = oclip_train_options{nullptr, h.batch, h.steps, h.fraction, h.seed, h.lr,
                                 h.weight_decay, h.contrastive ? 1 : 0, h.use_decoder ? 1 : 0,
                                 0, nullptr, nullptr};
}

oclip_status oclip_pretrain(const oclip_corpus* corpus, const oclip_train_options* options,
                            oclip_metric_fn on_step, void* user, oclip_model** out) {
  return guarded([&] {
    need(corpus, "corpus");
    need(options, "options");
    need(out, "out");
    oclip::require(!corpus->samples.empty(), oclip::ErrorKind::kUsage, "corpus is empty");
    oclip::ModelConfig config = parse_config(options->config, "default");
    config.image_size = corpus->samples.front().size;
    config.validate();
    oclip::TrainHyper h;
    h.batch = options->batch;
    h.steps = options->steps;
    h.fraction = options->fraction;
    h.seed = options->seed;
    h.lr = options->lr;
    h.weight_decay = options->weight_decay;
    h.contrastive = options->contrastive != 0;
    h.use_decoder = options->use_decoder != 0;
    oclip::require(h.fraction > 0.0 && h.fraction <= 1.0, oclip::ErrorKind::kUsage,
                   "fraction must lie in (0, 1]");
    oclip::require(h.lr >= 0.0 && h.weight_decay >= 0.0, oclip::ErrorKind::kUsage,
                   "lr and weight decay must be non-negative");
    auto result = oclip::train(corpus->samples, oclip::Checkpoint::fresh(config, h),
                               train_options(options, on_step, user));
    *out = new oclip_model{std::move(result.checkpoint)};
  });
}

oclip_status oclip_resume(const oclip_corpus* corpus, const oclip_model* model,
                          const oclip_train_options* options, oclip_metric_fn on_step, void* user,
                          oclip_model** out) {
  return guarded([&] {
    need(corpus, "corpus");
    need(model, "model");
    need(out, "out");
    auto result = oclip::train(corpus->samples, model->checkpoint,
                               train_options(options, on_step, user));
    *out = new oclip_model{std::move(result.checkpoint)};
  });
}

oclip_status oclip_model_load(const char* path, oclip_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new oclip_model{oclip::load_checkpoint(path)};
  });
}

oclip_status oclip_model_save(const oclip_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    oclip::save_checkpoint(path, model->checkpoint);
  });
}

uint64_t oclip_model_step(const oclip_model* model) { return model ? model->checkpoint.step : 0; }

uint64_t oclip_model_total_steps(const oclip_model* model) {
  return model ? model->checkpoint.hyper.steps : 0;
}

void oclip_model_free(oclip_model* model) { delete model; }

oclip_status oclip_eval_retrieval(const oclip_model* model, const oclip_corpus* corpus,
                                  size_t batch, uint64_t seed, oclip_retrieval* out) {
  return guarded([&] {
    need(model, "model");
    need(corpus, "corpus");
    need(out, "out");
    const auto& c = model->checkpoint;
    const auto r = oclip::evaluate_retrieval(c.params, c.config, corpus->samples, batch, seed);
    *out = oclip_retrieval{r.batches, r.rows, r.i2t, r.t2i};
  });
}

oclip_status oclip_eval_masked(const oclip_model* model, const oclip_corpus* corpus,
                               oclip_masked_accuracy* out) {
  return guarded([&] {
    need(model, "model");
    need(corpus, "corpus");
    need(out, "out");
    const auto& c = model->checkpoint;
    const auto view = oclip::annotated_view(corpus->samples, c.hyper);
    const auto a = oclip::masked_accuracy(c.params, c.config, view, c.hyper.use_decoder);
    *out = oclip_masked_accuracy{a.predictions, a.correct, a.accuracy()};
  });
}

oclip_status oclip_eval_locality(const oclip_model* model, const oclip_corpus* corpus,
                                 oclip_locality* out) {
  return guarded([&] {
    need(model, "model");
    need(corpus, "corpus");
    need(out, "out");
    const auto& c = model->checkpoint;
    const auto r = oclip::attention_locality(c.params, c.config, corpus->samples);
    *out = oclip_locality{r.instances, r.mean_mass, r.mean_fraction, r.mean_ratio,
                          r.ratio_of_means()};
  });
}

oclip_status oclip_inspect_attention(const oclip_model* model, const oclip_corpus* corpus,
                                     size_t sample, long layer, long head, const char* out_dir,
                                     oclip_attention_fn on_instance, void* user) {
  return guarded([&] {
    need(model, "model");
    need(corpus, "corpus");
    need(out_dir, "out_dir");
    oclip::require(sample < corpus->samples.size(), oclip::ErrorKind::kIndex,
                   "sample " + std::to_string(sample) + " out of range (corpus holds " +
                       std::to_string(corpus->samples.size()) + ")");
    const auto& c = model->checkpoint;
    const std::optional<std::size_t> l =
        layer < 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(layer));
    const std::optional<std::size_t> h =
        head < 0 ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(head));
    const auto maps =
        oclip::export_attention(c.params, c.config, corpus->samples[sample], out_dir, l, h);
    if (!on_instance) return;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const auto& m = maps[i];
      double sum = 0.0;
      for (double v : m.cells) sum += v;
      const oclip_attention_info info{i,
                                      m.text.c_str(),
                                      m.mask_pos,
                                      m.predicted,
                                      m.target,
                                      {m.box.x0, m.box.y0, m.box.x1, m.box.y1},
                                      m.mass_in_box(),
                                      m.box_fraction(),
                                      sum};
      on_instance(&info, user);
    }
  });
}

oclip_status oclip_grad_check(const char* config, uint64_t seed, double tolerance,
                              oclip_grad_fn on_group, void* user, size_t* failures) {
  return guarded([&] {
    oclip::require(tolerance > 0.0, oclip::ErrorKind::kUsage, "tolerance must be positive");
    const auto report = oclip::grad_check(parse_config(config, "tiny"), seed, tolerance);
    std::size_t failed = 0;
    for (const auto& g : report) {
      if (!g.pass) ++failed;
      if (on_group) {
        const oclip_grad_group group{g.name.c_str(), g.values, g.max_rel_error, g.pass ? 1 : 0};
        on_group(&group, user);
      }
    }
    if (failures) *failures = failed;
  });
}

oclip_status oclip_filter_manifest(const char* in_path, const char* out_path, double det_threshold,
                                   double rec_threshold, oclip_filter_summary* out) {
  return guarded([&] {
    need(in_path, "in_path");
    need(out_path, "out_path");
    oclip::require(det_threshold >= 0.0 && det_threshold <= 1.0 && rec_threshold >= 0.0 &&
                       rec_threshold <= 1.0,
                   oclip::ErrorKind::kUsage, "thresholds must lie in [0, 1]");
    const auto r = oclip::filter_manifest_file(in_path, out_path, det_threshold, rec_threshold);
    if (out) {
      *out = oclip_filter_summary{r.kept.size(), r.dropped, r.malformed, r.images_kept,
                                  r.images_dropped};
    }
  });
}

}  // extern "C"
