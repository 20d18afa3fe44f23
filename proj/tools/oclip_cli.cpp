// oclip command-line tool. Data goes to files and stdout, diagnostics to stderr.
// Exit codes: 0 success, 1 failed postcondition or runtime error, 2 usage error.

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "oclip/oclip.h"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

int report(oclip_status status, const char* what) {
  if (status == OCLIP_OK) return 0;
  std::fprintf(stderr, "oclip: %s failed (%s): %s\n", what, oclip_status_name(status),
               oclip_last_error());
  return status == OCLIP_ERR_USAGE ? kExitUsage : kExitFailure;
}

// "default", "tiny", a JSON object, or a path to a file holding one.
std::string config_text(const std::string& arg) {
  if (arg == "default" || arg == "tiny" || (!arg.empty() && arg.front() == '{')) return arg;
  std::ifstream in(arg);
  if (!in) return arg;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct GenArgs {
  oclip_gen_options opt{};
  std::string out;
  std::string alphabet;
};

struct PretrainArgs {
  oclip_train_options opt{};
  std::string corpus, out, metrics, config = "default", resume;
  bool no_bcl = false, no_vtd = false, quiet = false;
};

struct GradArgs {
  std::string config = "tiny";
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
};

struct InspectArgs {
  std::string checkpoint, corpus, out_dir;
  std::size_t sample = 0;
  long layer = -1, head = -1;
};

struct RetrievalArgs {
  std::string checkpoint, corpus;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
  bool masked = false, locality = false;
};

struct FilterArgs {
  std::string in, out;
  double det = 0.5, rec = 0.5;
};

int run_gen(GenArgs& a) {
  if (!a.alphabet.empty()) a.opt.alphabet = a.alphabet.c_str();
  if (a.opt.min_instances > a.opt.max_instances) a.opt.min_instances = a.opt.max_instances;
  oclip_corpus* corpus = nullptr;
  if (int rc = report(oclip_corpus_generate(&a.opt, &corpus), "gen-data")) return rc;
  std::uint64_t digest = 0;
  const int rc = report(oclip_corpus_save(corpus, a.out.c_str(), &digest), "gen-data");
  if (rc == 0) {
    std::printf("samples %zu\ninstances %zu\ndigest %016" PRIx64 "\n", oclip_corpus_size(corpus),
                oclip_corpus_instances(corpus), digest);
  }
  oclip_corpus_free(corpus);
  return rc;
}

void print_metric(const oclip_metric* m, void* user) {
  if (*static_cast<bool*>(user)) return;
  if (m->step % 50 == 0) {
    std::fprintf(stderr, "step %" PRIu64 " l_cls %.4f l_bc %.4f total %.4f acc %.3f lr %.3g\n",
                 m->step, m->l_cls, m->l_bc, m->total, m->acc, m->lr);
  }
}

int run_pretrain(PretrainArgs& a) {
  oclip_corpus* corpus = nullptr;
  if (int rc = report(oclip_corpus_load(a.corpus.c_str(), &corpus), "loading corpus")) return rc;
  const std::string metrics = a.metrics.empty() ? a.out + ".metrics.jsonl" : a.metrics;
  a.opt.checkpoint_path = a.out.c_str();
  a.opt.metrics_path = metrics.c_str();
  a.opt.contrastive = a.no_bcl ? 0 : 1;
  a.opt.use_decoder = a.no_vtd ? 0 : 1;
  const std::string config = config_text(a.config);
  a.opt.config = config.c_str();

  oclip_model* model = nullptr;
  int rc = 0;
  if (a.resume.empty()) {
    rc = report(oclip_pretrain(corpus, &a.opt, print_metric, &a.quiet, &model), "pretrain");
  } else {
    oclip_model* start = nullptr;
    rc = report(oclip_model_load(a.resume.c_str(), &start), "loading checkpoint");
    if (rc == 0) rc = report(oclip_resume(corpus, start, &a.opt, print_metric, &a.quiet, &model), "pretrain");
    oclip_model_free(start);
  }
  if (rc == 0) {
    oclip_masked_accuracy acc{};
    rc = report(oclip_eval_masked(model, corpus, &acc), "masked accuracy");
    if (rc == 0) {
      std::printf("steps %" PRIu64 "\ncheckpoint %s\nmetrics %s\nmasked_accuracy %.6f (%zu/%zu)\n",
                  oclip_model_step(model), a.out.c_str(), metrics.c_str(), acc.accuracy,
                  acc.correct, acc.predictions);
    }
  }
  oclip_model_free(model);
  oclip_corpus_free(corpus);
  return rc;
}

void print_group(const oclip_grad_group* g, void*) {
  std::printf("%-34s %6zu  %.3e  %s\n", g->name, g->values, g->max_rel_error,
              g->pass ? "pass" : "FAIL");
}

int run_grad(const GradArgs& a) {
  const std::string config = config_text(a.config);
  std::size_t failures = 0;
  if (int rc = report(oclip_grad_check(config.c_str(), a.seed, a.tolerance, print_group, nullptr,
                                       &failures),
                      "grad-check")) {
    return rc;
  }
  std::printf("failures %zu\n", failures);
  return failures == 0 ? 0 : kExitFailure;
}

void print_attention(const oclip_attention_info* m, void*) {
  std::printf("inst%zu text %s mask_pos %zu target %c predicted %c box %d %d %d %d "
              "mass_in_box %.4f box_fraction %.4f grid_sum %.12f\n",
              m->index, m->text, m->mask_pos, m->target, m->predicted, m->box[0], m->box[1],
              m->box[2], m->box[3], m->mass_in_box, m->box_fraction, m->grid_sum);
}

int run_inspect(const InspectArgs& a) {
  oclip_model* model = nullptr;
  oclip_corpus* corpus = nullptr;
  int rc = report(oclip_model_load(a.checkpoint.c_str(), &model), "loading checkpoint");
  if (rc == 0) rc = report(oclip_corpus_load(a.corpus.c_str(), &corpus), "loading corpus");
  if (rc == 0) {
    rc = report(oclip_inspect_attention(model, corpus, a.sample, a.layer, a.head, a.out_dir.c_str(),
                                        print_attention, nullptr),
                "inspect-attn");
  }
  oclip_corpus_free(corpus);
  oclip_model_free(model);
  return rc;
}

int run_retrieval(const RetrievalArgs& a) {
  oclip_model* model = nullptr;
  oclip_corpus* corpus = nullptr;
  int rc = report(oclip_model_load(a.checkpoint.c_str(), &model), "loading checkpoint");
  if (rc == 0) rc = report(oclip_corpus_load(a.corpus.c_str(), &corpus), "loading corpus");
  oclip_retrieval r{};
  if (rc == 0) rc = report(oclip_eval_retrieval(model, corpus, a.batch, a.seed, &r), "eval-retrieval");
  if (rc == 0) {
    std::printf("batches %zu\nrows %zu\ni2t %.6f\nt2i %.6f\n", r.batches, r.rows, r.i2t, r.t2i);
  }
  if (rc == 0 && a.masked) {
    oclip_masked_accuracy m{};
    rc = report(oclip_eval_masked(model, corpus, &m), "masked accuracy");
    if (rc == 0) std::printf("masked_accuracy %.6f (%zu/%zu)\n", m.accuracy, m.correct, m.predictions);
  }
  if (rc == 0 && a.locality) {
    oclip_locality l{};
    rc = report(oclip_eval_locality(model, corpus, &l), "attention locality");
    if (rc == 0) {
      std::printf("locality_instances %zu\nmass_in_box %.6f\nbox_fraction %.6f\n"
                  "locality_ratio %.6f\n",
                  l.instances, l.mean_mass, l.mean_fraction, l.ratio_of_means);
    }
  }
  oclip_corpus_free(corpus);
  oclip_model_free(model);
  return rc;
}

int run_filter(const FilterArgs& a) {
  oclip_filter_summary s{};
  if (int rc = report(oclip_filter_manifest(a.in.c_str(), a.out.c_str(), a.det, a.rec, &s),
                      "filter-manifest")) {
    return rc;
  }
  std::printf("kept %zu\ndropped %zu\nmalformed %zu\nimages_kept %zu\nimages_dropped %zu\n",
              s.kept, s.dropped, s.malformed, s.images_kept, s.images_dropped);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised text-image pre-training at desk scale"};
  app.require_subcommand(1);
  app.set_version_flag("--version", oclip_version());

  GenArgs gen;
  oclip_gen_options_default(&gen.opt);
  auto* g = app.add_subcommand("gen-data", "Render a synthetic scene-text corpus");
  g->add_option("--seed", gen.opt.seed, "Corpus seed")->capture_default_str();
  g->add_option("--count", gen.opt.count, "Number of samples")->capture_default_str();
  g->add_option("--out", gen.out, "Output corpus file (JSON lines)")->required();
  g->add_option("--image-size", gen.opt.image_size, "Square image side in pixels")->capture_default_str();
  g->add_option("--instances", gen.opt.max_instances, "Maximum text instances per image")->capture_default_str();
  g->add_option("--min-instances", gen.opt.min_instances, "Minimum text instances per image")->capture_default_str();
  g->add_option("--min-length", gen.opt.min_length, "Minimum characters per instance")->capture_default_str();
  g->add_option("--max-length", gen.opt.max_length, "Maximum characters per instance")->capture_default_str();
  g->add_option("--max-scale", gen.opt.max_scale, "Maximum glyph scale")->capture_default_str();
  g->add_option("--noise", gen.opt.noise_amplitude, "Background noise amplitude")->capture_default_str();
  g->add_option("--alphabet", gen.alphabet, "Symbols to draw from (default A-Z0-9)");

  PretrainArgs pre;
  oclip_train_options_default(&pre.opt);
  auto* p = app.add_subcommand("pretrain", "Pre-train on a corpus and write a checkpoint");
  p->add_option("--corpus", pre.corpus, "Corpus file")->required();
  p->add_option("--out", pre.out, "Checkpoint path")->required();
  p->add_option("--steps", pre.opt.steps, "Optimizer steps")->capture_default_str();
  p->add_option("--batch", pre.opt.batch, "Images per batch")->capture_default_str();
  p->add_option("--fraction", pre.opt.fraction, "Fraction of instances annotated, in (0, 1]")->capture_default_str();
  p->add_flag("--no-bcl", pre.no_bcl, "Disable the batch-level contrastive loss");
  p->add_flag("--no-vtd", pre.no_vtd, "Bypass the visual-textual decoder");
  p->add_option("--seed", pre.opt.seed, "Training seed")->capture_default_str();
  p->add_option("--lr", pre.opt.lr, "Initial learning rate")->capture_default_str();
  p->add_option("--weight-decay", pre.opt.weight_decay, "Decoupled weight decay")->capture_default_str();
  p->add_option("--config", pre.config, "default, tiny, JSON, or a JSON file")->capture_default_str();
  p->add_option("--checkpoint-every", pre.opt.checkpoint_every, "Save every k steps (0: end only)");
  p->add_option("--metrics", pre.metrics, "Metrics log (default <out>.metrics.jsonl)");
  p->add_option("--resume", pre.resume, "Continue from this checkpoint");
  p->add_flag("--quiet", pre.quiet, "No progress lines");

  GradArgs grad;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every parameter group");
  gc->add_option("--config", grad.config, "tiny, default, JSON, or a JSON file")->capture_default_str();
  gc->add_option("--seed", grad.seed, "Seed")->capture_default_str();
  gc->add_option("--tolerance", grad.tolerance, "Max relative error")->capture_default_str();

  InspectArgs ins;
  auto* ia = app.add_subcommand("inspect-attn", "Write decoder attention heatmaps for one sample");
  ia->add_option("--checkpoint", ins.checkpoint, "Checkpoint file")->required();
  ia->add_option("--corpus", ins.corpus, "Corpus file")->required();
  ia->add_option("--sample", ins.sample, "Sample index")->capture_default_str();
  ia->add_option("--layer", ins.layer, "Decoder layer (default last)");
  ia->add_option("--head", ins.head, "Attention head (default mean over heads)");
  ia->add_option("--out-dir", ins.out_dir, "Output directory")->required();

  RetrievalArgs ret;
  auto* er = app.add_subcommand("eval-retrieval", "Top-1 image-text retrieval accuracy");
  er->add_option("--checkpoint", ret.checkpoint, "Checkpoint file")->required();
  er->add_option("--corpus", ret.corpus, "Corpus file")->required();
  er->add_option("--batch", ret.batch, "Images per retrieval batch")->capture_default_str();
  er->add_option("--seed", ret.seed, "Mask seed")->capture_default_str();
  er->add_flag("--masked", ret.masked, "Also report masked-character accuracy");
  er->add_flag("--locality", ret.locality, "Also report decoder attention locality");

  FilterArgs fil;
  auto* fm = app.add_subcommand("filter-manifest", "Drop low-confidence OCR records");
  fm->add_option("--in", fil.in, "Input manifest (JSON lines)")->required();
  fm->add_option("--out", fil.out, "Output manifest")->required();
  fm->add_option("--det-thresh", fil.det, "Minimum detection confidence")->capture_default_str();
  fm->add_option("--rec-thresh", fil.rec, "Minimum recognition confidence")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  if (*g) return run_gen(gen);
  if (*p) return run_pretrain(pre);
  if (*gc) return run_grad(grad);
  if (*ia) return run_inspect(ins);
  if (*er) return run_retrieval(ret);
  return run_filter(fil);
}
