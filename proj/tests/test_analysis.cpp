#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "helpers.hpp"
#include "oclip/analysis.hpp"
#include "oclip/error.hpp"

using namespace oclip;
using oclip::testing::bit_equal;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 2;
  c.k_max = 8;
  c.image_size = 32;
  c.patch_size = 8;
  c.ffn_mult = 2;
  return c;
}

GenConfig small_gen() {
  GenConfig g;
  g.image_size = 32;
  g.min_instances = 2;
  g.max_instances = 4;
  g.min_length = 1;
  g.max_length = 5;
  g.max_scale = 1;
  return g;
}

std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "oclip_tests" / name;
  std::filesystem::remove_all(dir);
  return dir.string();
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("attention maps are normalized and sized like the image") {
  const ModelConfig c = small_config();
  const ParamStore p = init_params(c, 1);
  const Sample s = render_sample(2, small_gen());
  const auto maps = attention_maps(p, c, s);
  REQUIRE(maps.size() == s.instances.size());
  for (const auto& m : maps) {
    CHECK(m.cells.size() == c.num_patches());
    CHECK(m.pixels.size() == c.image_size * c.image_size);
    double cs = 0.0, ps = 0.0;
    for (double v : m.cells) {
      CHECK(v >= 0.0);
      cs += v;
    }
    for (double v : m.pixels) ps += v;
    CHECK(std::abs(cs - 1.0) <= 1e-9);
    CHECK(std::abs(ps - 1.0) <= 1e-9);
    CHECK(m.mask_pos < m.text.size());
    CHECK(m.target == m.text[m.mask_pos]);
    CHECK(m.box_fraction() > 0.0);
    CHECK(m.mass_in_box() >= 0.0);
    CHECK(m.mass_in_box() <= 1.0 + 1e-12);
  }
  const auto last = attention_maps(p, c, s, c.n_dec_layers - 1);
  CHECK(bit_equal(last[0].cells, maps[0].cells));
  const auto first = attention_maps(p, c, s, 0, 1);
  CHECK_FALSE(bit_equal(first[0].cells, maps[0].cells));
  CHECK_THROWS_AS(attention_maps(p, c, s, c.n_dec_layers), Error);
  CHECK_THROWS_AS(attention_maps(p, c, s, std::nullopt, c.n_heads), Error);
}

TEST_CASE("an instance's map does not depend on the other instances") {
  const ModelConfig c = small_config();
  const ParamStore p = init_params(c, 3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Sample s = render_sample(seed, small_gen());
    const auto all = attention_maps(p, c, s);
    for (std::size_t i = 0; i < s.instances.size(); ++i) {
      Sample alone = s;
      alone.instances = {s.instances[i]};
      const auto one = attention_maps(p, c, alone);
      REQUIRE(one.size() == 1);
      CHECK(one[0].mask_pos == all[i].mask_pos);
      CHECK(one[0].predicted == all[i].predicted);
      CHECK(bit_equal(one[0].cells, all[i].cells));
    }
  }
}

TEST_CASE("graymap export") {
  const ModelConfig c = small_config();
  const ParamStore p = init_params(c, 4);
  const Sample s = render_sample(5, small_gen());
  const std::string dir = temp_dir("inspect");
  const auto maps = export_attention(p, c, s, dir);
  const std::string header = "P5\n32 32\n255\n";
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto bytes = read_bytes(dir + "/inst" + std::to_string(i) + ".pgm");
    REQUIRE(bytes.size() == header.size() + 32 * 32);
    CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())) == header);
    CHECK(std::filesystem::exists(dir + "/inst" + std::to_string(i) + ".txt"));
  }
  const std::string comp_header = "P5\n" + std::to_string(32 * (maps.size() + 1)) + " 32\n255\n";
  const auto comp = read_bytes(dir + "/composite.pgm");
  CHECK(comp.size() == comp_header.size() + 32 * 32 * (maps.size() + 1));
  CHECK(std::string(comp.begin(), comp.begin() + static_cast<long>(comp_header.size())) == comp_header);

  std::ifstream txt(dir + "/inst0.txt");
  std::string line;
  std::getline(txt, line);
  CHECK(line == "text: " + maps[0].text);
}

TEST_CASE("byte normalization") {
  const std::vector<double> v = {0.5, 1.0, 2.0};
  const auto b = normalize_to_bytes(v);
  CHECK(b[0] == 0);
  CHECK(b[1] == 85);
  CHECK(b[2] == 255);
  const std::vector<double> flat = {0.25, 0.25};
  CHECK(normalize_to_bytes(flat) == std::vector<std::uint8_t>{0, 0});
}

TEST_CASE("untrained retrieval is at chance") {
  const ModelConfig c = small_config();
  const ParamStore p = init_params(c, 6);
  const auto corpus = generate_corpus(7, 400, small_gen());
  const RetrievalReport r = evaluate_retrieval(p, c, corpus, 8);
  CHECK(r.batches == 50);
  CHECK(r.rows == 400);
  // 1/8 with a four-sigma binomial band over 400 rows.
  const double sigma = std::sqrt(0.125 * 0.875 / 400.0);
  CHECK(std::abs(r.i2t - 0.125) <= 4 * sigma);
  CHECK(std::abs(r.t2i - 0.125) <= 4 * sigma);
}

TEST_CASE("retrieval batching") {
  const ModelConfig c = small_config();
  const ParamStore p = init_params(c, 8);
  const auto corpus = generate_corpus(9, 10, small_gen());
  const RetrievalReport r = evaluate_retrieval(p, c, corpus, 4);
  CHECK(r.batches == 2);
  CHECK(r.rows == 8);
  CHECK(r.i2t >= 0.0);
  CHECK(r.i2t <= 1.0);
  const RetrievalReport small = evaluate_retrieval(p, c, std::span(corpus).first(3), 8);
  CHECK(small.batches == 1);
  CHECK(small.rows == 3);
  CHECK_THROWS_AS(evaluate_retrieval(p, c, corpus, 0), Error);
}

TEST_CASE("masked accuracy scores every character") {
  const ModelConfig c = small_config();
  const ParamStore p = init_params(c, 10);
  const auto corpus = generate_corpus(11, 5, small_gen());
  std::size_t chars = 0;
  for (const auto& s : corpus)
    for (const auto& tb : s.instances) chars += tb.text.size();
  const MaskedAccuracy a = masked_accuracy(p, c, corpus);
  CHECK(a.predictions == chars);
  CHECK(a.correct <= a.predictions);
  CHECK(masked_accuracy(p, c, corpus, false).predictions == chars);
}

TEST_CASE("gradient check covers every parameter group once") {
  const ModelConfig c = ModelConfig::tiny();
  const auto report = grad_check(c, 0, 1e-4);
  const ParamStore p = init_params(c, 0);
  REQUIRE(report.size() == p.size());
  std::set<std::string> names;
  for (std::size_t i = 0; i < report.size(); ++i) {
    INFO(report[i].name);
    CHECK(report[i].name == p.names()[i]);
    CHECK(report[i].values == p.at(i).numel());
    CHECK(report[i].pass);
    names.insert(report[i].name);
  }
  CHECK(names.size() == report.size());

  std::size_t failures = 0;
  for (const auto& g : grad_check(c, 0, 1e-15)) failures += !g.pass;
  CHECK(failures > 0);
}
