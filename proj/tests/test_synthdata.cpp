#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "oclip/error.hpp"
#include "oclip/synthdata.hpp"

using namespace oclip;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "oclip_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

std::vector<ManifestRecord> random_manifest(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<ManifestRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    ManifestRecord r;
    r.image_id = "img" + std::to_string(rng.below(n / 4 + 1));
    r.text = std::string(1 + rng.below(6), static_cast<char>('A' + rng.below(26)));
    // Coarse grid so threshold ties are common.
    r.det_conf = static_cast<double>(rng.below(11)) / 10.0;
    r.rec_conf = static_cast<double>(rng.below(11)) / 10.0;
    out.push_back(r);
  }
  return out;
}

}  // namespace

TEST_CASE("builtin font covers the default alphabet") {
  const GlyphFont& f = GlyphFont::builtin();
  for (char c : CharVocab::kDefaultAlphabet) CHECK(f.has(c));
  CHECK_FALSE(f.has('a'));
  CHECK_THROWS_AS(f.glyph('a'), Error);
  CHECK_THROWS_AS(GlyphFont::parse("A\n#####\n"), Error);
  CHECK_THROWS_AS(GlyphFont::parse("A\n.....\n.....\n.....\n.....\n.....\n.....\n.....\n"), Error);
}

TEST_CASE("rendering is deterministic in the seed") {
  const GenConfig g;
  CHECK(render_sample(42, g) == render_sample(42, g));
  CHECK_FALSE(render_sample(42, g) == render_sample(43, g));
  CHECK(generate_corpus(7, 5, g)[3] == render_sample(7 ^ 3, g));
}

TEST_CASE("rendered samples satisfy the layout invariants") {
  GenConfig g;
  const auto corpus = generate_corpus(1, 200, g);
  const GlyphFont& font = GlyphFont::builtin();
  for (const auto& s : corpus) {
    REQUIRE(s.pixels.size() == g.image_size * g.image_size);
    CHECK(s.instances.size() >= 1);
    CHECK(s.instances.size() <= g.max_instances);
    for (std::size_t a = 0; a < s.instances.size(); ++a) {
      const auto& tb = s.instances[a];
      CHECK(tb.text.size() >= g.min_length);
      CHECK(tb.text.size() <= g.max_length);
      const Box& b = tb.box;
      CHECK(b.x0 >= 0);
      CHECK(b.y0 >= 0);
      CHECK(b.x1 <= static_cast<int>(g.image_size));
      CHECK(b.y1 <= static_cast<int>(g.image_size));
      const int scale = (b.y1 - b.y0) / static_cast<int>(kGlyphHeight);
      CHECK(b.y1 - b.y0 == scale * static_cast<int>(kGlyphHeight));
      CHECK(b.x1 - b.x0 == scale * static_cast<int>(tb.text.size() * kGlyphAdvance - 1));
      // The first glyph's top-left ink cell is drawn where the font says.
      const auto& bm = font.glyph(tb.text[0]);
      for (std::size_t r = 0; r < kGlyphHeight; ++r)
        for (std::size_t c = 0; c < kGlyphWidth; ++c)
          if (bm[r][c]) CHECK(s.pixels[(b.y0 + r * scale) * g.image_size + b.x0 + c * scale] == 255);
      for (std::size_t o = a + 1; o < s.instances.size(); ++o) {
        const Box& q = s.instances[o].box;
        const bool disjoint = b.x1 <= q.x0 || q.x1 <= b.x0 || b.y1 <= q.y0 || q.y1 <= b.y0;
        CHECK(disjoint);
      }
    }
    // Ink only inside boxes; noise stays below the ink level.
    for (std::size_t y = 0; y < g.image_size; ++y)
      for (std::size_t x = 0; x < g.image_size; ++x) {
        if (s.pixels[y * g.image_size + x] != 255) continue;
        bool inside = false;
        for (const auto& tb : s.instances) inside = inside || tb.box.contains(static_cast<int>(x), static_cast<int>(y));
        CHECK(inside);
      }
  }
}

TEST_CASE("noise-free empty canvas is constant") {
  GenConfig g;
  g.min_instances = g.max_instances = 0;
  g.noise_amplitude = 0.0;
  const Sample s = render_sample(9, g);
  CHECK(s.instances.empty());
  for (auto p : s.pixels) CHECK(p == 0);
}

TEST_CASE("generator config validation") {
  GenConfig g;
  g.max_length = 26;
  CHECK_THROWS_AS(g.validate(), Error);
  g = GenConfig{};
  g.alphabet = "AB!";
  CHECK_THROWS_AS(g.validate(), Error);
  g = GenConfig{};
  g.min_instances = 5;
  g.max_instances = 4;
  CHECK_THROWS_AS(g.validate(), Error);
}

TEST_CASE("mask_instance") {
  const CharVocab vocab;
  SplitMix64 rng(3);
  SUBCASE("single character is forced") {
    const auto e = mask_instance("A", rng, vocab, 25);
    CHECK(e.mask_pos == 0u);
    CHECK(e.mask_target == vocab.id('A'));
    CHECK(e.char_ids[0] == vocab.mask_id());
    CHECK(e.char_ids[1] == vocab.pad_id());
  }
  SUBCASE("full length instance") {
    const auto e = mask_instance(std::string(25, 'Q'), rng, vocab, 25);
    CHECK(e.valid_len == 25);
    std::size_t masks = 0;
    for (auto id : e.char_ids) masks += id == vocab.mask_id();
    CHECK(masks == 1);
  }
  SUBCASE("positions are uniform") {
    std::vector<std::size_t> hits(5, 0);
    for (int i = 0; i < 10000; ++i) ++hits[*mask_instance("ABCDE", rng, vocab, 25).mask_pos];
    for (auto h : hits) CHECK(std::abs(static_cast<double>(h) / 10000.0 - 0.2) <= 0.02);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(mask_instance("", rng, vocab, 25), Error);
    CHECK_THROWS_AS(mask_instance("ABCDEFGHI", rng, vocab, 8), Error);
  }
}

TEST_CASE("subset_annotations") {
  GenConfig g;
  g.min_instances = g.max_instances = 4;
  g.max_length = 4;
  const Sample s = render_sample(11, g);
  REQUIRE(s.instances.size() == 4);
  SplitMix64 rng(12);
  CHECK(subset_annotations(s, 1.0, rng) == s);
  for (int trial = 0; trial < 50; ++trial) {
    const Sample q = subset_annotations(s, 0.25, rng);
    CHECK(q.instances.size() == 1);
    CHECK(q.pixels == s.pixels);
    const Sample h = subset_annotations(s, 0.5, rng);
    REQUIRE(h.instances.size() == 2);
    // Kept instances stay in their original order.
    const auto pos = [&](const TextBox& tb) {
      return std::find(s.instances.begin(), s.instances.end(), tb) - s.instances.begin();
    };
    CHECK(pos(h.instances[0]) < pos(h.instances[1]));
  }
  CHECK(subset_annotations(s, 0.75, rng).instances.size() == 3);
  CHECK_THROWS_AS(subset_annotations(s, 0.0, rng), Error);
  CHECK_THROWS_AS(subset_annotations(s, 1.5, rng), Error);
}

TEST_CASE("filter_manifest matches a brute-force predicate filter") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto records = random_manifest(1000, seed);
    SplitMix64 rng(100 + seed);
    const double det = static_cast<double>(rng.below(11)) / 10.0;
    const double rec = static_cast<double>(rng.below(11)) / 10.0;
    std::vector<ManifestRecord> expected;
    std::set<std::string> all, kept_images;
    for (const auto& r : records) {
      all.insert(r.image_id);
      if (r.det_conf >= det && r.rec_conf >= rec) {
        expected.push_back(r);
        kept_images.insert(r.image_id);
      }
    }
    const auto got = filter_manifest(records, det, rec);
    CHECK(got.kept == expected);
    CHECK(got.dropped == records.size() - expected.size());
    CHECK(got.malformed == 0);
    CHECK(got.images_kept == kept_images.size());
    CHECK(got.images_dropped == all.size() - kept_images.size());
  }
}

TEST_CASE("filter_manifest boundaries") {
  const auto records = random_manifest(200, 9);
  CHECK(filter_manifest(records, 0.0, 0.0).kept == records);
  for (const auto& r : filter_manifest(records, 1.0, 1.0).kept) {
    CHECK(r.det_conf == 1.0);
    CHECK(r.rec_conf == 1.0);
  }
  const std::vector<ManifestRecord> six = {
      {"a", "HELLO", 0.9, 0.9}, {"a", "WORLD", 0.6, 0.69}, {"b", "X", 0.59, 0.99},
      {"c", "Y", 0.6, 0.7},     {"c", "Z", 1.0, 0.2},      {"d", "W", 0.1, 0.1}};
  const auto got = filter_manifest(six, 0.6, 0.7);
  REQUIRE(got.kept.size() == 2);
  CHECK(got.kept[0].text == "HELLO");
  CHECK(got.kept[1].text == "Y");
  CHECK(got.dropped == 4);
  CHECK(got.images_kept == 2);
  CHECK(got.images_dropped == 2);
  std::vector<ManifestRecord> bad = six;
  bad[0].det_conf = 1.5;
  CHECK(filter_manifest(bad, 0.6, 0.7).malformed == 1);
  CHECK_THROWS_AS(filter_manifest(six, -0.1, 0.5), Error);
}

TEST_CASE("manifest lines and file filtering") {
  const ManifestRecord r{"img7", "TEXT", 0.75, 0.5};
  CHECK(parse_manifest_line(manifest_line(r)) == r);
  CHECK_FALSE(parse_manifest_line("{\"image_id\":\"x\"}").has_value());
  CHECK_FALSE(parse_manifest_line("not json").has_value());
  CHECK_FALSE(parse_manifest_line("{\"image_id\":\"x\",\"text\":\"A\",\"det_conf\":2,\"rec_conf\":0.5}").has_value());

  const std::string in = temp_path("manifest_in.jsonl"), out = temp_path("manifest_out.jsonl");
  {
    std::ofstream f(in);
    f << manifest_line({"a", "KEEP", 0.9, 0.9}) << "\n"
      << "garbage\n"
      << manifest_line({"b", "DROP", 0.1, 0.9}) << "\n\n";
  }
  const auto res = filter_manifest_file(in, out, 0.5, 0.5);
  CHECK(res.kept.size() == 1);
  CHECK(res.dropped == 1);
  CHECK(res.malformed == 1);
  std::ifstream f(out);
  std::string line;
  std::getline(f, line);
  CHECK(parse_manifest_line(line) == ManifestRecord{"a", "KEEP", 0.9, 0.9});
  CHECK_FALSE(std::getline(f, line));
}

TEST_CASE("corpus line format round trip and digest") {
  const GenConfig g;
  const auto corpus = generate_corpus(5, 6, g);
  for (const auto& s : corpus) CHECK(parse_corpus_line(corpus_line(s)) == s);
  const std::string path = temp_path("corpus.jsonl");
  const auto digest = write_corpus(path, corpus);
  CHECK(read_corpus(path) == corpus);
  std::ifstream f(path, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CHECK(fnv1a64(bytes) == digest);
  CHECK(write_corpus(path, corpus) == digest);
  CHECK(write_corpus(path, std::span<const Sample>()) == 0xcbf29ce484222325ULL);
  CHECK(read_corpus(path).empty());
  CHECK_THROWS_AS(parse_corpus_line("{\"seed\":1}"), Error);
  CHECK_THROWS_AS(parse_corpus_line("{\"seed\":1,\"size\":2,\"image\":\"zz\",\"instances\":[]}"), Error);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64(std::string()) == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64(std::string("a")) == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64(std::string("foobar")) == 0x85944171f73967e8ULL);
}

TEST_CASE("make_batch pairs image a with text set a") {
  const GenConfig g;
  const auto corpus = generate_corpus(3, 4, g);
  SplitMix64 rng(4);
  const CharVocab vocab;
  const Batch b = make_batch(corpus, 1.0, rng, vocab, 25);
  REQUIRE(b.inputs.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(b.inputs[i].image.data()[0] == corpus[i].pixels[0] / 255.0);
    REQUIRE(b.inputs[i].instances.size() == corpus[i].instances.size());
    for (std::size_t k = 0; k < corpus[i].instances.size(); ++k) {
      const auto& e = b.inputs[i].instances[k];
      CHECK(e.valid_len == corpus[i].instances[k].text.size());
      CHECK(vocab.symbol(e.mask_target) == corpus[i].instances[k].text[*e.mask_pos]);
    }
  }
}
