#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fsdag/errors.hpp"
#include "fsdag/synthgen.hpp"

using namespace fsdag;
namespace fs = std::filesystem;

namespace {

TemplateSpec two_field_spec() {
  TemplateSpec s;
  s.id = "pair";
  s.width = 120;
  s.height = 60;
  s.jitter = 3;
  s.fields = {{"a", 10, 10, {"alpha", "beta"}}, {"b", 10, 35, {"gamma"}}};
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double mean_box_intensity(const Document& d, const BBox& b) {
  double sum = 0;
  std::size_t n = 0;
  for (auto y = static_cast<std::size_t>(std::ceil(b.y0)); y + 1 <= static_cast<std::size_t>(b.y1); ++y)
    for (auto x = static_cast<std::size_t>(std::ceil(b.x0)); x + 1 <= static_cast<std::size_t>(b.x1); ++x) {
      sum += d.raster->at(y, x);
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace

TEST_CASE("two classes without distractors give two labeled regions") {
  const auto docs = generate(two_field_spec(), 1, 5);
  REQUIRE(docs.size() == 1);
  const auto& d = docs[0];
  CHECK(d.size() == 2);
  std::set<std::size_t> labels;
  for (const auto& r : d.regions) labels.insert(*r.label);
  CHECK(labels == std::set<std::size_t>{1, 2});
}

TEST_CASE("generation is deterministic down to the bytes on disk") {
  const auto spec = builtin_template("basic8");
  const auto a = generate(spec, 4, 77), b = generate(spec, 4, 77);
  CHECK(a == b);
  CHECK_FALSE(a == generate(spec, 4, 78));

  const auto da = fs::temp_directory_path() / "fsdag_test_corpus_a";
  const auto db = fs::temp_directory_path() / "fsdag_test_corpus_b";
  fs::remove_all(da);
  fs::remove_all(db);
  CorpusManifest m{77, spec.id, 2, 2, {}};
  write_corpus(da, a, m);
  write_corpus(db, b, m);
  for (const auto& entry : fs::directory_iterator(da))
    CHECK(slurp(entry.path()) == slurp(db / entry.path().filename()));

  const auto corpus = read_corpus(da);
  CHECK(corpus.documents == a);
  CHECK(corpus.manifest.seed == 77);
  CHECK(corpus.manifest.template_id == spec.id);
}

TEST_CASE("basic8 layout: every field lands within anchor plus jitter") {
  const auto spec = builtin_template("basic8");
  CHECK(spec.n_classes() == 8);
  CHECK(spec.distractor_count == 6);
  const auto docs = generate(spec, 100, 2024);
  for (const auto& d : docs) {
    CHECK(d.size() == spec.n_classes() + spec.distractor_count);
    std::map<std::size_t, int> count;
    for (const auto& r : d.regions) {
      ++count[*r.label];
      if (*r.label == 0) continue;
      const auto& f = spec.fields[*r.label - 1];
      CHECK(r.bbox.x0 >= f.anchor_x - spec.jitter);
      CHECK(r.bbox.x0 <= f.anchor_x + spec.jitter);
      CHECK(r.bbox.y0 >= f.anchor_y - spec.jitter);
      CHECK(r.bbox.y0 <= f.anchor_y + spec.jitter);
      CHECK(std::find(f.vocabulary.begin(), f.vocabulary.end(), r.text) != f.vocabulary.end());
    }
    for (std::size_t c = 1; c <= spec.n_classes(); ++c) CHECK(count[c] == 1);
    CHECK(count[0] == static_cast<int>(spec.distractor_count));
  }
}

TEST_CASE("key classes have distinguishable raster intensity") {
  const auto spec = builtin_template("basic8");
  const auto docs = generate(spec, 20, 8);
  std::map<std::size_t, std::pair<double, int>> acc;
  for (const auto& d : docs)
    for (const auto& r : d.regions) {
      auto& [sum, n] = acc[*r.label];
      sum += mean_box_intensity(d, r.bbox);
      ++n;
    }
  for (std::size_t c = 1; c <= spec.n_classes(); ++c)
    for (std::size_t e = c + 1; e <= spec.n_classes(); ++e) {
      const double mc = acc[c].first / acc[c].second, me = acc[e].first / acc[e].second;
      CHECK(std::abs(mc - me) >= 0.05);
    }
  CHECK(class_intensity(3) == doctest::Approx(0.2 + 0.6 * 3 / 8));
}

TEST_CASE("template validation") {
  auto s = two_field_spec();
  s.fields[1].anchor_y = 12;
  CHECK_THROWS_AS(generate(s, 1, 1), GenerationError);
  s = two_field_spec();
  s.fields[0].anchor_x = 500;
  CHECK_THROWS_AS(generate(s, 1, 1), GenerationError);
  s = two_field_spec();
  s.fields[0].vocabulary.clear();
  CHECK_THROWS_AS(generate(s, 1, 1), GenerationError);
  CHECK_THROWS_AS(generate(two_field_spec(), 0, 1), ArgumentError);
  CHECK_THROWS(builtin_template("nope"));
}

TEST_CASE("templates round-trip through JSON") {
  const auto spec = builtin_template("basic8");
  const auto path = fs::temp_directory_path() / "fsdag_test_template.json";
  save_template(spec, path);
  const auto back = load_template(path);
  CHECK(generate(back, 3, 4) == generate(spec, 3, 4));
}

TEST_CASE("split") {
  const auto s = split(25, 5, 42);
  CHECK(s.train.size() == 5);
  CHECK(s.test.size() == 20);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  for (auto i : s.test) CHECK(all.insert(i).second);
  CHECK(all.size() == 25);
  CHECK(*all.rbegin() == 24);

  const auto again = split(25, 5, 42);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);

  CHECK_THROWS_AS(split(5, 5, 1), ArgumentError);
  CHECK_THROWS_AS(split(3, 7, 1), ArgumentError);
}
