#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fsdag/docmodel.hpp"
#include "fsdag/errors.hpp"
#include "fsdag/rng.hpp"
#include "fsdag/synthgen.hpp"

using namespace fsdag;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fsdag_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

Document two_word_doc() {
  Document d;
  d.width = 100;
  d.height = 50;
  d.labels.names = {"other", "key"};
  d.regions = {{0, "right", {60, 10, 90, 20}, 1}, {1, "left", {10, 10, 40, 20}, 0}};
  return d;
}

Document grid_doc(Rng& rng) {
  Document d;
  d.width = 300;
  d.height = 300;
  d.labels.names = {"other", "key"};
  const double h = 20;
  std::size_t id = 0;
  for (int row = 0; row < 3; ++row)
    for (int col = 0; col < 3; ++col) {
      const double dy = rng.uniform(-0.19 * h, 0.19 * h);
      const double y0 = 40 + 80 * row + dy, x0 = 20 + 90 * col;
      d.regions.push_back({id++, "w" + std::to_string(row) + std::to_string(col), {x0, y0, x0 + 60, y0 + h}, 0});
    }
  return d;
}

}  // namespace

TEST_CASE("load_document reads a minimal single-region file") {
  const auto dir = scratch_dir("minimal");
  write_text(dir / "doc.json",
             R"({"width": 20, "height": 10, "labels": ["other", "a"],
                 "regions": [{"id": 0, "text": "hi", "bbox": [1, 1, 5, 5]}]})");
  const auto doc = load_document(dir / "doc.json");
  CHECK(doc.size() == 1);
  CHECK(doc.regions[0].text == "hi");
  CHECK_FALSE(doc.regions[0].label.has_value());
  CHECK_FALSE(doc.raster.has_value());
}

TEST_CASE("load_document rejects inverted boxes and names the region") {
  const auto dir = scratch_dir("inverted");
  write_text(dir / "doc.json",
             R"({"width": 20, "height": 10, "labels": ["other", "a"],
                 "regions": [{"id": 0, "text": "bad", "bbox": [8, 1, 5, 5]}]})");
  try {
    load_document(dir / "doc.json");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("region 0") != std::string::npos);
  }
}

TEST_CASE("load_document reports malformed input as ParseError") {
  const auto dir = scratch_dir("malformed");
  write_text(dir / "broken.json", R"({"width": 20, "height": )");
  CHECK_THROWS_AS(load_document(dir / "broken.json"), ParseError);
  write_text(dir / "missing.json", R"({"width": 20, "labels": ["o", "a"], "regions": []})");
  try {
    load_document(dir / "missing.json");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("height") != std::string::npos);
  }
  CHECK_THROWS_AS(load_document(dir / "absent.json"), ParseError);
}

TEST_CASE("validation rules") {
  auto d = two_word_doc();
  SUBCASE("out of page") {
    d.regions[0].bbox.x1 = 101;
    CHECK_THROWS_AS(validate(d), ValidationError);
  }
  SUBCASE("blank text") {
    d.regions[1].text = "  ";
    CHECK_THROWS_AS(validate(d), ValidationError);
  }
  SUBCASE("label out of range") {
    d.regions[1].label = 2;
    CHECK_THROWS_AS(validate(d), ValidationError);
  }
  SUBCASE("ids must be dense") {
    d.regions[1].id = 3;
    CHECK_THROWS_AS(validate(d), ValidationError);
  }
  SUBCASE("label set too small") {
    d.labels.names = {"other"};
    d.regions[0].label = 0;
    CHECK_THROWS_AS(validate(d), ValidationError);
  }
  SUBCASE("duplicate class names") {
    d.labels.names = {"other", "other"};
    CHECK_THROWS_AS(validate(d), ValidationError);
  }
  SUBCASE("storage order is normalized") {
    std::swap(d.regions[0], d.regions[1]);
    validate(d);
    CHECK(d.regions[0].id == 0);
  }
}

TEST_CASE("generated documents round-trip through save and load") {
  const auto docs = generate(builtin_template("basic8"), 3, 11);
  const auto dir = scratch_dir("roundtrip");
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto path = dir / ("d" + std::to_string(i) + ".json");
    save_document(docs[i], path);
    CHECK(load_document(path) == docs[i]);
  }
}

TEST_CASE("reading_order basic cases") {
  Document one;
  one.width = one.height = 10;
  one.labels.names = {"other", "a"};
  one.regions = {{0, "x", {1, 1, 2, 2}, {}}};
  CHECK(reading_order(one) == ReadingSequence{0});

  auto two = two_word_doc();
  CHECK(reading_order(two) == ReadingSequence{1, 0});
}

TEST_CASE("reading_order of a jittered 3x3 grid is row-major") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    auto d = grid_doc(rng);
    ReadingSequence expected(9);
    std::iota(expected.begin(), expected.end(), 0);
    CHECK(reading_order(d) == expected);
  }
}

TEST_CASE("reading_order is invariant to storage permutation and uniform scaling") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    auto docs = generate(builtin_template("basic8"), 1, seed);
    auto d = docs[0];
    const auto base = reading_order(d);

    auto shuffled = d;
    rng.shuffle(std::span(shuffled.regions));
    CHECK(reading_order(shuffled) == base);

    auto scaled = d;
    scaled.width *= 3;
    scaled.height *= 3;
    for (auto& r : scaled.regions) {
      r.bbox.x0 *= 3;
      r.bbox.x1 *= 3;
      r.bbox.y0 *= 3;
      r.bbox.y1 *= 3;
    }
    CHECK(reading_order(scaled) == base);

    auto sorted = base;
    std::sort(sorted.begin(), sorted.end());
    ReadingSequence ids(d.size());
    std::iota(ids.begin(), ids.end(), 0);
    CHECK(sorted == ids);
  }
}

TEST_CASE("grid_bin") {
  CHECK(grid_bin(0, 1000, 25) == 0);
  CHECK(grid_bin(1000, 1000, 25) == 24);
  CHECK(grid_bin(500, 1000, 25) == 12);
  CHECK_THROWS_AS(grid_bin(-0.1, 1000, 25), DomainError);
  CHECK_THROWS_AS(grid_bin(1000.5, 1000, 25), DomainError);
  CHECK_THROWS_AS(grid_bin(1, 10, 0), DomainError);

  std::vector<bool> hit(25, false);
  std::size_t prev = 0;
  for (int i = 0; i <= 10000; ++i) {
    const auto b = grid_bin(i * 0.1, 1000, 25);
    CHECK(b >= prev);
    prev = b;
    hit[b] = true;
  }
  CHECK(std::all_of(hit.begin(), hit.end(), [](bool h) { return h; }));
}

TEST_CASE("spatial_relation") {
  const BBox a{10, 10, 30, 20};
  const auto self = spatial_relation(a, a, 100, 50);
  CHECK(self[0] == 0.0);
  CHECK(self[1] == 0.0);
  CHECK(self[2] == doctest::Approx(0.2));
  CHECK(self[3] == doctest::Approx(0.2));
  CHECK(self[4] == doctest::Approx(0.2));
  CHECK(self[5] == doctest::Approx(0.2));

  const BBox b{a.x0 + 25, a.y0, a.x1 + 25, a.y1};
  const auto right = spatial_relation(a, b, 100, 50);
  CHECK(right[0] == doctest::Approx(0.25));
  CHECK(right[1] == 0.0);

  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    auto box = [&] {
      const double x0 = rng.uniform(0, 90), y0 = rng.uniform(0, 40);
      return BBox{x0, y0, x0 + rng.uniform(0.5, 10), y0 + rng.uniform(0.5, 10)};
    };
    const auto p = box(), q = box();
    const auto s = spatial_relation(p, q, 100, 50), r = spatial_relation(q, p, 100, 50);
    CHECK(s[0] == -r[0]);
    CHECK(s[1] == -r[1]);
    for (int k = 2; k < 6; ++k) CHECK(s[k] > 0);
  }
}

TEST_CASE("pgm round trip after quantization") {
  Image img{3, 4, {}};
  Rng rng(9);
  for (int i = 0; i < 12; ++i) img.pixels.push_back(rng.uniform());
  const auto q = quantize_8bit(img);
  const auto dir = scratch_dir("pgm");
  write_pgm(q, dir / "x.pgm");
  CHECK(read_pgm(dir / "x.pgm") == q);
}

TEST_CASE("document_fingerprint ignores storage order") {
  auto d = two_word_doc();
  auto e = d;
  std::swap(e.regions[0], e.regions[1]);
  CHECK(document_fingerprint(d) == document_fingerprint(e));
  e.regions[0].text = "other";
  CHECK(document_fingerprint(d) != document_fingerprint(e));
}
