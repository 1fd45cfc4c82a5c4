#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "fsdag/errors.hpp"
#include "fsdag/robusteval.hpp"
#include "test_docs.hpp"

using namespace fsdag;
using namespace fsdag::testing;

TEST_CASE("confusion table defaults and validation") {
  const auto t = ConfusionTable::defaults();
  CHECK(t.replacements.size() == 5);
  CHECK(t.replacements.at('1') == std::vector<std::string>{"l", "I"});
  CHECK(t.replacements.at(',') == std::vector<std::string>{"."});
  CHECK(ConfusionTable::from_json(t.to_json()).replacements == t.replacements);
  CHECK_THROWS_AS(ConfusionTable::from_json(nlohmann::json{{"ab", {"x"}}}), ConfigError);
  CHECK_THROWS_AS(ConfusionTable::from_json(nlohmann::json{{"a", nlohmann::json::array()}}), ConfigError);
  CHECK_THROWS_AS(ConfusionTable::from_json(nlohmann::json{{"a", 3}}), ConfigError);
}

TEST_CASE("word-level perturbation reproduces the OCR sample sentence") {
  const auto table = ConfusionTable::defaults();
  Rng rng(11);
  CHECK(perturb_words("The quick brown fox ate 5 chocolates", 1.0, table, rng) ==
        "The quick brown fox ate S chocoIates");
  CHECK(perturb_text("chocolates", 1.0, table, rng) == "chocoIates");
  CHECK(perturb_text("quick", 1.0, table, rng) == "quick");
  CHECK(perturb_text("", 1.0, table, rng).empty());
}

TEST_CASE("perturbation of '1' draws both replacements") {
  const auto table = ConfusionTable::defaults();
  Rng rng(3);
  std::size_t l = 0, capital_i = 0;
  for (int k = 0; k < 2000; ++k) {
    const auto s = perturb_text("1", 1.0, table, rng);
    l += s == "l";
    capital_i += s == "I";
  }
  CHECK(l + capital_i == 2000);
  CHECK(l > 850);
  CHECK(capital_i > 850);
}

TEST_CASE("p = 0 leaves text unchanged and p outside [0,1] is rejected") {
  const auto table = ConfusionTable::defaults();
  Rng rng(5);
  CHECK(perturb_words("5,00 l1 total", 0.0, table, rng) == "5,00 l1 total");
  CHECK_THROWS_AS(perturb_text("x", 1.5, table, rng), DomainError);
  CHECK_THROWS_AS(perturb_text("x", -0.1, table, rng), DomainError);
}

TEST_CASE("perturbed-word rate at p = 0.1 over 10^4 trials") {
  const auto table = ConfusionTable::defaults();
  Rng rng(2024);
  int hits = 0;
  for (int k = 0; k < 10000; ++k) hits += perturb_text("total", 0.1, table, rng) != "total";
  const double rate = hits / 10000.0;
  CHECK(rate > 0.09);
  CHECK(rate < 0.11);
}

TEST_CASE("perturb_document keeps geometry, labels and raster") {
  Rng rng(8);
  const auto table = ConfusionTable::defaults();
  for (int trial = 0; trial < 10; ++trial) {
    const auto doc = random_document(rng, 12);
    CHECK(perturb_document(doc, 0.0, table, 1) == doc);
    const auto noisy = perturb_document(doc, 0.7, table, 1);
    REQUIRE(noisy.size() == doc.size());
    CHECK(noisy.raster == doc.raster);
    for (std::size_t i = 0; i < doc.size(); ++i) {
      CHECK(noisy.regions[i].bbox == doc.regions[i].bbox);
      CHECK(noisy.regions[i].label == doc.regions[i].label);
    }
    CHECK(perturb_document(doc, 0.7, table, 1) == noisy);
  }
}

TEST_CASE("perturb_document is independent of corpus order") {
  Rng rng(9);
  const auto table = ConfusionTable::defaults();
  std::vector<Document> docs;
  for (int k = 0; k < 6; ++k) docs.push_back(random_document(rng, 8));
  std::vector<Document> forward_pass, backward_pass;
  for (const auto& d : docs) forward_pass.push_back(perturb_document(d, 0.5, table, 42));
  for (auto it = docs.rbegin(); it != docs.rend(); ++it) backward_pass.push_back(perturb_document(*it, 0.5, table, 42));
  for (std::size_t k = 0; k < docs.size(); ++k) CHECK(forward_pass[k] == backward_pass[docs.size() - 1 - k]);
}

TEST_CASE("F1 formula") {
  const auto names = class_names(3);
  SUBCASE("TP=1 FP=0 FN=1") {
    const std::vector<std::size_t> y{1, 1, 2}, yhat{1, 0, 2};
    const auto rep = score_predictions(y, yhat, names);
    CHECK(rep.per_class[0].precision == doctest::Approx(1.0));
    CHECK(rep.per_class[0].recall == doctest::Approx(0.5));
    CHECK(rep.per_class[0].f1 == doctest::Approx(2.0 / 3.0));
    CHECK(rep.per_class[0].support == 2);
    CHECK(rep.macro_f1 == doctest::Approx((2.0 / 3.0 + 1.0) / 2.0));
  }
  SUBCASE("perfect") {
    const std::vector<std::size_t> y{0, 1, 2, 2, 1};
    CHECK(score_predictions(y, y, names).macro_f1 == 1.0);
  }
  SUBCASE("constant background predictor") {
    const std::vector<std::size_t> y{0, 1, 2, 2, 1}, yhat(5, 0);
    const auto rep = score_predictions(y, yhat, names);
    CHECK(rep.macro_f1 == 0.0);
    for (const auto& c : rep.per_class) CHECK(c.f1 == 0.0);
  }
  SUBCASE("classes without support are left out of the mean") {
    const std::vector<std::size_t> y{0, 1}, yhat{0, 1};
    const auto rep = score_predictions(y, yhat, names);
    CHECK(rep.per_class[1].support == 0);
    CHECK(rep.macro_f1 == 1.0);
  }
  SUBCASE("errors") {
    const std::vector<std::size_t> y{0, 1}, yhat{0};
    CHECK_THROWS_AS(score_predictions(y, yhat, names), DimensionError);
    const std::vector<std::size_t> bad{0, 3};
    CHECK_THROWS_AS(score_predictions(y, bad, names), DomainError);
  }
}

TEST_CASE("random-guess predictor on a balanced 4-class corpus") {
  // Uniform guessing over 4 classes: P = R = 1/4 for each key class.
  const auto names = class_names(4);
  double sum = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    std::vector<std::size_t> y, yhat;
    for (int i = 0; i < 2000; ++i) {
      y.push_back(static_cast<std::size_t>(i % 4));
      yhat.push_back(rng.uniform_int(4));
    }
    const double f = score_predictions(y, yhat, names).macro_f1;
    CHECK(f == doctest::Approx(0.25).epsilon(0.2));
    sum += f;
  }
  CHECK(sum / 10 == doctest::Approx(0.25).epsilon(0.05));
}

namespace {

struct Setup {
  ModelConfig cfg = small_config();
  TextEmbedder embedder{cfg.text};
  ModelParams params;
  std::vector<Document> docs;

  Setup() {
    params = ModelParams::init(cfg, 4);
    Rng rng(77);
    for (int k = 0; k < 5; ++k) docs.push_back(random_document(rng, 6 + k));
  }
};

}  // namespace

TEST_CASE("evaluate is deterministic and order independent") {
  Setup s;
  const auto a = evaluate(s.params, s.cfg, s.embedder, s.docs);
  auto rev = s.docs;
  std::reverse(rev.begin(), rev.end());
  const auto b = evaluate(s.params, s.cfg, s.embedder, rev);
  CHECK(a.macro_f1 == b.macro_f1);
  CHECK(a.to_json() == b.to_json());
  CHECK(a.macro_f1 >= 0.0);
  CHECK(a.macro_f1 <= 1.0);
}

TEST_CASE("evaluate rejects unlabeled corpora and foreign label sets") {
  Setup s;
  auto docs = s.docs;
  docs[2].regions[0].label.reset();
  CHECK_THROWS_AS(evaluate(s.params, s.cfg, s.embedder, docs), ArgumentError);
  docs = s.docs;
  docs[1].labels.names[1] = "renamed";
  CHECK_THROWS_AS(evaluate(s.params, s.cfg, s.embedder, docs), ConfigError);
}

TEST_CASE("robustness report") {
  Setup s;
  const auto table = ConfusionTable::defaults();
  const auto zero = robustness_report(s.params, s.cfg, s.embedder, s.docs, 0.0, table, 1);
  CHECK(zero.drop.value() == 0.0);
  const auto rep = robustness_report(s.params, s.cfg, s.embedder, s.docs, 0.5, table, 1);
  CHECK(*rep.drop == *rep.clean_macro_f1 - rep.macro_f1);
  CHECK(rep.p == 0.5);
  CHECK(rep.seed == 1);

  const auto j = rep.to_json();
  for (const char* key : {"per_class", "macro_f1", "clean_macro_f1", "drop", "seed", "p"}) CHECK(j.contains(key));
  CHECK(j["per_class"].size() == 3);
  for (const char* key : {"name", "precision", "recall", "f1", "support"}) CHECK(j["per_class"][0].contains(key));
  CHECK_FALSE(evaluate(s.params, s.cfg, s.embedder, s.docs).to_json().contains("drop"));

  const auto path = std::filesystem::temp_directory_path() / "fsdag_report_test.json";
  write_report(rep, path);
  std::ifstream in(path);
  CHECK(nlohmann::json::parse(in) == j);
  std::filesystem::remove(path);
}
