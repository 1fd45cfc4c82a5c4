#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fsdag/checkpoint.hpp"
#include "fsdag/errors.hpp"
#include "fsdag/synthgen.hpp"
#include "fsdag/trainer.hpp"
#include "test_docs.hpp"

using namespace fsdag;
using namespace fsdag::testing;

namespace {

bool same_values(const ModelParams& a, const ModelParams& b) {
  const auto na = a.named(), nb = b.named();
  if (na.size() != nb.size()) return false;
  for (std::size_t k = 0; k < na.size(); ++k) {
    const auto va = na[k].tensor.values(), vb = nb[k].tensor.values();
    if (!std::equal(va.begin(), va.end(), vb.begin(), vb.end())) return false;
  }
  return true;
}

Document boxed_page(std::vector<BBox> boxes, std::size_t w = 100, std::size_t h = 80) {
  Document d;
  d.width = w;
  d.height = h;
  d.labels.names = class_names(3);
  for (std::size_t i = 0; i < boxes.size(); ++i) d.regions.push_back({i, "w" + std::to_string(i), boxes[i], i % 3});
  Image img{h, w, std::vector<double>(w * h)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) img.at(y, x) = 0.5 + 0.4 * std::sin(0.3 * x + 0.2 * y);
  d.raster = img;
  validate(d);
  return d;
}

TemplateSpec tiny_template() {
  auto spec = builtin_template("basic8");
  return spec;
}

}  // namespace

TEST_CASE("train config validation and JSON") {
  TrainConfig c;
  CHECK_NOTHROW(validate(c));
  CHECK(train_config_from_json(to_json(c)).epochs == c.epochs);
  CHECK_THROWS_AS(train_config_from_json({{"epoch", 3}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"node_dropout", 1.5}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"learning_rate", -1.0}}), ConfigError);
  CHECK_THROWS_AS(train_config_from_json({{"epochs", "ten"}}), ConfigError);
  c.scale_min = 1.2;
  CHECK_THROWS_AS(validate(c), ConfigError);
}

TEST_CASE("homography algebra") {
  const auto r = Homography::rotation(30, 10, 20);
  const auto back = r.then(Homography::rotation(-30, 10, 20));
  for (int i = 0; i < 9; ++i) CHECK(back.m[i] == doctest::Approx(Homography::identity().m[i]).epsilon(1e-12));
  const auto p = r.apply(10, 20);
  CHECK(p[0] == doctest::Approx(10));
  CHECK(p[1] == doctest::Approx(20));
  const auto q = r.apply(20, 20);  // +30 degrees in image coordinates (y down)
  CHECK(q[0] == doctest::Approx(10 + 10 * std::cos(M_PI / 6)));
  CHECK(q[1] == doctest::Approx(20 + 10 * std::sin(M_PI / 6)));

  const std::array<std::array<double, 2>, 4> src{{{0, 0}, {100, 0}, {0, 80}, {100, 80}}};
  const std::array<std::array<double, 2>, 4> dst{{{3, -2}, {97, 4}, {-4, 83}, {102, 77}}};
  const auto h = Homography::from_points(src, dst);
  for (int k = 0; k < 4; ++k) {
    const auto m = h.apply(src[k][0], src[k][1]);
    CHECK(m[0] == doctest::Approx(dst[k][0]));
    CHECK(m[1] == doctest::Approx(dst[k][1]));
  }
  const auto inv = h.inverse().apply(37, 41);
  const auto round = h.apply(inv[0], inv[1]);
  CHECK(round[0] == doctest::Approx(37));
  CHECK(round[1] == doctest::Approx(41));
  CHECK_THROWS_AS(Homography::from_points(src, {{{0, 0}, {0, 0}, {0, 0}, {0, 0}}}), DomainError);
}

TEST_CASE("identity transform returns the input") {
  Rng rng(1);
  for (int k = 0; k < 5; ++k) {
    const auto doc = random_document(rng, 9);
    const auto s = apply_homography(doc, Homography::identity());
    CHECK(s.doc == doc);
    CHECK(s.source_ids.size() == doc.size());
  }
  TrainConfig zero;
  zero.rotation_deg = zero.perspective = zero.translate = 0;
  zero.scale_min = zero.scale_max = 1.0;
  const auto doc = random_document(rng, 7);
  for (int k = 0; k < 8; ++k) {
    const auto s = augment_geometric(doc, rng, zero);
    REQUIRE(s.doc.size() == doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
      CHECK(s.doc.regions[i].bbox.x0 == doctest::Approx(doc.regions[i].bbox.x0));
      CHECK(s.doc.regions[i].bbox.y1 == doctest::Approx(doc.regions[i].bbox.y1));
    }
  }
}

TEST_CASE("rotating by +theta then -theta returns box centres within 1 px") {
  const auto doc = boxed_page({{30, 30, 45, 36}, {50, 40, 70, 46}, {35, 50, 60, 55}, {20, 20, 28, 26}});
  for (double theta : {1.0, 3.0, 5.0, -4.0}) {
    const auto once = apply_homography(doc, Homography::rotation(theta, 50, 40));
    const auto twice = apply_homography(once.doc, Homography::rotation(-theta, 50, 40));
    REQUIRE(twice.doc.size() == doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
      const auto& a = doc.regions[once.source_ids[twice.source_ids[i]]].bbox;
      const auto& b = twice.doc.regions[i].bbox;
      CHECK(std::abs(a.center_x() - b.center_x()) < 1.0);
      CHECK(std::abs(a.center_y() - b.center_y()) < 1.0);
    }
  }
}

TEST_CASE("heavily cropped regions are dropped and the rest keep text and label") {
  const auto doc = boxed_page({{0, 0, 2, 2}, {40, 30, 60, 40}, {10, 50, 30, 60}});
  const auto s = apply_homography(doc, Homography::scale_translate(1.0, -1.5, -1.5, 50, 40));
  REQUIRE(s.doc.size() == 2);
  CHECK(s.source_ids == std::vector<std::size_t>{1, 2});
  for (std::size_t i = 0; i < s.doc.size(); ++i) {
    const auto& orig = doc.regions[s.source_ids[i]];
    CHECK(s.doc.regions[i].id == i);
    CHECK(s.doc.regions[i].text == orig.text);
    CHECK(s.doc.regions[i].label == orig.label);
  }
  CHECK(s.doc.regions[0].bbox == BBox{38.5, 28.5, 58.5, 38.5});
  // border pixels that came from outside the page are padded with 1.0
  CHECK(s.doc.raster->at(79, 99) == 1.0);
}

TEST_CASE("random geometric augmentation keeps samples valid") {
  Rng rng(17);
  const TrainConfig cfg;
  const auto docs = generate(tiny_template(), 4, 3);
  for (int trial = 0; trial < 40; ++trial) {
    const auto& doc = docs[trial % docs.size()];
    auto s = augment_geometric(doc, rng, cfg);
    CHECK_NOTHROW(validate(s.doc));
    CHECK(s.doc.size() >= 2);
    for (std::size_t i = 0; i < s.doc.size(); ++i) {
      CHECK(s.doc.regions[i].text == doc.regions[s.source_ids[i]].text);
      CHECK(s.doc.regions[i].label == doc.regions[s.source_ids[i]].label);
    }
    const auto [lo, hi] = std::minmax_element(s.doc.raster->pixels.begin(), s.doc.raster->pixels.end());
    CHECK(*lo >= 0.0);
    CHECK(*hi <= 1.0);
  }
  Document bare = docs[0];
  bare.raster.reset();
  CHECK_THROWS_AS(augment_geometric(bare, rng, cfg), ContractError);
}

TEST_CASE("graph augmentation") {
  Rng rng(5);
  const std::vector<BBox> boxes{{0, 0, 3, 2}, {10, 10, 11, 11.5}, {95, 70, 100, 80}};
  SUBCASE("identity at rate 0 and sigma 0") {
    const auto g = augment_graph(boxes, 100, 80, rng, 0.0, 0.0);
    CHECK(g.boxes == boxes);
    CHECK(g.node_keep == std::vector<double>{1, 1, 1});
  }
  SUBCASE("dropped-node fraction over 10^4 trials") {
    const std::vector<BBox> one{{1, 1, 2, 2}};
    int dropped = 0;
    for (int k = 0; k < 10000; ++k) dropped += augment_graph(one, 10, 10, rng, 0.1, 2.0).node_keep[0] == 0.0;
    CHECK(dropped / 10000.0 > 0.09);
    CHECK(dropped / 10000.0 < 0.11);
  }
  SUBCASE("jitter never produces invalid boxes") {
    for (int k = 0; k < 3000; ++k) {
      const auto g = augment_graph(boxes, 100, 80, rng, 0.1, 2.0);
      for (const auto& b : g.boxes)
        REQUIRE((b.x0 < b.x1 && b.y0 < b.y1 && b.x0 >= 0 && b.y0 >= 0 && b.x1 <= 100 && b.y1 <= 80));
    }
  }
}

TEST_CASE("Adam first step moves each coordinate by lr against the gradient sign") {
  Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  auto g = w.mutable_grad();
  g[0] = 0.3, g[1] = -4.0, g[2] = 0.0;
  Adam adam({{"w", w}}, 0.01, 0.9, 0.999, 1e-8);
  adam.step();
  CHECK(w[0] == doctest::Approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8)));
  CHECK(w[1] == doctest::Approx(-2.0 + 0.01));
  CHECK(w[2] == 0.5);
  adam.zero_grad();
  CHECK(w.grad()[1] == 0.0);
  CHECK(adam.steps() == 1);
  // second step with zero gradient keeps moving on momentum: m = 0.09 g, v = 0.000999 g^2
  adam.step();
  const double m = 0.09 * 0.3 / (1 - 0.81), v = 0.000999 * 0.09 / (1 - 0.998001);
  CHECK(w[0] == doctest::Approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8) - 0.01 * m / (std::sqrt(v) + 1e-8)));
}

namespace {

struct Corpus5 {
  std::vector<Document> docs;
  ModelConfig mcfg;
  TextEmbedder embedder;

  Corpus5()
      : docs(generate(tiny_template(), 5, 11)),
        mcfg([&] {
          ModelConfig c;
          c.classes = tiny_template().label_set().names;
          return c;
        }()),
        embedder(mcfg.text) {}
};

}  // namespace

TEST_CASE("lr = 0 leaves parameters unchanged") {
  Corpus5 c;
  TrainConfig t;
  t.epochs = 2;
  t.learning_rate = 0;
  t.seed = 3;
  const auto r = train(c.docs, t, c.mcfg, c.embedder);
  CHECK(same_values(r.params, ModelParams::init(c.mcfg, 3)));
  t.augment = false;
  CHECK(same_values(train(c.docs, t, c.mcfg, c.embedder).params, ModelParams::init(c.mcfg, 3)));
}

TEST_CASE("training is deterministic in the seed") {
  Corpus5 c;
  TrainConfig t;
  t.epochs = 2;
  t.seed = 21;
  const auto a = encode_checkpoint(train(c.docs, t, c.mcfg, c.embedder).params, c.mcfg);
  const auto b = encode_checkpoint(train(c.docs, t, c.mcfg, c.embedder).params, c.mcfg);
  CHECK(a == b);
  t.seed = 22;
  CHECK(encode_checkpoint(train(c.docs, t, c.mcfg, c.embedder).params, c.mcfg) != a);
}

TEST_CASE("training log and checkpoint cadence") {
  Corpus5 c;
  TrainConfig t;
  t.epochs = 5;
  t.checkpoint_every = 2;
  std::vector<std::size_t> seen, saved;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& e) { seen.push_back(e.epoch); };
  hooks.on_checkpoint = [&](std::size_t epoch, const ModelParams&) { saved.push_back(epoch); };
  const auto r = train(c.docs, t, c.mcfg, c.embedder, hooks);
  CHECK(seen == std::vector<std::size_t>{1, 2, 3, 4, 5});
  CHECK(saved == std::vector<std::size_t>{2, 4});
  REQUIRE(r.log.size() == 5);
  for (const auto& e : r.log) {
    CHECK(std::isfinite(e.loss));
    CHECK(e.loss > 0);
    CHECK(e.macro_f1 >= 0);
    CHECK(e.macro_f1 <= 1);
    CHECK(e.wallclock_ms >= 0);
    const auto j = e.to_json();
    for (const char* key : {"epoch", "loss", "macro_f1", "wallclock_ms"}) CHECK(j.contains(key));
  }
}

TEST_CASE("training rejects mixed label sets") {
  Corpus5 c;
  TrainConfig t;
  t.epochs = 1;
  auto docs = c.docs;
  docs[3].labels.names.back() = "something_else";
  CHECK_THROWS_AS(train(docs, t, c.mcfg, c.embedder), ConfigError);
  CHECK_THROWS_AS(train({}, t, c.mcfg, c.embedder), ArgumentError);
}

TEST_CASE("loss on a one-document corpus is monotone") {
  Corpus5 c;
  const std::vector<Document> one{c.docs[0]};
  int monotone = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TrainConfig t;
    t.epochs = 50;
    t.seed = seed;
    t.augment = false;
    const auto r = train(one, t, c.mcfg, c.embedder);
    bool ok = true;
    for (std::size_t e = 1; e < r.log.size(); ++e) ok = ok && r.log[e].loss <= r.log[e - 1].loss;
    monotone += ok;
  }
  CHECK(monotone >= 9);
}

TEST_CASE("ten steps update every parameter group; text embeddings stay frozen") {
  Corpus5 c;
  auto docs = c.docs;
  auto more = generate(tiny_template(), 5, 12);
  docs.insert(docs.end(), more.begin(), more.end());
  TrainConfig t;
  t.epochs = 1;
  t.seed = 4;
  const auto before = c.embedder.embed("Invoice");
  const auto r = train(docs, t, c.mcfg, c.embedder);
  const auto init = ModelParams::init(c.mcfg, 4);
  const auto a = init.named(), b = r.params.named();
  for (std::size_t k = 0; k < a.size(); ++k) {
    INFO(a[k].name);
    const auto va = a[k].tensor.values(), vb = b[k].tensor.values();
    CHECK_FALSE(std::equal(va.begin(), va.end(), vb.begin()));
  }
  const auto after = c.embedder.embed("Invoice");
  CHECK(std::equal(before.begin(), before.end(), after.begin(), after.end()));
}

TEST_CASE("checkpoint round trip gives bit-identical logits") {
  Corpus5 c;
  Rng rng(31);
  for (auto cfg : {c.mcfg, [&] {
                     auto x = c.mcfg;
                     x.use_visual = false;
                     x.use_positional = false;
                     x.message_mode = MessageMode::Scalar;
                     x.text.pooling = TextPooling::First;
                     return x;
                   }()}) {
    const auto params = ModelParams::init(cfg, 9);
    randomize_params(params, rng, 0.3);
    const auto path = std::filesystem::temp_directory_path() / "fsdag_ckpt_test.ckpt";
    save_checkpoint(params, cfg, path);
    const auto ck = load_checkpoint(path);
    std::filesystem::remove(path);
    CHECK(to_json(ck.config) == to_json(cfg));
    CHECK(same_values(ck.params, params));
    TextEmbedder emb(cfg.text);
    Tape t1(false), t2(false);
    const auto l1 = forward(t1, c.docs[1], params, cfg, emb).logits;
    const auto l2 = forward(t2, c.docs[1], ck.params, ck.config, emb).logits;
    CHECK(std::equal(l1.values().begin(), l1.values().end(), l2.values().begin(), l2.values().end()));
  }
}

TEST_CASE("checkpoint header matches the parameter groups") {
  Corpus5 c;
  const auto params = ModelParams::init(c.mcfg, 1);
  const auto bytes = encode_checkpoint(params, c.mcfg);
  CHECK(bytes.substr(0, 6) == "FSDAG1");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[6 + i])) << (8 * i);
  const auto header = nlohmann::json::parse(bytes.substr(14, len));
  CHECK(header["tensors"].size() == params.named().size());
  CHECK(header["payload_bytes"].get<std::size_t>() == params.parameter_count() * 8);
  CHECK(bytes.size() == 14 + len + params.parameter_count() * 8);
}

TEST_CASE("corrupt checkpoints raise CheckpointError") {
  Corpus5 c;
  auto cfg = c.mcfg;
  cfg.use_visual = false;
  const auto bytes = encode_checkpoint(ModelParams::init(cfg, 1), cfg);
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, std::size_t{40}, bytes.size() / 2,
                          bytes.size() - 1})
    CHECK_THROWS_AS(decode_checkpoint(std::string_view(bytes).substr(0, cut)), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint("NOTACKPT" + bytes.substr(8)), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "xx"), CheckpointError);

  auto with_header = [&](const std::function<void(nlohmann::json&)>& edit) {
    std::uint64_t len = 0;
    for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[6 + i])) << (8 * i);
    auto header = nlohmann::json::parse(bytes.substr(14, len));
    edit(header);
    const auto h = header.dump();
    std::string out = "FSDAG1";
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((h.size() >> (8 * i)) & 0xFF));
    return out + h + bytes.substr(14 + len);
  };
  CHECK_NOTHROW(decode_checkpoint(with_header([](auto&) {})));
  CHECK_THROWS_AS(decode_checkpoint(with_header([](auto& h) { h["tensors"][0]["shape"] = {1, 2}; })), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(with_header([](auto& h) { h["tensors"][2]["name"] = "bogus"; })), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(with_header([](auto& h) { h["config"]["node_dim"] = 32; })), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(with_header([](auto& h) { h["config"]["use_visual"] = true; })), CheckpointError);
  CHECK_THROWS_AS(decode_checkpoint(with_header([](auto& h) { h.erase("tensors"); })), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/model.ckpt"), CheckpointError);
}
