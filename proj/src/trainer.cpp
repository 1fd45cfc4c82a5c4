#include "fsdag/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fsdag/errors.hpp"
#include "fsdag/robusteval.hpp"

namespace fsdag {

using nlohmann::json;

void validate(const TrainConfig& cfg) {
  auto prob = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1]");
  };
  if (cfg.epochs == 0) throw ConfigError("epochs must be positive");
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) throw ConfigError("learning rate must be >= 0");
  prob(cfg.beta1, "beta1");
  prob(cfg.beta2, "beta2");
  if (cfg.beta1 >= 1.0 || cfg.beta2 >= 1.0) throw ConfigError("Adam betas must be < 1");
  if (!(cfg.adam_eps > 0)) throw ConfigError("Adam eps must be positive");
  prob(cfg.geometric_prob, "geometric augmentation probability");
  prob(cfg.node_dropout, "node dropout rate");
  if (!(cfg.rotation_deg >= 0) || cfg.rotation_deg >= 45) throw ConfigError("rotation limit must lie in [0, 45)");
  if (!(cfg.perspective >= 0) || cfg.perspective >= 0.25) throw ConfigError("perspective fraction must lie in [0, 0.25)");
  if (!(cfg.translate >= 0) || cfg.translate >= 0.5) throw ConfigError("translate fraction must lie in [0, 0.5)");
  if (!(cfg.scale_min > 0) || !(cfg.scale_min <= cfg.scale_max)) throw ConfigError("scale range must satisfy 0 < min <= max");
  if (!(cfg.bbox_jitter >= 0)) throw ConfigError("bbox jitter must be >= 0");
}

json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"seed", c.seed},
          {"augment", c.augment},
          {"geometric_prob", c.geometric_prob},
          {"rotation_deg", c.rotation_deg},
          {"perspective", c.perspective},
          {"translate", c.translate},
          {"scale_min", c.scale_min},
          {"scale_max", c.scale_max},
          {"node_dropout", c.node_dropout},
          {"bbox_jitter", c.bbox_jitter},
          {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("training config must be an object");
  TrainConfig c;
  const json defaults = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!defaults.contains(it.key())) throw ConfigError("unknown training option \"" + it.key() + "\"");
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    get("epochs", c.epochs);
    get("learning_rate", c.learning_rate);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("adam_eps", c.adam_eps);
    get("seed", c.seed);
    get("augment", c.augment);
    get("geometric_prob", c.geometric_prob);
    get("rotation_deg", c.rotation_deg);
    get("perspective", c.perspective);
    get("translate", c.translate);
    get("scale_min", c.scale_min);
    get("scale_max", c.scale_max);
    get("node_dropout", c.node_dropout);
    get("bbox_jitter", c.bbox_jitter);
    get("checkpoint_every", c.checkpoint_every);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  validate(c);
  return c;
}

// ---- homographies ----

Homography Homography::rotation(double degrees, double cx, double cy) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  return {{c, -s, cx - c * cx + s * cy, s, c, cy - s * cx - c * cy, 0, 0, 1}};
}

Homography Homography::scale_translate(double scale, double tx, double ty, double cx, double cy) {
  return {{scale, 0, cx - scale * cx + tx, 0, scale, cy - scale * cy + ty, 0, 0, 1}};
}

Homography Homography::from_points(const std::array<std::array<double, 2>, 4>& src,
                                   const std::array<std::array<double, 2>, 4>& dst) {
  // h33 = 1; two equations per correspondence.
  double a[8][9] = {};
  for (int k = 0; k < 4; ++k) {
    const double x = src[k][0], y = src[k][1], u = dst[k][0], v = dst[k][1];
    double* r0 = a[2 * k];
    double* r1 = a[2 * k + 1];
    r0[0] = x, r0[1] = y, r0[2] = 1, r0[6] = -u * x, r0[7] = -u * y, r0[8] = u;
    r1[3] = x, r1[4] = y, r1[5] = 1, r1[6] = -v * x, r1[7] = -v * y, r1[8] = v;
  }
  for (int col = 0; col < 8; ++col) {
    int piv = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-12) throw DomainError("homography points are degenerate");
    std::swap(a[col], a[piv]);
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 9; ++c) a[r][c] -= f * a[col][c];
    }
  }
  Homography h;
  for (int i = 0; i < 8; ++i) h.m[i] = a[i][8] / a[i][i];
  h.m[8] = 1;
  return h;
}

std::array<double, 2> Homography::apply(double x, double y) const {
  const double w = m[6] * x + m[7] * y + m[8];
  return {(m[0] * x + m[1] * y + m[2]) / w, (m[3] * x + m[4] * y + m[5]) / w};
}

Homography Homography::inverse() const {
  const auto& a = m;
  const double c00 = a[4] * a[8] - a[5] * a[7], c01 = a[5] * a[6] - a[3] * a[8], c02 = a[3] * a[7] - a[4] * a[6];
  const double det = a[0] * c00 + a[1] * c01 + a[2] * c02;
  if (std::abs(det) < 1e-15) throw DomainError("homography is singular");
  Homography h;
  h.m = {c00 / det,
         (a[2] * a[7] - a[1] * a[8]) / det,
         (a[1] * a[5] - a[2] * a[4]) / det,
         c01 / det,
         (a[0] * a[8] - a[2] * a[6]) / det,
         (a[2] * a[3] - a[0] * a[5]) / det,
         c02 / det,
         (a[1] * a[6] - a[0] * a[7]) / det,
         (a[0] * a[4] - a[1] * a[3]) / det};
  return h;
}

Homography Homography::then(const Homography& next) const {
  Homography h;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += next.m[3 * r + k] * m[3 * k + c];
      h.m[3 * r + c] = s;
    }
  return h;
}

// ---- geometric augmentation ----

namespace {

Image warp(const Image& src, const Homography& inv) {
  Image out{src.height, src.width, std::vector<double>(src.pixels.size(), 1.0)};
  const double w = static_cast<double>(src.width), h = static_cast<double>(src.height);
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = 0; x < src.width; ++x) {
      const auto [sx, sy] = inv.apply(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5);
      if (!(sx >= 0 && sx <= w && sy >= 0 && sy <= h)) continue;
      const double u = std::clamp(sx - 0.5, 0.0, w - 1), v = std::clamp(sy - 0.5, 0.0, h - 1);
      const auto x0 = static_cast<std::size_t>(u), y0 = static_cast<std::size_t>(v);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1), y1 = std::min(y0 + 1, src.height - 1);
      const double fx = u - static_cast<double>(x0), fy = v - static_cast<double>(y0);
      const double top = src.at(y0, x0) * (1 - fx) + src.at(y0, x1) * fx;
      const double bot = src.at(y1, x0) * (1 - fx) + src.at(y1, x1) * fx;
      out.at(y, x) = top * (1 - fy) + bot * fy;
    }
  return out;
}

}  // namespace

AugmentedSample apply_homography(const Document& doc, const Homography& h) {
  const double w = static_cast<double>(doc.width), hh = static_cast<double>(doc.height);
  AugmentedSample s;
  s.doc.width = doc.width;
  s.doc.height = doc.height;
  s.doc.labels = doc.labels;
  if (doc.raster) s.doc.raster = warp(*doc.raster, h.inverse());
  for (const auto& r : doc.regions) {
    const auto& b = r.bbox;
    const std::array<std::array<double, 2>, 4> corners{
        h.apply(b.x0, b.y0), h.apply(b.x1, b.y0), h.apply(b.x0, b.y1), h.apply(b.x1, b.y1)};
    BBox hull{corners[0][0], corners[0][1], corners[0][0], corners[0][1]};
    for (const auto& c : corners) {
      hull.x0 = std::min(hull.x0, c[0]);
      hull.y0 = std::min(hull.y0, c[1]);
      hull.x1 = std::max(hull.x1, c[0]);
      hull.y1 = std::max(hull.y1, c[1]);
    }
    const BBox clipped{std::clamp(hull.x0, 0.0, w), std::clamp(hull.y0, 0.0, hh), std::clamp(hull.x1, 0.0, w),
                       std::clamp(hull.y1, 0.0, hh)};
    if (!(clipped.x0 < clipped.x1 && clipped.y0 < clipped.y1)) continue;
    if (clipped.area() < 0.25 * b.area()) continue;
    TextRegion out = r;
    out.id = s.doc.regions.size();
    out.bbox = clipped;
    s.doc.regions.push_back(std::move(out));
    s.source_ids.push_back(r.id);
  }
  return s;
}

Homography sample_homography(GeometricKind kind, double width, double height, Rng& rng, const TrainConfig& cfg) {
  const double cx = 0.5 * width, cy = 0.5 * height;
  switch (kind) {
    case GeometricKind::Rotation:
      return Homography::rotation(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg), cx, cy);
    case GeometricKind::Perspective: {
      const std::array<std::array<double, 2>, 4> src{{{0, 0}, {width, 0}, {0, height}, {width, height}}};
      auto dst = src;
      for (auto& p : dst) {
        p[0] += rng.uniform(-cfg.perspective, cfg.perspective) * width;
        p[1] += rng.uniform(-cfg.perspective, cfg.perspective) * height;
      }
      return Homography::from_points(src, dst);
    }
    case GeometricKind::Affine: {
      const double tx = rng.uniform(-cfg.translate, cfg.translate) * width;
      const double ty = rng.uniform(-cfg.translate, cfg.translate) * height;
      return Homography::scale_translate(rng.uniform(cfg.scale_min, cfg.scale_max), tx, ty, cx, cy);
    }
    case GeometricKind::ScalePad:
      return Homography::scale_translate(rng.uniform(cfg.scale_min, cfg.scale_max), 0, 0, cx, cy);
  }
  return {};
}

AugmentedSample augment_geometric(const Document& doc, Rng& rng, const TrainConfig& cfg) {
  if (!doc.raster) throw ContractError("geometric augmentation needs a raster");
  const auto kind = static_cast<GeometricKind>(rng.uniform_int(4));
  const auto h = sample_homography(kind, static_cast<double>(doc.width), static_cast<double>(doc.height), rng, cfg);
  auto s = apply_homography(doc, h);
  if (s.doc.size() < 2) {
    s.doc = doc;
    s.source_ids.resize(doc.size());
    std::iota(s.source_ids.begin(), s.source_ids.end(), std::size_t{0});
  }
  return s;
}

GraphPerturbation augment_graph(std::span<const BBox> boxes, double width, double height, Rng& rng, double dropout,
                                double sigma) {
  GraphPerturbation g;
  g.node_keep.resize(boxes.size());
  for (auto& k : g.node_keep) k = rng.bernoulli(dropout) ? 0.0 : 1.0;
  g.boxes.assign(boxes.begin(), boxes.end());
  if (sigma > 0) {
    for (auto& b : g.boxes) {
      const BBox orig = b;
      BBox j{std::clamp(b.x0 + rng.normal(0, sigma), 0.0, width), std::clamp(b.y0 + rng.normal(0, sigma), 0.0, height),
             std::clamp(b.x1 + rng.normal(0, sigma), 0.0, width), std::clamp(b.y1 + rng.normal(0, sigma), 0.0, height)};
      // An axis that collapses keeps its original extent.
      if (!(j.x0 < j.x1)) j.x0 = orig.x0, j.x1 = orig.x1;
      if (!(j.y0 < j.y1)) j.y0 = orig.y0, j.y1 = orig.y1;
      b = j;
    }
  }
  return g;
}

// ---- optimizer ----

Adam::Adam(std::vector<NamedTensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor p = params_[k].tensor;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto x = p.mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1_ * m[i] + (1 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1 - beta2_) * g[i] * g[i];
      x[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (const auto& p : params_) p.tensor.zero_grad();
}

// ---- training loop ----

json EpochLog::to_json() const {
  return {{"epoch", epoch}, {"loss", loss}, {"macro_f1", macro_f1}, {"wallclock_ms", wallclock_ms}};
}

TrainResult train(const std::vector<Document>& docs, const TrainConfig& tcfg, const ModelConfig& mcfg,
                  const TextEmbedder& embedder, const TrainHooks& hooks) {
  validate(tcfg);
  validate(mcfg);
  if (docs.empty()) throw ArgumentError("training needs at least one document");
  for (const auto& d : docs) {
    if (d.labels.names != mcfg.classes) throw ConfigError("document label set does not match the model's classes");
    if (!d.fully_labeled()) throw ArgumentError("training documents must be fully labeled");
  }

  TrainResult result{ModelParams::init(mcfg, tcfg.seed), {}};
  Adam adam(result.params.named(), tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.adam_eps);
  Rng rng = Rng(tcfg.seed).derive(0x7A41'0000'0001ULL);
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0;
    std::vector<std::size_t> labels, preds;
    for (const std::size_t idx : order) {
      const Document* doc = &docs[idx];
      Document warped;
      GraphPerturbation pert;
      const bool augment = tcfg.augment;
      if (augment) {
        if (doc->raster && rng.bernoulli(tcfg.geometric_prob)) {
          warped = augment_geometric(*doc, rng, tcfg).doc;
          doc = &warped;
        }
        std::vector<BBox> boxes;
        for (const auto& r : doc->regions) boxes.push_back(r.bbox);
        pert = augment_graph(boxes, static_cast<double>(doc->width), static_cast<double>(doc->height), rng,
                             tcfg.node_dropout, tcfg.bbox_jitter);
      }
      Tape tape;
      const auto y = region_labels(*doc);
      const auto fr = forward(tape, *doc, result.params, mcfg, embedder, augment ? &pert : nullptr);
      const auto loss = smoothed_ce_loss(tape, fr.logits, y, mcfg.label_smoothing);
      tape.backward(loss);
      adam.step();
      adam.zero_grad();

      loss_sum += loss.item();
      for (std::size_t i = 0; i < y.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < fr.logits.dim(1); ++k)
          if (fr.logits.at(i, k) > fr.logits.at(i, best)) best = k;
        preds.push_back(best);
      }
      labels.insert(labels.end(), y.begin(), y.end());
    }
    EpochLog log;
    log.epoch = epoch;
    log.loss = loss_sum / static_cast<double>(docs.size());
    log.macro_f1 = score_predictions(labels, preds, mcfg.classes).macro_f1;
    log.wallclock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);
    if (hooks.on_checkpoint && tcfg.checkpoint_every && epoch % tcfg.checkpoint_every == 0 && epoch != tcfg.epochs)
      hooks.on_checkpoint(epoch, result.params);
  }
  return result;
}

}  // namespace fsdag
