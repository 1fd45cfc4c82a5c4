#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fsdag/docmodel.hpp"
#include "fsdag/graphnet.hpp"
#include "fsdag/rng.hpp"
#include "json.hpp"

namespace fsdag {

struct TrainConfig {
  std::size_t epochs = 300;
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool augment = true;
  double geometric_prob = 0.5;
  double rotation_deg = 5.0;
  double perspective = 0.05;  // corner offsets as a fraction of the page extent
  double translate = 0.05;
  double scale_min = 0.9, scale_max = 1.1;
  double node_dropout = 0.1;
  double bbox_jitter = 2.0;  // pixels
  std::size_t checkpoint_every = 0;  // epochs; 0 disables intermediate checkpoints
};

void validate(const TrainConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Projective map on page coordinates, row-major 3x3.
struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return {}; }
  static Homography rotation(double degrees, double cx, double cy);
  static Homography scale_translate(double scale, double tx, double ty, double cx, double cy);
  // Maps src[k] to dst[k] for four points in general position.
  static Homography from_points(const std::array<std::array<double, 2>, 4>& src,
                                const std::array<std::array<double, 2>, 4>& dst);

  std::array<double, 2> apply(double x, double y) const;
  Homography inverse() const;
  Homography then(const Homography& next) const;  // next(this(x))
};

enum class GeometricKind { Rotation, Perspective, Affine, ScalePad };

struct AugmentedSample {
  Document doc;                         // regions renumbered 0..L'-1
  std::vector<std::size_t> source_ids;  // original id of each surviving region
};

/// Warps raster and boxes; boxes are the clipped hull of their mapped
/// corners, and regions keeping under 25% of their mapped area are dropped.
AugmentedSample apply_homography(const Document& doc, const Homography& h);
Homography sample_homography(GeometricKind kind, double width, double height, Rng& rng, const TrainConfig& cfg);
/// One transform drawn uniformly from the four kinds; falls back to the
/// untouched document when fewer than two regions survive.
AugmentedSample augment_geometric(const Document& doc, Rng& rng, const TrainConfig& cfg);

/// Node dropout on n^0 and Gaussian jitter of boxes used for geometry.
GraphPerturbation augment_graph(std::span<const BBox> boxes, double width, double height, Rng& rng,
                                double dropout, double sigma);

class Adam {
 public:
  Adam(std::vector<NamedTensor> params, double lr, double beta1, double beta2, double eps);
  void step();
  void zero_grad();
  std::size_t steps() const { return t_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0;
  double macro_f1 = 0;
  double wallclock_ms = 0;

  nlohmann::json to_json() const;
};

struct TrainHooks {
  std::function<void(const EpochLog&)> on_epoch;
  std::function<void(std::size_t epoch, const ModelParams&)> on_checkpoint;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
};

/// Deterministic in (documents, configs). Throws ConfigError when label sets disagree.
TrainResult train(const std::vector<Document>& docs, const TrainConfig& tcfg, const ModelConfig& mcfg,
                  const TextEmbedder& embedder, const TrainHooks& hooks = {});

}  // namespace fsdag
