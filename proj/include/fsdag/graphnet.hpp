#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fsdag/docmodel.hpp"
#include "fsdag/encoders.hpp"
#include "fsdag/layers.hpp"
#include "fsdag/tensor.hpp"
#include "json.hpp"

namespace fsdag {

enum class MessageMode { Vector, Scalar };

std::string to_string(MessageMode m);
MessageMode parse_message_mode(std::string_view s);

struct ModelConfig {
  TextEncoderConfig text;
  VisualEncoderConfig visual;
  std::size_t node_dim = 64;
  std::size_t edge_dim = 64;
  std::size_t pos_dim = 64;  // four sub-tables of pos_dim / 4
  std::size_t heads = 4;
  std::size_t steps = 2;
  std::size_t grid = 25;
  double label_smoothing = 0.1;
  bool use_visual = true;
  bool use_positional = true;
  bool use_instance_norm = true;
  MessageMode message_mode = MessageMode::Vector;
  std::vector<std::string> classes;  // background first

  std::size_t n_classes() const { return classes.size(); }
  std::size_t visual_dim() const { return visual.out_dim(); }
  // Per-node message width after concatenating heads.
  std::size_t message_dim() const { return message_mode == MessageMode::Vector ? heads * node_dim : heads; }
};

// Throws ConfigError on inconsistent dimensions or flags.
void validate(const ModelConfig& cfg);
nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct ModelParams {
  Mlp text_proj;                  // MLP1: raw_dim -> text_dim
  std::optional<VisualParams> visual;
  Mlp fusion;                     // MLP2: text_dim * visual_dim -> node_dim
  Mlp edge_init;                  // MLP3: 6 -> edge_dim
  std::optional<Tensor> pos_hor;  // grid x pos_dim/4
  std::optional<Tensor> pos_ver;
  std::vector<Mlp> head_edge;     // MLP4 per head: 2 node + 2 pos + edge -> node_dim
  std::vector<Mlp> head_score;    // MLP5 per head: node_dim -> 1
  std::vector<Mlp> step_update;   // MLP6 per step: message_dim -> node_dim
  Linear classifier;              // node_dim -> n_classes

  /// Every group draws from its own stream keyed by name, so toggling a
  /// component does not change the initial values of the others.
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<NamedTensor> named() const;
  std::size_t parameter_count() const;
};

struct GraphState {
  ReadingSequence order;
  Tensor text;                               // L x text_dim
  Tensor visual;                             // L x visual_dim
  std::vector<Tensor> nodes;                 // n^0 .. n^K, each L x node_dim
  Tensor edges;                              // L*L x edge_dim, row i*L + j
  Tensor positions;                          // L x pos_dim
  std::vector<std::vector<Tensor>> attention;  // [step][head], L x L
};

/// Graph-level augmentation applied inside the forward pass.
struct GraphPerturbation {
  std::vector<double> node_keep;  // per region id, multiplies n^0; empty = keep all
  std::vector<BBox> boxes;        // per region id, used for edges and positions; empty = document boxes
};

struct ForwardResult {
  Tensor logits;  // L x C
  GraphState state;
};

ForwardResult forward(Tape& tape, const Document& doc, const ModelParams& params, const ModelConfig& cfg,
                      const TextEmbedder& embedder, const GraphPerturbation* perturbation = nullptr);

// Single-item forms of the pipeline stages.
Tensor fuse(Tape& tape, const Tensor& t, const Tensor& v, const ModelParams& params);
Tensor edge_init(Tape& tape, const Tensor& s, const ModelParams& params);
Tensor pos_embed(Tape& tape, const BBox& box, double width, double height, const ModelParams& params,
                 const ModelConfig& cfg);
Tensor edge_head_vector(Tape& tape, const Tensor& n_i, const Tensor& p_i, const Tensor& e_ij, const Tensor& n_j,
                        const Tensor& p_j, std::size_t head, const ModelParams& params);
Tensor edge_head_score(Tape& tape, const Tensor& e_h, std::size_t head, const ModelParams& params);
Tensor attention(Tape& tape, const Tensor& scores, const ReadingSequence& order);
Tensor classify(Tape& tape, const Tensor& nodes, const ModelParams& params);
Tensor smoothed_ce_loss(Tape& tape, const Tensor& logits, std::span<const std::size_t> labels, double epsilon);

// Batched stages used by forward.
Tensor visual_features(Tape& tape, const Document& doc, const ModelParams& params, const ModelConfig& cfg);
Tensor fuse_rows(Tape& tape, const Tensor& text, const Tensor& visual, const ModelParams& params);
Tensor spatial_relations(std::span<const BBox> boxes, double width, double height);  // L*L x 6
Tensor edge_init_rows(Tape& tape, const Tensor& relations, const ModelParams& params);
Tensor pos_embed_rows(Tape& tape, std::span<const BBox> boxes, double width, double height, const ModelParams& params,
                      const ModelConfig& cfg);

/// One propagation step; `edge_terms[h]` is e' times the edge rows of MLP4^h's
/// first layer. Appends the per-head attention to `alpha`.
Tensor propagate(Tape& tape, const Tensor& nodes, const Tensor& positions, const std::vector<Tensor>& edge_terms,
                 const ReadingSequence& order, std::size_t step, const ModelParams& params, const ModelConfig& cfg,
                 std::vector<Tensor>* alpha = nullptr);
std::vector<Tensor> edge_terms(Tape& tape, const Tensor& edges, const ModelParams& params, const ModelConfig& cfg);

/// Region labels in id order; throws ContractError on unlabeled regions.
std::vector<std::size_t> region_labels(const Document& doc);

}  // namespace fsdag
