#include "fsdag/graphnet.hpp"

#include <cmath>

#include "fsdag/errors.hpp"
#include "fsdag/ops.hpp"
#include "fsdag/rng.hpp"

namespace fsdag {

using nlohmann::json;

std::string to_string(MessageMode m) { return m == MessageMode::Vector ? "vector" : "scalar"; }

MessageMode parse_message_mode(std::string_view s) {
  if (s == "vector") return MessageMode::Vector;
  if (s == "scalar") return MessageMode::Scalar;
  throw ConfigError("unknown message mode \"" + std::string(s) + "\" (expected vector or scalar)");
}

void validate(const ModelConfig& cfg) {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(cfg.text.raw_dim, "text.raw_dim");
  positive(cfg.text.text_dim, "text.text_dim");
  positive(cfg.node_dim, "node_dim");
  positive(cfg.edge_dim, "edge_dim");
  positive(cfg.pos_dim, "pos_dim");
  positive(cfg.heads, "heads");
  positive(cfg.steps, "steps");
  positive(cfg.grid, "grid");
  if (cfg.text.ngram_sizes.empty()) throw ConfigError("text.ngram_sizes must not be empty");
  for (auto n : cfg.text.ngram_sizes) positive(n, "text.ngram_sizes entry");
  if (cfg.visual.channels.empty()) throw ConfigError("visual.channels must not be empty");
  for (auto c : cfg.visual.channels) positive(c, "visual.channels entry");
  positive(cfg.visual.roi_grid, "visual.roi_grid");
  if (cfg.pos_dim % 4 != 0) throw ConfigError("pos_dim must be divisible by 4");
  if (!(cfg.label_smoothing >= 0.0 && cfg.label_smoothing < 1.0))
    throw ConfigError("label_smoothing must lie in [0, 1)");
  if (cfg.classes.size() < 2) throw ConfigError("model needs at least two classes (background first)");
}

json to_json(const ModelConfig& cfg) {
  return json{{"text",
               {{"kind", to_string(cfg.text.kind)},
                {"raw_dim", cfg.text.raw_dim},
                {"text_dim", cfg.text.text_dim},
                {"ngram_sizes", cfg.text.ngram_sizes},
                {"hash_seed", cfg.text.hash_seed},
                {"pooling", to_string(cfg.text.pooling)},
                {"external_path", cfg.text.external_path}}},
              {"visual", {{"channels", cfg.visual.channels}, {"roi_grid", cfg.visual.roi_grid}}},
              {"node_dim", cfg.node_dim},
              {"edge_dim", cfg.edge_dim},
              {"pos_dim", cfg.pos_dim},
              {"heads", cfg.heads},
              {"steps", cfg.steps},
              {"grid", cfg.grid},
              {"label_smoothing", cfg.label_smoothing},
              {"use_visual", cfg.use_visual},
              {"use_positional", cfg.use_positional},
              {"use_instance_norm", cfg.use_instance_norm},
              {"message_mode", to_string(cfg.message_mode)},
              {"classes", cfg.classes}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  try {
    const auto& t = j.at("text");
    cfg.text.kind = parse_text_encoder_kind(t.at("kind").get<std::string>());
    cfg.text.raw_dim = t.at("raw_dim").get<std::size_t>();
    cfg.text.text_dim = t.at("text_dim").get<std::size_t>();
    cfg.text.ngram_sizes = t.at("ngram_sizes").get<std::vector<std::size_t>>();
    cfg.text.hash_seed = t.at("hash_seed").get<std::uint64_t>();
    cfg.text.pooling = parse_text_pooling(t.at("pooling").get<std::string>());
    cfg.text.external_path = t.at("external_path").get<std::string>();
    const auto& v = j.at("visual");
    cfg.visual.channels = v.at("channels").get<std::vector<std::size_t>>();
    cfg.visual.roi_grid = v.at("roi_grid").get<std::size_t>();
    cfg.node_dim = j.at("node_dim").get<std::size_t>();
    cfg.edge_dim = j.at("edge_dim").get<std::size_t>();
    cfg.pos_dim = j.at("pos_dim").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.steps = j.at("steps").get<std::size_t>();
    cfg.grid = j.at("grid").get<std::size_t>();
    cfg.label_smoothing = j.at("label_smoothing").get<double>();
    cfg.use_visual = j.at("use_visual").get<bool>();
    cfg.use_positional = j.at("use_positional").get<bool>();
    cfg.use_instance_norm = j.at("use_instance_norm").get<bool>();
    cfg.message_mode = parse_message_mode(j.at("message_mode").get<std::string>());
    cfg.classes = j.at("classes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

ModelParams ModelParams::init(const ModelConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  const Rng root(seed);
  auto stream = [&](const std::string& name) { return root.derive(hash_string(name)); };
  ModelParams p;
  {
    auto rng = stream("text_proj");
    p.text_proj = Mlp::init(cfg.text.raw_dim, cfg.text.text_dim, rng);
  }
  if (cfg.use_visual) {
    auto rng = stream("visual");
    p.visual = VisualParams::init(cfg.visual, rng);
  }
  {
    auto rng = stream("fusion");
    p.fusion = Mlp::init(cfg.text.text_dim * cfg.visual_dim(), cfg.node_dim, rng);
  }
  {
    auto rng = stream("edge_init");
    p.edge_init = Mlp::init(6, cfg.edge_dim, rng);
  }
  if (cfg.use_positional) {
    auto rng = stream("pos");
    p.pos_hor = normal_table({cfg.grid, cfg.pos_dim / 4}, 0.02, rng);
    p.pos_ver = normal_table({cfg.grid, cfg.pos_dim / 4}, 0.02, rng);
  }
  const std::size_t pair_in = 2 * cfg.node_dim + 2 * cfg.pos_dim + cfg.edge_dim;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    auto rng = stream("head." + std::to_string(h));
    p.head_edge.push_back(Mlp::init(pair_in, cfg.node_dim, rng));
    p.head_score.push_back(Mlp::init(cfg.node_dim, 1, rng));
  }
  for (std::size_t k = 0; k < cfg.steps; ++k) {
    auto rng = stream("step." + std::to_string(k));
    p.step_update.push_back(Mlp::init(cfg.message_dim(), cfg.node_dim, rng));
  }
  {
    auto rng = stream("classifier");
    p.classifier = Linear::init(cfg.node_dim, cfg.n_classes(), rng);
  }
  return p;
}

std::vector<NamedTensor> ModelParams::named() const {
  std::vector<NamedTensor> out;
  text_proj.collect("text_proj", out);
  if (visual) visual->collect("visual.conv", out);
  fusion.collect("fusion", out);
  edge_init.collect("edge_init", out);
  if (pos_hor) out.push_back({"pos_hor", *pos_hor});
  if (pos_ver) out.push_back({"pos_ver", *pos_ver});
  for (std::size_t h = 0; h < head_edge.size(); ++h) head_edge[h].collect("head_edge." + std::to_string(h), out);
  for (std::size_t h = 0; h < head_score.size(); ++h) head_score[h].collect("head_score." + std::to_string(h), out);
  for (std::size_t k = 0; k < step_update.size(); ++k) step_update[k].collect("step_update." + std::to_string(k), out);
  classifier.collect("classifier", out);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : named()) n += t.tensor.size();
  return n;
}

namespace {

Tensor as_row(Tape& tape, const Tensor& v) { return ops::reshape(tape, v, {1, v.size()}); }

}  // namespace

Tensor visual_features(Tape& tape, const Document& doc, const ModelParams& params, const ModelConfig& cfg) {
  const std::size_t l = doc.size(), dv = cfg.visual_dim();
  if (!cfg.use_visual) return Tensor::filled({l, dv}, 1.0 / std::sqrt(static_cast<double>(dv)));
  if (!doc.raster) throw ContractError("use_visual is on but the document has no raster");
  if (!params.visual) throw ContractError("model parameters have no visual encoder");
  const Tensor fmap = conv_feature_map(tape, *doc.raster, *params.visual);
  std::vector<BBox> boxes;
  boxes.reserve(l);
  for (const auto& r : doc.regions) boxes.push_back(r.bbox);
  return roi_align_rows(tape, fmap, boxes, static_cast<double>(doc.width), static_cast<double>(doc.height),
                        cfg.visual.roi_grid);
}

Tensor fuse_rows(Tape& tape, const Tensor& text, const Tensor& visual, const ModelParams& params) {
  return params.fusion.forward(tape, ops::kron_rows(tape, text, visual));
}

Tensor fuse(Tape& tape, const Tensor& t, const Tensor& v, const ModelParams& params) {
  const auto out = params.fusion.forward(tape, as_row(tape, ops::kron(tape, t, v)));
  return ops::reshape(tape, out, {out.size()});
}

Tensor spatial_relations(std::span<const BBox> boxes, double width, double height) {
  const std::size_t l = boxes.size();
  std::vector<double> s(l * l * 6);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) {
      const auto r = spatial_relation(boxes[i], boxes[j], width, height);
      std::copy(r.begin(), r.end(), s.begin() + static_cast<std::ptrdiff_t>((i * l + j) * 6));
    }
  return Tensor::from({l * l, 6}, std::move(s));
}

Tensor edge_init_rows(Tape& tape, const Tensor& relations, const ModelParams& params) {
  return ops::l2_normalize_rows(tape, params.edge_init.forward(tape, relations));
}

Tensor edge_init(Tape& tape, const Tensor& s, const ModelParams& params) {
  const auto out = edge_init_rows(tape, as_row(tape, s), params);
  return ops::reshape(tape, out, {out.size()});
}

Tensor pos_embed_rows(Tape& tape, std::span<const BBox> boxes, double width, double height, const ModelParams& params,
                      const ModelConfig& cfg) {
  const std::size_t l = boxes.size();
  if (!cfg.use_positional) return Tensor::zeros({l, cfg.pos_dim});
  if (!params.pos_hor || !params.pos_ver) throw ContractError("model parameters have no positional tables");
  std::vector<std::size_t> bx0(l), bx1(l), by0(l), by1(l);
  for (std::size_t i = 0; i < l; ++i) {
    bx0[i] = grid_bin(boxes[i].x0, width, cfg.grid);
    bx1[i] = grid_bin(boxes[i].x1, width, cfg.grid);
    by0[i] = grid_bin(boxes[i].y0, height, cfg.grid);
    by1[i] = grid_bin(boxes[i].y1, height, cfg.grid);
  }
  const auto cat = ops::concat(tape,
                               {ops::gather_rows(tape, *params.pos_hor, bx0), ops::gather_rows(tape, *params.pos_hor, bx1),
                                ops::gather_rows(tape, *params.pos_ver, by0), ops::gather_rows(tape, *params.pos_ver, by1)},
                               1);
  return ops::tanh(tape, cat);
}

Tensor pos_embed(Tape& tape, const BBox& box, double width, double height, const ModelParams& params,
                 const ModelConfig& cfg) {
  const auto out = pos_embed_rows(tape, std::span(&box, 1), width, height, params, cfg);
  return ops::reshape(tape, out, {out.size()});
}

Tensor edge_head_vector(Tape& tape, const Tensor& n_i, const Tensor& p_i, const Tensor& e_ij, const Tensor& n_j,
                        const Tensor& p_j, std::size_t head, const ModelParams& params) {
  const auto x = ops::concat(tape, {n_i, p_i, e_ij, n_j, p_j}, 0);
  const auto out = params.head_edge.at(head).forward(tape, as_row(tape, x));
  return ops::reshape(tape, out, {out.size()});
}

Tensor edge_head_score(Tape& tape, const Tensor& e_h, std::size_t head, const ModelParams& params) {
  return ops::reshape(tape, params.head_score.at(head).forward(tape, as_row(tape, e_h)), {1});
}

Tensor attention(Tape& tape, const Tensor& scores, const ReadingSequence& order) {
  return ops::masked_softmax_rows(tape, scores, order);
}

Tensor classify(Tape& tape, const Tensor& nodes, const ModelParams& params) {
  return params.classifier.forward(tape, nodes);
}

Tensor smoothed_ce_loss(Tape& tape, const Tensor& logits, std::span<const std::size_t> labels, double epsilon) {
  return ops::smoothed_cross_entropy(tape, logits, labels, epsilon);
}

std::vector<Tensor> edge_terms(Tape& tape, const Tensor& edges, const ModelParams& params, const ModelConfig& cfg) {
  const std::size_t np = cfg.node_dim + cfg.pos_dim;
  std::vector<Tensor> out;
  for (const auto& mlp : params.head_edge)
    out.push_back(ops::matmul(tape, edges, ops::row_slice(tape, mlp.first.weight, np, np + cfg.edge_dim)));
  return out;
}

Tensor propagate(Tape& tape, const Tensor& nodes, const Tensor& positions, const std::vector<Tensor>& terms,
                 const ReadingSequence& order, std::size_t step, const ModelParams& params, const ModelConfig& cfg,
                 std::vector<Tensor>* alpha) {
  const std::size_t l = nodes.dim(0);
  const std::size_t np = cfg.node_dim + cfg.pos_dim;
  const auto node_pos = ops::concat(tape, {nodes, positions}, 1);
  std::vector<Tensor> messages;
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const auto& mlp4 = params.head_edge[h];
    // [n_i | p_i | e'_ij | n_j | p_j] W1 split into the sender, edge and receiver row blocks.
    const auto a = ops::matmul(tape, node_pos, ops::row_slice(tape, mlp4.first.weight, 0, np));
    const auto b = ops::matmul(tape, node_pos, ops::row_slice(tape, mlp4.first.weight, np + cfg.edge_dim, 2 * np + cfg.edge_dim));
    const auto hidden = ops::relu(tape, ops::add_bias(tape, ops::pair_sum(tape, a, b, terms[h]), mlp4.first.bias));
    const auto e_h = mlp4.second.forward(tape, hidden);
    const auto score = params.head_score[h].forward(tape, e_h);
    const auto a_h = ops::masked_softmax_rows(tape, ops::reshape(tape, score, {l, l}), order);
    if (alpha) alpha->push_back(a_h);
    messages.push_back(cfg.message_mode == MessageMode::Vector ? ops::attend(tape, a_h, e_h, order)
                                                                : ops::attend(tape, a_h, score, order));
  }
  auto update = params.step_update.at(step).forward(tape, ops::concat(tape, messages, 1));
  if (cfg.use_instance_norm) update = ops::instance_norm(tape, update);
  return ops::add(tape, nodes, ops::relu(tape, update));
}

ForwardResult forward(Tape& tape, const Document& doc, const ModelParams& params, const ModelConfig& cfg,
                      const TextEmbedder& embedder, const GraphPerturbation* perturbation) {
  const std::size_t l = doc.size();
  if (l < 2) throw DegenerateGraphError("a document graph needs at least two regions, got " + std::to_string(l));
  const double width = static_cast<double>(doc.width), height = static_cast<double>(doc.height);

  ForwardResult res;
  auto& st = res.state;
  st.order = reading_order(doc);
  st.text = text_features(tape, doc, st.order, embedder, params.text_proj);
  st.visual = visual_features(tape, doc, params, cfg);
  auto n0 = fuse_rows(tape, st.text, st.visual, params);

  std::vector<BBox> boxes;
  if (perturbation && !perturbation->boxes.empty()) {
    if (perturbation->boxes.size() != l) throw DimensionError("perturbation boxes do not match region count");
    boxes = perturbation->boxes;
  } else {
    for (const auto& r : doc.regions) boxes.push_back(r.bbox);
  }
  if (perturbation && !perturbation->node_keep.empty()) {
    if (perturbation->node_keep.size() != l) throw DimensionError("node dropout mask does not match region count");
    n0 = ops::scale_rows(tape, n0, perturbation->node_keep);
  }
  st.nodes.push_back(n0);
  st.edges = edge_init_rows(tape, spatial_relations(boxes, width, height), params);
  st.positions = pos_embed_rows(tape, boxes, width, height, params, cfg);

  const auto terms = edge_terms(tape, st.edges, params, cfg);
  for (std::size_t k = 0; k < cfg.steps; ++k) {
    st.attention.emplace_back();
    st.nodes.push_back(propagate(tape, st.nodes.back(), st.positions, terms, st.order, k, params, cfg, &st.attention.back()));
  }
  res.logits = classify(tape, st.nodes.back(), params);
  return res;
}

std::vector<std::size_t> region_labels(const Document& doc) {
  std::vector<std::size_t> labels(doc.size());
  for (const auto& r : doc.regions) {
    if (!r.label) throw ContractError("region " + std::to_string(r.id) + " has no label");
    labels.at(r.id) = *r.label;
  }
  return labels;
}

}  // namespace fsdag
