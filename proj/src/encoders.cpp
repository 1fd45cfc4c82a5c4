#include "fsdag/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "fsdag/errors.hpp"
#include "fsdag/ops.hpp"
#include "fsdag/rng.hpp"
#include "json.hpp"

namespace fsdag {

using nlohmann::json;

std::string to_string(TextPooling p) {
  switch (p) {
    case TextPooling::Off: return "off";
    case TextPooling::First: return "first";
    case TextPooling::Mean: return "mean";
  }
  return "?";
}

TextPooling parse_text_pooling(std::string_view s) {
  if (s == "off") return TextPooling::Off;
  if (s == "first") return TextPooling::First;
  if (s == "mean") return TextPooling::Mean;
  throw ConfigError("unknown text pooling \"" + std::string(s) + "\" (expected off, first or mean)");
}

std::string to_string(TextEncoderKind k) { return k == TextEncoderKind::HashNgram ? "hash_ngram" : "external_file"; }

TextEncoderKind parse_text_encoder_kind(std::string_view s) {
  if (s == "hash_ngram") return TextEncoderKind::HashNgram;
  if (s == "external_file") return TextEncoderKind::ExternalFile;
  throw ConfigError("unknown text encoder \"" + std::string(s) + "\" (expected hash_ngram or external_file)");
}

std::vector<std::string> subtokenize(std::string_view text, std::span<const std::size_t> sizes) {
  if (sizes.empty()) throw ContractError("subtokenize: no n-gram sizes");
  const std::string padded = "^" + std::string(text) + "$";
  if (text.size() < *std::min_element(sizes.begin(), sizes.end())) return {padded};
  std::vector<std::string> out;
  for (auto n : sizes) {
    if (n == 0) throw ContractError("subtokenize: n-gram size 0");
    for (std::size_t i = 0; i + n <= padded.size(); ++i) out.push_back(padded.substr(i, n));
  }
  return out;
}

std::vector<double> hash_embed(std::string_view subtoken, std::uint64_t seed, std::size_t dim) {
  Rng rng(hash_string(subtoken, seed));
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> v(dim);
  for (auto& x : v) x = rng.normal(0.0, sd);
  return v;
}

std::vector<double> pool_subtokens(const std::vector<std::vector<double>>& embs) {
  if (embs.empty()) throw ContractError("pool_subtokens: empty list");
  std::vector<double> out(embs[0].size(), 0.0);
  for (const auto& e : embs) {
    if (e.size() != out.size()) throw DimensionError("pool_subtokens: mixed embedding sizes");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += e[i];
  }
  const double n = static_cast<double>(embs.size());
  for (auto& x : out) x /= n;
  return out;
}

ExternalEmbeddings ExternalEmbeddings::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open embedding file " + path.string());
  std::set<std::string> keys;
  std::string duplicate;
  const json::parser_callback_t check = [&](int depth, json::parse_event_t event, json& parsed) {
    if (depth == 1 && event == json::parse_event_t::key && !keys.insert(parsed.get<std::string>()).second)
      duplicate = parsed.get<std::string>();
    return true;
  };
  json j;
  try {
    j = json::parse(in, check);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!duplicate.empty()) throw FormatError(path.string() + ": duplicate key \"" + duplicate + "\"");
  if (!j.is_object()) throw FormatError(path.string() + ": expected an object of text -> vector");
  ExternalEmbeddings table;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!it.value().is_array()) throw FormatError(path.string() + ": value of \"" + it.key() + "\" is not an array");
    std::vector<double> v;
    try {
      v = it.value().get<std::vector<double>>();
    } catch (const json::exception&) {
      throw FormatError(path.string() + ": value of \"" + it.key() + "\" is not numeric");
    }
    table.insert(it.key(), std::move(v));
  }
  return table;
}

void ExternalEmbeddings::save(const std::filesystem::path& path) const {
  json j = json::object();
  for (const auto& [k, v] : table_) j[k] = v;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  // nlohmann prints doubles with round-trip precision.
  out << j.dump() << '\n';
}

void ExternalEmbeddings::insert(std::string text, std::vector<double> vec) {
  if (vec.empty()) throw FormatError("embedding for \"" + text + "\" is empty");
  if (dim_ == 0) dim_ = vec.size();
  if (vec.size() != dim_)
    throw FormatError("embedding for \"" + text + "\" has " + std::to_string(vec.size()) + " values, expected " +
                      std::to_string(dim_));
  if (!table_.emplace(std::move(text), std::move(vec)).second) throw FormatError("duplicate embedding key");
}

const std::vector<double>& ExternalEmbeddings::lookup(std::string_view text) const {
  const auto it = table_.find(text);
  if (it == table_.end()) throw LookupError("no external embedding for \"" + std::string(text) + "\"");
  return it->second;
}

bool ExternalEmbeddings::contains(std::string_view text) const { return table_.find(text) != table_.end(); }

TextEmbedder::TextEmbedder(TextEncoderConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.kind == TextEncoderKind::ExternalFile) {
    if (cfg_.external_path.empty()) throw ConfigError("external_file text encoder needs an embedding path");
    external_ = std::make_shared<ExternalEmbeddings>(ExternalEmbeddings::load(cfg_.external_path));
    if (external_->dim() != cfg_.raw_dim)
      throw ConfigError("external embeddings have dim " + std::to_string(external_->dim()) + ", config says " +
                        std::to_string(cfg_.raw_dim));
  }
}

TextEmbedder::TextEmbedder(TextEncoderConfig cfg, std::shared_ptr<const ExternalEmbeddings> external)
    : cfg_(std::move(cfg)), external_(std::move(external)) {
  cfg_.kind = TextEncoderKind::ExternalFile;
  if (!external_) throw ConfigError("external embedding table is null");
  if (external_->dim() != cfg_.raw_dim)
    throw ConfigError("external embeddings have dim " + std::to_string(external_->dim()) + ", config says " +
                      std::to_string(cfg_.raw_dim));
}

std::vector<double> TextEmbedder::compute(std::string_view text) const {
  if (external_) return external_->lookup(text);
  switch (cfg_.pooling) {
    case TextPooling::Off:
      return hash_embed(text, cfg_.hash_seed, cfg_.raw_dim);
    case TextPooling::First:
      return hash_embed(subtokenize(text, cfg_.ngram_sizes).front(), cfg_.hash_seed, cfg_.raw_dim);
    case TextPooling::Mean: {
      std::vector<std::vector<double>> embs;
      for (const auto& s : subtokenize(text, cfg_.ngram_sizes)) embs.push_back(hash_embed(s, cfg_.hash_seed, cfg_.raw_dim));
      return pool_subtokens(embs);
    }
  }
  return {};
}

std::vector<double> TextEmbedder::embed(std::string_view text) const {
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(std::string(text)); it != cache_.end()) return it->second;
  }
  auto v = compute(text);
  std::lock_guard lock(mutex_);
  cache_.emplace(std::string(text), v);
  return v;
}

Tensor TextEmbedder::embed_regions(const Document& doc, const ReadingSequence& order) const {
  const std::size_t d = cfg_.raw_dim;
  std::vector<double> raw(doc.size() * d);
  for (auto id : order) {
    const auto v = embed(doc.regions.at(id).text);
    std::copy(v.begin(), v.end(), raw.begin() + static_cast<std::ptrdiff_t>(id * d));
  }
  return Tensor::from({doc.size(), d}, std::move(raw));
}

VisualParams VisualParams::init(const VisualEncoderConfig& cfg, Rng& rng) {
  VisualParams p;
  std::size_t in = 1;
  for (auto out : cfg.channels) {
    p.layers.push_back({glorot_uniform({out, in, 3, 3}, in * 9, out * 9, rng), Tensor::zeros({out}, true)});
    in = out;
  }
  return p;
}

void VisualParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.push_back({prefix + "." + std::to_string(i) + ".weight", layers[i].weight});
    out.push_back({prefix + "." + std::to_string(i) + ".bias", layers[i].bias});
  }
}

Tensor text_features(Tape& tape, const Document& doc, const ReadingSequence& order, const TextEmbedder& embedder,
                     const Mlp& projection) {
  return projection.forward(tape, embedder.embed_regions(doc, order));
}

Tensor conv_feature_map(Tape& tape, const Image& raster, const VisualParams& params) {
  if (raster.height < 8 || raster.width < 8)
    throw SizeError("raster " + std::to_string(raster.height) + "x" + std::to_string(raster.width) +
                    " is smaller than 8x8");
  Tensor x = Tensor::from({1, raster.height, raster.width}, raster.pixels);
  for (const auto& layer : params.layers) x = ops::relu(tape, ops::conv2d(tape, x, layer.weight, layer.bias, 2, 1));
  return x;
}

namespace {

struct Tap {
  std::size_t index;  // y * w + x within one channel
  double weight;
};

// Interpolation taps along one axis for a sample at feature coordinate s.
void axis_taps(double s, std::size_t n, bool thin, std::size_t& i0, std::size_t& i1, double& f) {
  if (thin) {
    i0 = i1 = std::min(n - 1, static_cast<std::size_t>(std::max(0.0, std::floor(s))));
    f = 0.0;
    return;
  }
  const double u = std::clamp(s - 0.5, 0.0, static_cast<double>(n - 1));
  i0 = static_cast<std::size_t>(std::floor(u));
  i1 = std::min(i0 + 1, n - 1);
  f = u - static_cast<double>(i0);
}

std::vector<Tap> roi_taps(const BBox& box, std::size_t h, std::size_t w, double width, double height,
                          std::size_t grid) {
  const double sx = static_cast<double>(w) / width, sy = static_cast<double>(h) / height;
  const double fx0 = box.x0 * sx, fx1 = box.x1 * sx, fy0 = box.y0 * sy, fy1 = box.y1 * sy;
  const bool thin_x = fx1 - fx0 < 1e-6, thin_y = fy1 - fy0 < 1e-6;
  const double g = static_cast<double>(grid), share = 1.0 / (g * g);
  std::vector<Tap> taps;
  taps.reserve(grid * grid * 4);
  for (std::size_t a = 0; a < grid; ++a) {
    const double py = fy0 + (static_cast<double>(a) + 0.5) * (fy1 - fy0) / g;
    std::size_t y0, y1;
    double fy;
    axis_taps(py, h, thin_y, y0, y1, fy);
    for (std::size_t b = 0; b < grid; ++b) {
      const double px = fx0 + (static_cast<double>(b) + 0.5) * (fx1 - fx0) / g;
      std::size_t x0, x1;
      double fx;
      axis_taps(px, w, thin_x, x0, x1, fx);
      taps.push_back({y0 * w + x0, share * (1 - fy) * (1 - fx)});
      taps.push_back({y0 * w + x1, share * (1 - fy) * fx});
      taps.push_back({y1 * w + x0, share * fy * (1 - fx)});
      taps.push_back({y1 * w + x1, share * fy * fx});
    }
  }
  return taps;
}

}  // namespace

Tensor roi_align_rows(Tape& tape, const Tensor& fmap, std::span<const BBox> boxes, double width, double height,
                      std::size_t grid) {
  if (fmap.rank() != 3) throw RankError("roi_align: feature map must be C x h x w, got " + shape_to_string(fmap.shape()));
  if (grid == 0) throw ContractError("roi_align: grid must be positive");
  const std::size_t c = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2), plane = h * w;
  std::vector<std::vector<Tap>> taps;
  taps.reserve(boxes.size());
  for (const auto& b : boxes) taps.push_back(roi_taps(b, h, w, width, height, grid));

  const bool track = tape.tracks({&fmap});
  Tensor out = Tensor::zeros({boxes.size(), c}, track);
  auto o = out.mutable_values();
  const auto f = fmap.values();
  for (std::size_t r = 0; r < boxes.size(); ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0;
      for (const auto& t : taps[r]) acc += t.weight * f[ch * plane + t.index];
      o[r * c + ch] = acc;
    }
  if (track)
    tape.record(out, [fmap, out, taps = std::move(taps), c, plane]() mutable {
      const auto g = out.grad();
      auto gf = fmap.mutable_grad();
      for (std::size_t r = 0; r < taps.size(); ++r)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (const auto& t : taps[r]) gf[ch * plane + t.index] += t.weight * g[r * c + ch];
    });
  return out;
}

Tensor roi_align(Tape& tape, const Tensor& fmap, const BBox& box, double width, double height, std::size_t grid) {
  return ops::reshape(tape, roi_align_rows(tape, fmap, std::span(&box, 1), width, height, grid), {fmap.dim(0)});
}

}  // namespace fsdag
