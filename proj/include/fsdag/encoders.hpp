#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fsdag/docmodel.hpp"
#include "fsdag/layers.hpp"
#include "fsdag/tensor.hpp"

namespace fsdag {

enum class TextPooling { Off, First, Mean };
enum class TextEncoderKind { HashNgram, ExternalFile };

std::string to_string(TextPooling p);
TextPooling parse_text_pooling(std::string_view s);
std::string to_string(TextEncoderKind k);
TextEncoderKind parse_text_encoder_kind(std::string_view s);

struct TextEncoderConfig {
  TextEncoderKind kind = TextEncoderKind::HashNgram;
  std::size_t raw_dim = 256;
  std::size_t text_dim = 32;
  std::vector<std::size_t> ngram_sizes{2, 3};
  std::uint64_t hash_seed = 0x5EEDu;
  // Off embeds the whole word as one token, without sub-token splitting.
  TextPooling pooling = TextPooling::Mean;
  std::string external_path;
};

struct VisualEncoderConfig {
  std::vector<std::size_t> channels{8, 16, 16};
  std::size_t roi_grid = 3;

  std::size_t out_dim() const { return channels.back(); }
};

/// Character n-grams over "^" + text + "$", size-major, left to right.
std::vector<std::string> subtokenize(std::string_view text, std::span<const std::size_t> sizes);

/// Deterministic N(0, 1/sqrt(dim)) vector seeded from a hash of the sub-token.
std::vector<double> hash_embed(std::string_view subtoken, std::uint64_t seed, std::size_t dim);

std::vector<double> pool_subtokens(const std::vector<std::vector<double>>& embs);

class ExternalEmbeddings {
 public:
  static ExternalEmbeddings load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  void insert(std::string text, std::vector<double> vec);
  const std::vector<double>& lookup(std::string_view text) const;
  bool contains(std::string_view text) const;
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return table_.size(); }

 private:
  std::map<std::string, std::vector<double>, std::less<>> table_;
  std::size_t dim_ = 0;
};

/// Frozen part of the text encoder: text to pooled raw embedding, cached.
class TextEmbedder {
 public:
  explicit TextEmbedder(TextEncoderConfig cfg);
  TextEmbedder(TextEncoderConfig cfg, std::shared_ptr<const ExternalEmbeddings> external);

  const TextEncoderConfig& config() const { return cfg_; }
  std::vector<double> embed(std::string_view text) const;
  // L x raw_dim constant matrix, row r for region id r.
  Tensor embed_regions(const Document& doc, const ReadingSequence& order) const;

 private:
  std::vector<double> compute(std::string_view text) const;

  TextEncoderConfig cfg_;
  std::shared_ptr<const ExternalEmbeddings> external_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, std::vector<double>> cache_;
};

struct ConvLayer {
  Tensor weight;  // out x in x 3 x 3
  Tensor bias;    // out
};

struct VisualParams {
  std::vector<ConvLayer> layers;

  static VisualParams init(const VisualEncoderConfig& cfg, Rng& rng);
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// t_i = MLP1(pooled embedding); rows in region-id order.
Tensor text_features(Tape& tape, const Document& doc, const ReadingSequence& order, const TextEmbedder& embedder,
                     const Mlp& projection);

/// Three stride-2 3x3 convolutions with ReLU. Throws SizeError below 8x8.
Tensor conv_feature_map(Tape& tape, const Image& raster, const VisualParams& params);

/// RoI pooling: grid x grid bilinear samples at cell centers, averaged per
/// channel. `fmap` is C x h x w; boxes are in page coordinates.
Tensor roi_align(Tape& tape, const Tensor& fmap, const BBox& box, double width, double height, std::size_t grid = 3);
Tensor roi_align_rows(Tape& tape, const Tensor& fmap, std::span<const BBox> boxes, double width, double height,
                      std::size_t grid = 3);

}  // namespace fsdag
