#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fsdag/docmodel.hpp"
#include "fsdag/graphnet.hpp"
#include "fsdag/rng.hpp"
#include "json.hpp"

namespace fsdag {

/// Common OCR character confusions: character -> possible misreadings.
struct ConfusionTable {
  std::map<char, std::vector<std::string>> replacements;

  static ConfusionTable defaults();
  static ConfusionTable from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

/// With probability p, replaces every character that has table entries by a
/// uniformly drawn replacement. One Bernoulli draw per word.
std::string perturb_text(std::string_view word, double p, const ConfusionTable& table, Rng& rng);

/// Applies perturb_text to each space-separated word.
std::string perturb_words(std::string_view text, double p, const ConfusionTable& table, Rng& rng);

/// Each region draws from a stream keyed by (seed, document fingerprint, region id).
Document perturb_document(const Document& doc, double p, const ConfusionTable& table, std::uint64_t seed);

struct ClassScore {
  std::string name;
  double precision = 0, recall = 0, f1 = 0;
  std::size_t support = 0;
};

struct EvalReport {
  std::vector<ClassScore> per_class;  // key classes only (index 1..C-1)
  double macro_f1 = 0;
  std::optional<double> clean_macro_f1;
  std::optional<double> drop;
  std::uint64_t seed = 0;
  double p = 0;

  nlohmann::json to_json() const;
};

/// Node-level scores; macro F1 averages classes 1..C-1 that have support.
EvalReport score_predictions(std::span<const std::size_t> labels, std::span<const std::size_t> predictions,
                             const std::vector<std::string>& class_names);

std::vector<std::size_t> predict(const Document& doc, const ModelParams& params, const ModelConfig& cfg,
                                 const TextEmbedder& embedder);

/// Throws ArgumentError when a document is not fully labeled.
EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg, const TextEmbedder& embedder,
                    const std::vector<Document>& docs);

/// Clean and perturbed evaluation with one model; drop = clean - perturbed.
EvalReport robustness_report(const ModelParams& params, const ModelConfig& cfg, const TextEmbedder& embedder,
                             const std::vector<Document>& docs, double p, const ConfusionTable& table,
                             std::uint64_t seed);

void write_report(const EvalReport& report, const std::filesystem::path& path);

}  // namespace fsdag
