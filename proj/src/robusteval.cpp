#include "fsdag/robusteval.hpp"

#include <algorithm>
#include <fstream>

#include "fsdag/errors.hpp"

namespace fsdag {

using nlohmann::json;

ConfusionTable ConfusionTable::defaults() {
  return {{{'1', {"l", "I"}}, {'l', {"I"}}, {'6', {"b"}}, {'5', {"S"}}, {',', {"."}}}};
}

ConfusionTable ConfusionTable::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("confusion table must be an object of character -> [replacements]");
  ConfusionTable t;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key().size() != 1) throw ConfigError("confusion table key \"" + it.key() + "\" is not a single character");
    try {
      t.replacements[it.key()[0]] = it.value().get<std::vector<std::string>>();
    } catch (const json::exception&) {
      throw ConfigError("confusion table entry \"" + it.key() + "\" must be a list of strings");
    }
  }
  t.validate();
  return t;
}

json ConfusionTable::to_json() const {
  json j = json::object();
  for (const auto& [c, r] : replacements) j[std::string(1, c)] = r;
  return j;
}

void ConfusionTable::validate() const {
  for (const auto& [c, r] : replacements)
    if (r.empty()) throw ConfigError(std::string("confusion table entry '") + c + "' has no replacements");
}

std::string perturb_text(std::string_view word, double p, const ConfusionTable& table, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("perturbation probability must lie in [0, 1]");
  if (!rng.bernoulli(p)) return std::string(word);
  std::string out;
  out.reserve(word.size());
  for (char c : word) {
    const auto it = table.replacements.find(c);
    if (it == table.replacements.end()) {
      out.push_back(c);
    } else {
      out += it->second[rng.uniform_int(it->second.size())];
    }
  }
  return out;
}

std::string perturb_words(std::string_view text, double p, const ConfusionTable& table, Rng& rng) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == ' ') {
      out.push_back(text[i++]);
      continue;
    }
    const std::size_t end = std::min(text.find(' ', i), text.size());
    out += perturb_text(text.substr(i, end - i), p, table, rng);
    i = end;
  }
  return out;
}

Document perturb_document(const Document& doc, double p, const ConfusionTable& table, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("perturbation probability must lie in [0, 1]");
  const Rng root = Rng(seed).derive(document_fingerprint(doc));
  Document out = doc;
  for (auto& r : out.regions) {
    Rng rng = root.derive(r.id);
    r.text = perturb_words(r.text, p, table, rng);
  }
  return out;
}

json EvalReport::to_json() const {
  json per = json::array();
  for (const auto& c : per_class)
    per.push_back({{"name", c.name}, {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support}});
  json j{{"per_class", per}, {"macro_f1", macro_f1}, {"seed", seed}, {"p", p}};
  if (clean_macro_f1) j["clean_macro_f1"] = *clean_macro_f1;
  if (drop) j["drop"] = *drop;
  return j;
}

EvalReport score_predictions(std::span<const std::size_t> labels, std::span<const std::size_t> predictions,
                             const std::vector<std::string>& class_names) {
  if (labels.size() != predictions.size()) throw DimensionError("labels and predictions differ in length");
  const std::size_t n = class_names.size();
  std::vector<std::size_t> tp(n, 0), fp(n, 0), fn(n, 0), support(n, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto y = labels[i], yhat = predictions[i];
    if (y >= n || yhat >= n) throw DomainError("class index out of range");
    ++support[y];
    if (y == yhat) {
      ++tp[y];
    } else {
      ++fp[yhat];
      ++fn[y];
    }
  }
  EvalReport rep;
  double sum = 0;
  std::size_t counted = 0;
  for (std::size_t c = 1; c < n; ++c) {
    ClassScore s;
    s.name = class_names[c];
    s.support = support[c];
    const double t = static_cast<double>(tp[c]);
    s.precision = tp[c] + fp[c] ? t / static_cast<double>(tp[c] + fp[c]) : 0.0;
    s.recall = tp[c] + fn[c] ? t / static_cast<double>(tp[c] + fn[c]) : 0.0;
    s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    if (s.support > 0) {
      sum += s.f1;
      ++counted;
    }
    rep.per_class.push_back(std::move(s));
  }
  rep.macro_f1 = counted ? sum / static_cast<double>(counted) : 0.0;
  return rep;
}

std::vector<std::size_t> predict(const Document& doc, const ModelParams& params, const ModelConfig& cfg,
                                 const TextEmbedder& embedder) {
  Tape tape(false);
  const auto logits = forward(tape, doc, params, cfg, embedder).logits;
  const std::size_t c = logits.dim(1);
  std::vector<std::size_t> out(doc.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (logits.at(i, k) > logits.at(i, best)) best = k;
    out[i] = best;
  }
  return out;
}

EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg, const TextEmbedder& embedder,
                    const std::vector<Document>& docs) {
  std::vector<std::size_t> labels, preds;
  for (const auto& d : docs) {
    if (!d.fully_labeled()) throw ArgumentError("evaluation needs labeled documents");
    if (d.labels.names != cfg.classes) throw ConfigError("document label set does not match the model's classes");
    const auto y = region_labels(d);
    const auto yhat = predict(d, params, cfg, embedder);
    labels.insert(labels.end(), y.begin(), y.end());
    preds.insert(preds.end(), yhat.begin(), yhat.end());
  }
  return score_predictions(labels, preds, cfg.classes);
}

EvalReport robustness_report(const ModelParams& params, const ModelConfig& cfg, const TextEmbedder& embedder,
                             const std::vector<Document>& docs, double p, const ConfusionTable& table,
                             std::uint64_t seed) {
  const auto clean = evaluate(params, cfg, embedder, docs);
  std::vector<Document> noisy;
  noisy.reserve(docs.size());
  for (const auto& d : docs) noisy.push_back(perturb_document(d, p, table, seed));
  auto rep = evaluate(params, cfg, embedder, noisy);
  rep.clean_macro_f1 = clean.macro_f1;
  rep.drop = clean.macro_f1 - rep.macro_f1;
  rep.seed = seed;
  rep.p = p;
  return rep;
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write report " + path.string());
  out << report.to_json().dump(2) << '\n';
}

}  // namespace fsdag
