#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fsdag/docmodel.hpp"

namespace fsdag {

struct FieldSpec {
  std::string name;
  double anchor_x = 0, anchor_y = 0;  // nominal top-left corner of the value box
  std::vector<std::string> vocabulary;
};

/// Form layout: one value region per field, placed at its anchor plus uniform
/// jitter, and `distractor_count` unlabeled words scattered on the page.
struct TemplateSpec {
  std::string id;
  std::size_t width = 0, height = 0;
  std::vector<FieldSpec> fields;  // class c is fields[c - 1]
  std::vector<std::string> background_vocabulary;
  double jitter = 0;
  std::size_t distractor_count = 0;
  double char_width = 6, line_height = 12;

  std::size_t n_classes() const { return fields.size(); }
  LabelSet label_set() const;
};

TemplateSpec builtin_template(std::string_view name);
std::vector<std::string> builtin_template_names();
TemplateSpec load_template(const std::filesystem::path& path);
void save_template(const TemplateSpec& spec, const std::filesystem::path& path);

// Throws GenerationError when anchors leave the page or their jitter ranges overlap.
void validate_template(const TemplateSpec& spec);

// Fill intensity of class c boxes: 0.2 + 0.6 * (c mod 8) / 8.
double class_intensity(std::size_t label);

/// Pure function of (spec, n_docs, seed).
std::vector<Document> generate(const TemplateSpec& spec, std::size_t n_docs, std::uint64_t seed);

struct Split {
  std::vector<std::size_t> train, test;  // indices into the input list
};
/// Seeded shuffle, then prefix/suffix split. Throws ArgumentError when n_train >= count.
Split split(std::size_t count, std::size_t n_train, std::uint64_t seed);

struct CorpusManifest {
  std::uint64_t seed = 0;
  std::string template_id;
  std::size_t n_train = 0, n_test = 0;
  std::vector<std::string> files;
};

struct Corpus {
  CorpusManifest manifest;
  std::vector<Document> documents;
};

// Writes doc_NNNN.json/.pgm pairs plus manifest.json into `dir`.
void write_corpus(const std::filesystem::path& dir, const std::vector<Document>& docs, const CorpusManifest& manifest);
Corpus read_corpus(const std::filesystem::path& dir);

}  // namespace fsdag
