#include "fsdag/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "fsdag/errors.hpp"
#include "fsdag/rng.hpp"
#include "json.hpp"

namespace fsdag {

using nlohmann::json;

LabelSet TemplateSpec::label_set() const {
  LabelSet labels;
  labels.names.push_back("other");
  for (const auto& f : fields) labels.names.push_back(f.name);
  return labels;
}

double class_intensity(std::size_t label) { return 0.2 + 0.6 * static_cast<double>(label % 8) / 8.0; }

namespace {

std::string digits(Rng& rng, std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>('0' + rng.uniform_int(10)));
  return s;
}

std::string two_digit(std::uint64_t v) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%02u", static_cast<unsigned>(v));
  return buf;
}

template <typename Make>
std::vector<std::string> vocabulary(Rng& rng, std::size_t n, Make make) {
  std::vector<std::string> out;
  while (out.size() < n) {
    auto s = make(rng);
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
  }
  return out;
}

TemplateSpec make_basic8() {
  Rng rng(0xBA51C8);
  constexpr std::size_t kVocab = 24;
  TemplateSpec t;
  t.id = "basic8";
  t.width = 192;
  t.height = 256;
  t.jitter = 6;
  t.distractor_count = 6;
  t.fields = {
      {"invoice_no", 10, 14, vocabulary(rng, kVocab, [](Rng& r) { return "INV-" + digits(r, 4); })},
      {"date", 112, 14, vocabulary(rng, kVocab, [](Rng& r) {
         return two_digit(1 + r.uniform_int(28)) + "/" + two_digit(1 + r.uniform_int(12)) + "/20" +
                two_digit(10 + r.uniform_int(15));
       })},
      {"vendor", 10, 56,
       {"Acme", "Globex", "Initech", "Umbrella", "Hooli", "Vandelay", "Soylent", "Stark", "Wayne", "Wonka",
        "Tyrell", "Cyberdyne", "Massive", "Oscorp", "Gringotts", "Monarch", "Nakatomi", "Virtucon", "Pendant",
        "Kramerica", "Aperture", "Blue Sun", "Dunder", "Plumbus"}},
      {"phone", 112, 56, vocabulary(rng, kVocab, [](Rng& r) { return "555-" + digits(r, 4); })},
      {"account", 10, 100, vocabulary(rng, kVocab, [](Rng& r) { return "AC" + digits(r, 6); })},
      {"zip", 112, 100, vocabulary(rng, kVocab, [](Rng& r) { return digits(r, 5); })},
      {"tax", 112, 186, vocabulary(rng, kVocab, [](Rng& r) {
         return std::to_string(1 + r.uniform_int(98)) + "." + digits(r, 2);
       })},
      {"total", 112, 220, vocabulary(rng, kVocab, [](Rng& r) {
         return std::to_string(1 + r.uniform_int(9)) + "," + digits(r, 3) + "." + digits(r, 2);
       })},
  };
  t.background_vocabulary = {"Invoice", "Date", "Vendor", "Phone", "Account", "Zip",   "Tax",  "Total",
                             "Thank",   "you",  "Page",   "Notes", "Qty",     "Item",  "Ref",  "Paid",
                             "Due",     "Net",  "15",     "2021",  "Sales",   "Terms", "Bill", "Remit"};
  return t;
}

BBox text_box(const TemplateSpec& spec, const std::string& text, double x0, double y0) {
  return {x0, y0, x0 + spec.char_width * static_cast<double>(text.size()) + 4.0, y0 + spec.line_height};
}

bool overlaps(const BBox& a, const BBox& b, double margin) {
  return a.x0 < b.x1 + margin && b.x0 < a.x1 + margin && a.y0 < b.y1 + margin && b.y0 < a.y1 + margin;
}

json template_to_json(const TemplateSpec& spec) {
  json fields = json::array();
  for (const auto& f : spec.fields)
    fields.push_back({{"name", f.name}, {"anchor", {f.anchor_x, f.anchor_y}}, {"vocabulary", f.vocabulary}});
  return {{"id", spec.id},
          {"width", spec.width},
          {"height", spec.height},
          {"jitter", spec.jitter},
          {"distractor_count", spec.distractor_count},
          {"char_width", spec.char_width},
          {"line_height", spec.line_height},
          {"fields", fields},
          {"background_vocabulary", spec.background_vocabulary}};
}

}  // namespace

TemplateSpec builtin_template(std::string_view name) {
  if (name == "basic8") return make_basic8();
  throw ArgumentError("unknown built-in template \"" + std::string(name) + "\"");
}

std::vector<std::string> builtin_template_names() { return {"basic8"}; }

TemplateSpec load_template(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open template " + path.string());
  try {
    const json j = json::parse(in);
    TemplateSpec t;
    t.id = j.value("id", path.stem().string());
    t.width = j.at("width").get<std::size_t>();
    t.height = j.at("height").get<std::size_t>();
    t.jitter = j.value("jitter", 0.0);
    t.distractor_count = j.value("distractor_count", std::size_t{0});
    t.char_width = j.value("char_width", 6.0);
    t.line_height = j.value("line_height", 12.0);
    for (const auto& f : j.at("fields")) {
      const auto anchor = f.at("anchor").get<std::vector<double>>();
      if (anchor.size() != 2) throw ParseError(path.string() + ": field anchor needs two numbers");
      t.fields.push_back({f.at("name").get<std::string>(), anchor[0], anchor[1],
                          f.at("vocabulary").get<std::vector<std::string>>()});
    }
    t.background_vocabulary = j.value("background_vocabulary", std::vector<std::string>{});
    return t;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void save_template(const TemplateSpec& spec, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << template_to_json(spec).dump(1) << '\n';
}

void validate_template(const TemplateSpec& spec) {
  if (spec.fields.empty()) throw GenerationError("template needs at least one field");
  if (spec.width == 0 || spec.height == 0) throw GenerationError("template page extent must be positive");
  if (spec.distractor_count > 0 && spec.background_vocabulary.empty())
    throw GenerationError("distractors requested but background vocabulary is empty");
  const double w = static_cast<double>(spec.width), h = static_cast<double>(spec.height);
  std::vector<BBox> extents;
  for (const auto& f : spec.fields) {
    if (f.vocabulary.empty()) throw GenerationError("field \"" + f.name + "\" has an empty vocabulary");
    if (f.anchor_x < 0 || f.anchor_y < 0 || f.anchor_x >= w || f.anchor_y >= h)
      throw GenerationError("field \"" + f.name + "\" anchor lies outside the page");
    std::size_t longest = 0;
    for (const auto& s : f.vocabulary) longest = std::max(longest, s.size());
    const BBox widest = text_box(spec, std::string(longest, 'x'), f.anchor_x, f.anchor_y);
    const BBox extent{widest.x0 - spec.jitter, widest.y0 - spec.jitter, widest.x1 + spec.jitter,
                      widest.y1 + spec.jitter};
    if (extent.x0 < 0 || extent.y0 < 0 || extent.x1 > w || extent.y1 > h)
      throw GenerationError("field \"" + f.name + "\" cannot be jittered inside the page");
    for (std::size_t k = 0; k < extents.size(); ++k)
      if (overlaps(extent, extents[k], 0.0))
        throw GenerationError("anchors of \"" + spec.fields[k].name + "\" and \"" + f.name + "\" overlap");
    extents.push_back(extent);
  }
}

std::vector<Document> generate(const TemplateSpec& spec, std::size_t n_docs, std::uint64_t seed) {
  if (n_docs == 0) throw ArgumentError("n_docs must be at least 1");
  validate_template(spec);
  const Rng root(seed);
  std::vector<Document> docs;
  docs.reserve(n_docs);
  for (std::size_t d = 0; d < n_docs; ++d) {
    Rng rng = root.derive(d);
    Document doc;
    doc.width = spec.width;
    doc.height = spec.height;
    doc.labels = spec.label_set();

    std::vector<TextRegion> regions;
    for (std::size_t c = 0; c < spec.fields.size(); ++c) {
      const auto& f = spec.fields[c];
      const auto& text = f.vocabulary[rng.uniform_int(f.vocabulary.size())];
      const double x0 = f.anchor_x + rng.uniform(-spec.jitter, spec.jitter);
      const double y0 = f.anchor_y + rng.uniform(-spec.jitter, spec.jitter);
      regions.push_back({0, text, text_box(spec, text, x0, y0), c + 1});
    }
    for (std::size_t k = 0; k < spec.distractor_count; ++k) {
      const auto& text = spec.background_vocabulary[rng.uniform_int(spec.background_vocabulary.size())];
      const BBox proto = text_box(spec, text, 0, 0);
      if (proto.x1 > static_cast<double>(spec.width) || proto.y1 > static_cast<double>(spec.height))
        throw GenerationError("distractor \"" + text + "\" does not fit on the page");
      bool placed = false;
      for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
        const double x0 = rng.uniform(0.0, static_cast<double>(spec.width) - proto.x1);
        const double y0 = rng.uniform(0.0, static_cast<double>(spec.height) - proto.y1);
        const BBox box = text_box(spec, text, x0, y0);
        if (std::none_of(regions.begin(), regions.end(), [&](const TextRegion& r) { return overlaps(box, r.bbox, 2.0); })) {
          regions.push_back({0, text, box, 0});
          placed = true;
        }
      }
      if (!placed) throw GenerationError("no free space for distractor " + std::to_string(k));
    }
    rng.shuffle(std::span<TextRegion>(regions));
    for (std::size_t i = 0; i < regions.size(); ++i) regions[i].id = i;

    Image raster{spec.height, spec.width, std::vector<double>(spec.width * spec.height, 1.0)};
    for (const auto& r : regions) {
      const double v = class_intensity(*r.label);
      const auto ys = static_cast<std::size_t>(std::floor(r.bbox.y0));
      const auto ye = std::min(spec.height, static_cast<std::size_t>(std::ceil(r.bbox.y1)));
      const auto xs = static_cast<std::size_t>(std::floor(r.bbox.x0));
      const auto xe = std::min(spec.width, static_cast<std::size_t>(std::ceil(r.bbox.x1)));
      for (std::size_t y = ys; y < ye; ++y)
        for (std::size_t x = xs; x < xe; ++x) raster.at(y, x) = v;
    }
    doc.raster = quantize_8bit(raster);
    doc.regions = std::move(regions);
    validate(doc);
    docs.push_back(std::move(doc));
  }
  return docs;
}

Split split(std::size_t count, std::size_t n_train, std::uint64_t seed) {
  if (n_train >= count)
    throw ArgumentError("n_train (" + std::to_string(n_train) + ") must be smaller than the corpus (" +
                        std::to_string(count) + ")");
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  Split s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return s;
}

void write_corpus(const std::filesystem::path& dir, const std::vector<Document>& docs,
                  const CorpusManifest& manifest) {
  std::filesystem::create_directories(dir);
  json files = json::array();
  for (std::size_t i = 0; i < docs.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "doc_%04zu.json", i);
    save_document(docs[i], dir / name);
    files.push_back(name);
  }
  json j{{"seed", manifest.seed},
         {"template", manifest.template_id},
         {"n_docs", docs.size()},
         {"n_train", manifest.n_train},
         {"n_test", manifest.n_test},
         {"files", files}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error("cannot write manifest in " + dir.string());
  out << j.dump(1) << '\n';
}

Corpus read_corpus(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ParseError("no manifest.json in " + dir.string());
  Corpus corpus;
  try {
    const json j = json::parse(in);
    corpus.manifest.seed = j.at("seed").get<std::uint64_t>();
    corpus.manifest.template_id = j.at("template").get<std::string>();
    corpus.manifest.n_train = j.value("n_train", std::size_t{0});
    corpus.manifest.n_test = j.value("n_test", std::size_t{0});
    corpus.manifest.files = j.at("files").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
  for (const auto& f : corpus.manifest.files) corpus.documents.push_back(load_document(dir / f));
  return corpus;
}

}  // namespace fsdag
