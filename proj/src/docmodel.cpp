#include "fsdag/docmodel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "fsdag/errors.hpp"
#include "fsdag/rng.hpp"
#include "json.hpp"

namespace fsdag {

using nlohmann::json;

namespace {

std::string region_name(const TextRegion& r) { return "region " + std::to_string(r.id) + " (\"" + r.text + "\")"; }

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ParseError(where + ": missing field \"" + key + "\"");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(where + ": field \"" + key + "\" has the wrong type (" + e.what() + ")");
  }
}

}  // namespace

bool Document::fully_labeled() const {
  return std::all_of(regions.begin(), regions.end(), [](const TextRegion& r) { return r.label.has_value(); });
}

void validate_labels(const LabelSet& labels) {
  if (labels.size() < 2) throw ValidationError("label set needs a background class and at least one key class");
  std::set<std::string> seen;
  for (const auto& n : labels.names)
    if (!seen.insert(n).second) throw ValidationError("duplicate class name \"" + n + "\"");
}

void validate(Document& doc) {
  if (doc.width == 0 || doc.height == 0) throw ValidationError("document extent must be positive");
  validate_labels(doc.labels);
  std::sort(doc.regions.begin(), doc.regions.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  const double w = static_cast<double>(doc.width), h = static_cast<double>(doc.height);
  for (std::size_t i = 0; i < doc.regions.size(); ++i) {
    const auto& r = doc.regions[i];
    if (r.id != i)
      throw ValidationError("region ids must be 0..L-1; expected " + std::to_string(i) + ", found " +
                            std::to_string(r.id));
    if (blank(r.text)) throw ValidationError(region_name(r) + ": empty text");
    const auto& b = r.bbox;
    if (!(b.x0 < b.x1) || !(b.y0 < b.y1)) throw ValidationError(region_name(r) + ": box must have x0<x1 and y0<y1");
    if (b.x0 < 0 || b.y0 < 0 || b.x1 > w || b.y1 > h)
      throw ValidationError(region_name(r) + ": box lies outside the page");
    if (r.label && *r.label >= doc.labels.size())
      throw ValidationError(region_name(r) + ": label " + std::to_string(*r.label) + " out of range");
  }
  if (doc.raster && (doc.raster->width != doc.width || doc.raster->height != doc.height))
    throw ValidationError("raster size does not match document extent");
}

Document load_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  const std::string where = path.string();
  Document doc;
  doc.width = field<std::size_t>(j, "width", where);
  doc.height = field<std::size_t>(j, "height", where);
  doc.labels.names = field<std::vector<std::string>>(j, "labels", where);
  const auto regions = field<json>(j, "regions", where);
  if (!regions.is_array()) throw ParseError(where + ": \"regions\" must be an array");
  for (std::size_t k = 0; k < regions.size(); ++k) {
    const auto& rj = regions[k];
    const std::string rwhere = where + ": regions[" + std::to_string(k) + "]";
    TextRegion r;
    r.id = field<std::size_t>(rj, "id", rwhere);
    r.text = field<std::string>(rj, "text", rwhere);
    const auto box = field<std::vector<double>>(rj, "bbox", rwhere);
    if (box.size() != 4) throw ParseError(rwhere + ": bbox needs 4 numbers");
    r.bbox = {box[0], box[1], box[2], box[3]};
    if (rj.contains("label") && !rj["label"].is_null()) r.label = field<std::size_t>(rj, "label", rwhere);
    doc.regions.push_back(std::move(r));
  }
  if (j.contains("raster") && !j["raster"].is_null())
    doc.raster = read_pgm(path.parent_path() / field<std::string>(j, "raster", where));
  validate(doc);
  return doc;
}

void save_document(const Document& doc, const std::filesystem::path& path) {
  json j;
  j["width"] = doc.width;
  j["height"] = doc.height;
  if (doc.raster) {
    auto raster_path = path;
    raster_path.replace_extension(".pgm");
    write_pgm(*doc.raster, raster_path);
    j["raster"] = raster_path.filename().string();
  }
  j["labels"] = doc.labels.names;
  json regions = json::array();
  for (const auto& r : doc.regions) {
    json rj{{"id", r.id}, {"text", r.text}, {"bbox", {r.bbox.x0, r.bbox.y0, r.bbox.x1, r.bbox.y1}}};
    if (r.label) rj["label"] = *r.label;
    regions.push_back(std::move(rj));
  }
  j["regions"] = std::move(regions);
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open raster " + path.string());
  auto next_token = [&]() {
    std::string tok;
    while (in >> std::ws && in.peek() == '#') std::getline(in, tok);
    in >> tok;
    return tok;
  };
  if (next_token() != "P5") throw ParseError(path.string() + ": not a binary PGM (P5)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token());
    h = std::stoul(next_token());
    maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    throw ParseError(path.string() + ": malformed PGM header");
  }
  if (maxval != 255) throw ParseError(path.string() + ": only 8-bit PGM is supported");
  in.get();  // single whitespace before the payload
  std::vector<unsigned char> bytes(w * h);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw ParseError(path.string() + ": truncated PGM");
  Image img{h, w, std::vector<double>(w * h)};
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0;
  return img;
}

void write_pgm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0, 1.0) * 255.0));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image quantize_8bit(const Image& image) {
  Image q = image;
  for (auto& v : q.pixels) v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
  return q;
}

ReadingSequence reading_order(const Document& doc) {
  const std::size_t n = doc.regions.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  // Regions indexed by id; storage order does not matter.
  std::vector<const TextRegion*> by_id(n);
  for (const auto& r : doc.regions) by_id.at(r.id) = &r;

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& a = by_id[i]->bbox;
      const auto& b = by_id[j]->bbox;
      if (std::abs(a.center_y() - b.center_y()) < 0.5 * std::min(a.height(), b.height())) {
        const auto ra = find(i), rb = find(j);
        parent[std::max(ra, rb)] = std::min(ra, rb);
      }
    }

  struct Line {
    double mean_cy = 0;
    std::size_t min_id = 0;
    std::vector<std::size_t> members;
  };
  std::vector<Line> lines;
  std::vector<std::size_t> line_of_root(n, SIZE_MAX);
  for (std::size_t i = 0; i < n; ++i) {
    const auto root = find(i);
    if (line_of_root[root] == SIZE_MAX) {
      line_of_root[root] = lines.size();
      lines.push_back({0.0, i, {}});
    }
    lines[line_of_root[root]].members.push_back(i);
  }
  for (auto& line : lines) {
    for (auto id : line.members) line.mean_cy += by_id[id]->bbox.center_y();
    line.mean_cy /= static_cast<double>(line.members.size());
    std::sort(line.members.begin(), line.members.end(), [&](std::size_t a, std::size_t b) {
      const double xa = by_id[a]->bbox.x0, xb = by_id[b]->bbox.x0;
      return xa != xb ? xa < xb : a < b;
    });
  }
  std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) {
    return a.mean_cy != b.mean_cy ? a.mean_cy < b.mean_cy : a.min_id < b.min_id;
  });
  ReadingSequence order;
  order.reserve(n);
  for (const auto& line : lines) order.insert(order.end(), line.members.begin(), line.members.end());
  return order;
}

std::size_t grid_bin(double coord, double extent, std::size_t k) {
  if (k == 0) throw DomainError("grid size must be at least 1");
  if (!(coord >= 0.0 && coord <= extent))
    throw DomainError("coordinate " + std::to_string(coord) + " outside [0, " + std::to_string(extent) + "]");
  const auto bin = static_cast<std::size_t>(std::floor(static_cast<double>(k) * coord / extent));
  return std::min(bin, k - 1);
}

std::array<double, 6> spatial_relation(const BBox& a, const BBox& b, double width, double height) {
  return {(b.center_x() - a.center_x()) / width, (b.center_y() - a.center_y()) / height,
          a.width() / width,                     a.height() / height,
          b.width() / width,                     b.height() / height};
}

std::uint64_t document_fingerprint(const Document& doc) {
  std::vector<const TextRegion*> sorted;
  for (const auto& r : doc.regions) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->id < b->id; });
  std::uint64_t h = hash_combine(doc.width, doc.height);
  for (const auto* r : sorted) {
    h = hash_combine(h, hash_string(r->text));
    for (double v : {r->bbox.x0, r->bbox.y0, r->bbox.x1, r->bbox.y1}) h = hash_combine(h, std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

}  // namespace fsdag
