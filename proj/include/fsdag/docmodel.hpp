#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fsdag {

struct BBox {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double center_x() const { return 0.5 * (x0 + x1); }
  double center_y() const { return 0.5 * (y0 + y1); }
  double area() const { return width() * height(); }
  bool operator==(const BBox&) const = default;
};

struct TextRegion {
  std::size_t id = 0;
  std::string text;
  BBox bbox;
  std::optional<std::size_t> label;
  bool operator==(const TextRegion&) const = default;
};

/// Grayscale raster, row-major, values in [0, 1].
struct Image {
  std::size_t height = 0, width = 0;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  bool operator==(const Image&) const = default;
};

/// Ordered class names; index 0 is the background ("other") class.
struct LabelSet {
  std::vector<std::string> names;

  std::size_t size() const { return names.size(); }
  bool operator==(const LabelSet&) const = default;
};

struct Document {
  std::size_t width = 0, height = 0;
  std::optional<Image> raster;
  LabelSet labels;
  std::vector<TextRegion> regions;  // regions[i].id == i after validation

  std::size_t size() const { return regions.size(); }
  bool fully_labeled() const;
  bool operator==(const Document&) const = default;
};

/// Permutation of region ids in reading order.
using ReadingSequence = std::vector<std::size_t>;

// Throws ValidationError naming the offending region. Regions stored out of
// id order are accepted and sorted by id.
void validate(Document& doc);
void validate_labels(const LabelSet& labels);

/// Reads the JSON document format plus its optional PGM raster.
Document load_document(const std::filesystem::path& path);
/// Writes `path` and, when the document has a raster, a sibling .pgm file.
void save_document(const Document& doc, const std::filesystem::path& path);

Image read_pgm(const std::filesystem::path& path);
void write_pgm(const Image& image, const std::filesystem::path& path);
// Rounds to the nearest 8-bit level, so write_pgm/read_pgm round-trips exactly.
Image quantize_8bit(const Image& image);

/// Line banding: two regions share a line when their vertical centers are
/// closer than half the smaller box height (transitively). Lines are ordered
/// top to bottom by mean center, regions left to right by x0, ties by id.
ReadingSequence reading_order(const Document& doc);

/// floor(K * coord / extent) clamped to K-1. Throws DomainError outside [0, extent].
std::size_t grid_bin(double coord, double extent, std::size_t k);

/// [dcx/W, dcy/H, wa/W, ha/H, wb/W, hb/H] with d = center(b) - center(a).
std::array<double, 6> spatial_relation(const BBox& a, const BBox& b, double width, double height);

/// Content hash over extent, texts and boxes; stable under storage order.
std::uint64_t document_fingerprint(const Document& doc);

}  // namespace fsdag
