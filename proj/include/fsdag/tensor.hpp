#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fsdag {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

namespace detail {
struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first touched
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, which is what
/// lets the tape write gradients back into parameters. Use clone() for a
/// deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return data_->shape.at(axis); }
  std::size_t size() const { return data_->values.size(); }

  std::span<const double> values() const { return data_->values; }
  std::span<double> mutable_values() { return data_->values; }
  double operator[](std::size_t i) const { return data_->values[i]; }
  double at(std::size_t row, std::size_t col) const {
    return data_->values[row * data_->shape.back() + col];
  }
  double item() const;

  bool requires_grad() const { return data_->requires_grad; }
  void set_requires_grad(bool on) { data_->requires_grad = on; }

  bool has_grad() const { return !data_->grad.empty(); }
  std::span<const double> grad() const { return data_->grad; }
  // Allocates a zeroed gradient buffer on first use.
  std::span<double> mutable_grad() const;
  void zero_grad() const;

  Tensor clone() const;
  Tensor detach() const;  // deep copy without grad tracking
  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData> data) : data_(std::move(data)) {}
  std::shared_ptr<detail::TensorData> data_;
};

/// Ordered record of differentiable operations. Each op appends a closure
/// that propagates its output gradient to its inputs; backward() replays them
/// in exact reverse order. A non-recording tape (inference) keeps nothing.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return entries_.size(); }

  // True when an op over these inputs must be recorded.
  bool tracks(std::initializer_list<const Tensor*> inputs) const;

  void record(const Tensor& output, std::function<void()> backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  /// Intermediate gradients are reset first, so calling twice adds the
  /// parameter gradients twice.
  void backward(Tensor loss);

  // Fingerprint of every ReLU on/off pattern seen by this tape. Used by the
  // gradient checker to detect finite-difference steps that cross a kink.
  void set_pattern_tracking(bool on) { pattern_tracking_ = on; }
  bool pattern_tracking() const { return pattern_tracking_; }
  void mix_activation_pattern(std::uint64_t h);
  std::uint64_t activation_signature() const { return activation_signature_; }

 private:
  struct Entry {
    Tensor output;
    std::function<void()> backward;
  };
  bool recording_;
  bool pattern_tracking_ = false;
  std::vector<Entry> entries_;
  std::uint64_t activation_signature_ = 0x84222325CBF29CE4ULL;
};

}  // namespace fsdag
