#include "fsdag/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "fsdag/errors.hpp"
#include "fsdag/rng.hpp"

namespace fsdag {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {
void check_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_to_string(shape));
}
}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  check_shape(shape);
  auto data = std::make_shared<detail::TensorData>();
  data->values.assign(shape_size(shape), value);
  data->shape = std::move(shape);
  data->requires_grad = requires_grad;
  return Tensor(std::move(data));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (shape_size(shape) != values.size())
    throw DimensionError("shape " + shape_to_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  auto data = std::make_shared<detail::TensorData>();
  data->shape = std::move(shape);
  data->values = std::move(values);
  data->requires_grad = requires_grad;
  return Tensor(std::move(data));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  return data_->values[0];
}

std::span<double> Tensor::mutable_grad() const {
  if (data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
  return data_->grad;
}

void Tensor::zero_grad() const {
  if (!data_->grad.empty()) std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  auto data = std::make_shared<detail::TensorData>(*data_);
  return Tensor(std::move(data));
}

Tensor Tensor::detach() const { return from(data_->shape, data_->values, false); }

bool Tape::tracks(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void Tape::record(const Tensor& output, std::function<void()> backward) {
  entries_.push_back({output, std::move(backward)});
}

void Tape::backward(Tensor loss) {
  if (loss.size() != 1) throw ContractError("backward() needs a scalar loss, got " + shape_to_string(loss.shape()));
  if (!loss.requires_grad()) return;
  for (auto& e : entries_) e.output.zero_grad();
  loss.mutable_grad()[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (!it->output.has_grad()) continue;  // nothing downstream used it
    it->backward();
  }
}

void Tape::mix_activation_pattern(std::uint64_t h) {
  activation_signature_ = hash_combine(activation_signature_, h);
}

}  // namespace fsdag
