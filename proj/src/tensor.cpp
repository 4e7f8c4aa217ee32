#include "edsam/tensor.hpp"

#include <cmath>
#include <string>

#include "edsam/error.hpp"

namespace edsam {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_product(shape_)) {
    throw InvalidInput("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape product " + std::to_string(shape_product(shape_)));
  }
}

Tensor Tensor::vector(std::vector<double> data) {
  const std::size_t n = data.size();
  return Tensor({n}, std::move(data));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor({rows, cols}, fill);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw InvalidInput("tensor axis out of range");
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  if (shape_.size() != 2) throw InvalidInput("expected a rank-1 or rank-2 tensor");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() == 1) return shape_[0];
  if (shape_.size() != 2) throw InvalidInput("expected a rank-1 or rank-2 tensor");
  return shape_[1];
}

std::span<double> Tensor::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor stack_rows(std::span<const Tensor> rows) {
  if (rows.empty()) throw InvalidInput("cannot stack zero rows");
  const std::size_t d = rows.front().size();
  Tensor out = Tensor::matrix(rows.size(), d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != d) throw InvalidInput("stack_rows: ragged rows");
    auto dst = out.row(r);
    auto src = rows[r].data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericalError(std::string("non-finite values in ") + what);
}

}  // namespace edsam
