// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace shallowpi {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// Tensor has reference semantics: copies share storage, which is what lets
/// a recorded backward closure write into the gradient of a parameter that
/// the caller still holds. Use clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  /// Allocates a zero gradient on first use.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  void clear_grad();

  /// Deep copy of data only; the copy does not require grad.
  Tensor clone() const;
  /// Same data viewed under a new shape; shares storage.
  Tensor reshape(Shape shape) const;

  bool same_storage(const Tensor& other) const noexcept {
    return impl_ == other.impl_;
  }

 private:
  struct Impl {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    std::shared_ptr<std::vector<double>> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Ordered record of executed primitive operations. Backward replays the
/// recorded closures in exact reverse order.
class Tape {
 public:
  void record(std::string op_name, std::function<void()> backward_fn);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return entries_.size(); }
  std::vector<std::string> op_names() const;
  void clear() noexcept { entries_.clear(); }

 private:
  struct Entry {
    std::string op_name;
    std::function<void()> backward_fn;
  };
  std::vector<Entry> entries_;
};

/// Installs a tape as the thread's recording target for its lifetime.
/// Operations executed with no active tape are not recorded.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape() noexcept;

}  // namespace shallowpi
