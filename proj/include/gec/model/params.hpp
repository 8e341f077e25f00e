#pragma once

#include <Eigen/Core>
#include <Eigen/StdVector>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gec/common/errors.hpp"
#include "gec/model/config.hpp"

namespace gec::model {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <typename T>
using MatrixMap = Eigen::Map<Matrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const Matrix<T>>;

/// Aligned so vectorized reductions see the same layout on every allocation;
/// otherwise results drift in the last bits between runs.
template <typename T>
using Storage = std::vector<T, Eigen::aligned_allocator<T>>;

/// A named 2-D tensor; vectors are stored as 1 x n.
template <typename T>
struct Tensor {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  Storage<T> data;

  MatrixMap<T> mat() { return MatrixMap<T>(data.data(), rows, cols); }
  ConstMatrixMap<T> mat() const { return ConstMatrixMap<T>(data.data(), rows, cols); }
  std::size_t numel() const { return data.size(); }
};

/// Ordered collection of named tensors. Order is fixed by the model config,
/// so two sets built from the same config line up index by index.
template <typename T>
class ParamSet {
 public:
  ParamSet() = default;

  Tensor<T>& add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    index_.emplace(name, tensors_.size());
    tensors_.push_back({std::move(name), rows, cols, Storage<T>(static_cast<std::size_t>(rows * cols), T(0))});
    return tensors_.back();
  }

  Tensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor<T>& at(const std::string& name) { return tensors_.at(lookup(name)); }
  const Tensor<T>& at(const std::string& name) const { return tensors_.at(lookup(name)); }
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t size() const { return tensors_.size(); }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  /// Same names and shapes, all zeros.
  ParamSet zeros_like() const {
    ParamSet out;
    for (const auto& t : tensors_) out.add(t.name, t.rows, t.cols);
    return out;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& t : tensors_) {
      auto& o = out.add(t.name, t.rows, t.cols);
      for (std::size_t i = 0; i < t.data.size(); ++i) o.data[i] = static_cast<U>(t.data[i]);
    }
    return out;
  }

  void set_zero() {
    for (auto& t : tensors_) std::fill(t.data.begin(), t.data.end(), T(0));
  }

  bool same_layout(const ParamSet& o) const {
    if (o.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i)
      if (o[i].name != tensors_[i].name || o[i].rows != tensors_[i].rows || o[i].cols != tensors_[i].cols)
        return false;
    return true;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw RangeError("no parameter named '" + name + "'");
    return it->second;
  }

  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

using ModelParams = ParamSet<float>;

/// Parameter layout for `cfg`, zero-filled.
template <typename T>
ParamSet<T> make_layout(const ModelConfig& cfg);

/// Scaled uniform fan-in initialization: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// layer-norm gains 1, biases 0.
template <typename T>
ParamSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace gec::model
