#pragma once

#include "jdd/tensor.hpp"

#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace jdd {

/// Which trainable symbol an entry holds.
enum class ParamGroup { FilterRaw, FilterScale, PreluSlope, ProjectionGamma, Extrapolation };

std::string_view to_string(ParamGroup g);

/// One named trainable tensor with its gradient and AMSGRAD slots. Stored as
/// shape[0] x prod(shape[1:]) so filter banks are one filter per row.
template <typename Scalar>
struct ParamEntry {
  std::string name;
  ParamGroup group = ParamGroup::FilterRaw;
  std::vector<Index> shape;
  Planes<Scalar> value;
  Planes<Scalar> grad;
  Planes<Scalar> m;
  Planes<Scalar> v;
  Planes<Scalar> vhat;

  Index size() const { return value.size(); }
};

inline std::pair<Index, Index> matrix_extent(const std::vector<Index>& shape) {
  if (shape.empty()) throw std::invalid_argument("parameter shape must not be empty");
  const Index rest = std::accumulate(shape.begin() + 1, shape.end(), Index{1}, std::multiplies<>());
  return {shape[0], rest};
}

/// The named trainable set. Order of insertion is the serialization order.
template <typename Scalar>
class ParameterStore {
 public:
  ParamEntry<Scalar>& add(std::string name, ParamGroup group, std::vector<Index> shape, Planes<Scalar> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    const auto [rows, cols] = matrix_extent(shape);
    if (value.rows() != rows || value.cols() != cols) throw ShapeError("parameter '" + name + "': value does not match shape");
    ParamEntry<Scalar> e;
    e.name = std::move(name);
    e.group = group;
    e.shape = std::move(shape);
    e.value = std::move(value);
    e.grad = Planes<Scalar>::Zero(rows, cols);
    e.m = Planes<Scalar>::Zero(rows, cols);
    e.v = Planes<Scalar>::Zero(rows, cols);
    e.vhat = Planes<Scalar>::Zero(rows, cols);
    index_[e.name] = entries_.size();
    entries_.push_back(std::move(e));
    return entries_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  ParamEntry<Scalar>& operator[](const std::string& name) { return entries_[lookup(name)]; }
  const ParamEntry<Scalar>& operator[](const std::string& name) const { return entries_[lookup(name)]; }

  std::vector<ParamEntry<Scalar>>& entries() { return entries_; }
  const std::vector<ParamEntry<Scalar>>& entries() const { return entries_; }

  void zero_grad() {
    for (auto& e : entries_) e.grad.setZero();
  }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& e : entries_) n += e.size();
    return n;
  }

  Index scalar_count(ParamGroup g) const {
    Index n = 0;
    for (const auto& e : entries_)
      if (e.group == g) n += e.size();
    return n;
  }

  /// Concatenation of all values (or gradients) in entry order.
  Vector<Scalar> flat_values() const { return flatten([](const auto& e) -> const Planes<Scalar>& { return e.value; }); }
  Vector<Scalar> flat_grads() const { return flatten([](const auto& e) -> const Planes<Scalar>& { return e.grad; }); }

  void set_flat_values(const Vector<Scalar>& flat) {
    if (flat.size() != scalar_count()) throw ShapeError("set_flat_values: size mismatch");
    Index off = 0;
    for (auto& e : entries_) {
      Eigen::Map<Vector<Scalar>>(e.value.data(), e.size()) = flat.segment(off, e.size());
      off += e.size();
    }
  }

  template <typename NewScalar>
  ParameterStore<NewScalar> cast() const {
    ParameterStore<NewScalar> out;
    for (const auto& e : entries_) {
      auto& n = out.add(e.name, e.group, e.shape, e.value.template cast<NewScalar>());
      n.grad = e.grad.template cast<NewScalar>();
      n.m = e.m.template cast<NewScalar>();
      n.v = e.v.template cast<NewScalar>();
      n.vhat = e.vhat.template cast<NewScalar>();
    }
    return out;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named '" + name + "'");
    return it->second;
  }

  template <typename F>
  Vector<Scalar> flatten(F field) const {
    Vector<Scalar> out(scalar_count());
    Index off = 0;
    for (const auto& e : entries_) {
      const Planes<Scalar>& p = field(e);
      out.segment(off, e.size()) = Eigen::Map<const Vector<Scalar>>(p.data(), p.size());
      off += e.size();
    }
    return out;
  }

  std::vector<ParamEntry<Scalar>> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace jdd
