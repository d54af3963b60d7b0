#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dgm/tensor.hpp"

namespace dgm {

struct ParamEntry {
  std::string name;
  Tensor value;
  bool trainable = true;
};

/// Named, insertion-ordered parameter tensors. Names are unique.
class ParamStore {
 public:
  void add(std::string name, Tensor value, bool trainable = true);

  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  Tensor& operator[](std::string_view name);
  const Tensor& operator[](std::string_view name) const;

  ParamEntry& entry(std::size_t i) { return entries_[i]; }
  const ParamEntry& entry(std::size_t i) const { return entries_[i]; }
  std::size_t size() const { return entries_.size(); }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  /// Number of scalars, optionally restricted to trainable entries.
  std::size_t scalar_count(bool trainable_only = true) const;

  /// Entries whose name starts with prefix, with the prefix removed.
  ParamStore extract(std::string_view prefix) const;
  /// Appends every entry of other with prefix prepended to its name.
  void append(const ParamStore& other, std::string_view prefix = "");

  bool operator==(const ParamStore& other) const;

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Name -> tensor map used for gradients and optimizer inputs.
using GradMap = std::map<std::string, Tensor, std::less<>>;

/// Parameter values of type T (Tensor or Var) addressed by store name.
template <class T>
class Bound {
 public:
  Bound(const ParamStore& store, std::vector<T> values)
      : store_(&store), values_(std::move(values)) {}

  const T& operator[](std::string_view name) const {
    return values_[store_->index_of(name)];
  }
  const T& at(std::size_t i) const { return values_[i]; }
  std::size_t size() const { return values_.size(); }
  const ParamStore& store() const { return *store_; }

 private:
  const ParamStore* store_;
  std::vector<T> values_;
};

/// Eager binding: copies of every parameter value.
Bound<Tensor> eager(const ParamStore& store);

}  // namespace dgm
