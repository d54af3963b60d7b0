#include "dgm/param_store.hpp"

#include "dgm/error.hpp"

namespace dgm {

void ParamStore::add(std::string name, Tensor value, bool trainable) {
  if (index_.contains(name)) throw Error("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), trainable});
}

bool ParamStore::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

std::size_t ParamStore::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw Error("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

Tensor& ParamStore::operator[](std::string_view name) {
  return entries_[index_of(name)].value;
}

const Tensor& ParamStore::operator[](std::string_view name) const {
  return entries_[index_of(name)].value;
}

std::size_t ParamStore::scalar_count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (!trainable_only || e.trainable) n += e.value.numel();
  }
  return n;
}

ParamStore ParamStore::extract(std::string_view prefix) const {
  ParamStore out;
  for (const auto& e : entries_) {
    if (e.name.starts_with(prefix)) {
      out.add(e.name.substr(prefix.size()), e.value, e.trainable);
    }
  }
  return out;
}

void ParamStore::append(const ParamStore& other, std::string_view prefix) {
  for (const auto& e : other) add(std::string(prefix) + e.name, e.value, e.trainable);
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.trainable != b.trainable || !(a.value == b.value)) {
      return false;
    }
  }
  return true;
}

Bound<Tensor> eager(const ParamStore& store) {
  std::vector<Tensor> values;
  values.reserve(store.size());
  for (const auto& e : store) values.push_back(e.value);
  return Bound<Tensor>(store, std::move(values));
}

}  // namespace dgm
