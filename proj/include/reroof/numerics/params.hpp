#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "reroof/numerics/autodiff.hpp"

namespace reroof::nn {

/// Named trainable tensors plus the Adam state that belongs to them.
///
/// Entries keep insertion order, which is also the checkpoint order.
/// Copying a store deep-copies every parameter node, so a copy never
/// aliases the original's graph leaves.
template <class T>
class BasicParamStore {
public:
  struct Entry {
    std::string name;
    Var<T> var;
    BasicTensor<T> first_moment;
    BasicTensor<T> second_moment;
  };

  BasicParamStore() = default;
  BasicParamStore(BasicParamStore&&) noexcept = default;
  BasicParamStore& operator=(BasicParamStore&&) noexcept = default;

  BasicParamStore(const BasicParamStore& other) : step_(other.step_), index_(other.index_) {
    entries_.reserve(other.entries_.size());
    for (const auto& e : other.entries_) {
      Entry copy{e.name, parameter(e.var.value()), e.first_moment, e.second_moment};
      copy.var.node()->grad = e.var.grad();
      entries_.push_back(std::move(copy));
    }
  }

  BasicParamStore& operator=(const BasicParamStore& other) {
    if (this != &other) {
      BasicParamStore tmp(other);
      *this = std::move(tmp);
    }
    return *this;
  }

  Var<T> add(const std::string& name, BasicTensor<T> init) {
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos) {
      throw PreconditionError("parameter names must be non-empty and free of whitespace: '" +
                              name + "'");
    }
    if (index_.count(name)) throw PreconditionError("duplicate parameter name '" + name + "'");
    const Shape shape = init.shape();
    index_[name] = entries_.size();
    entries_.push_back(
        Entry{name, parameter(std::move(init)), BasicTensor<T>(shape), BasicTensor<T>(shape)});
    return entries_.back().var;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const Var<T>& var(const std::string& name) const { return entry(name).var; }

  const Entry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw PreconditionError("unknown parameter '" + name + "'");
    return entries_[it->second];
  }
  Entry& entry(const std::string& name) {
    return const_cast<Entry&>(std::as_const(*this).entry(name));
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.var.size();
    return n;
  }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }
  std::uint64_t advance_step() { return ++step_; }

  /// Allocates (if needed) and zeroes every parameter gradient.
  void zero_grad() {
    for (auto& e : entries_) {
      auto& n = *e.var.node();
      if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.shape());
      else n.grad.fill(T(0));
    }
  }

  std::vector<BasicTensor<T>> snapshot_values() const {
    std::vector<BasicTensor<T>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.var.value());
    return out;
  }

  void restore_values(const std::vector<BasicTensor<T>>& values) {
    if (values.size() != entries_.size()) {
      throw PreconditionError("restore_values: snapshot has " + std::to_string(values.size()) +
                              " tensors, store has " + std::to_string(entries_.size()));
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      require_shape(values[i].shape(), entries_[i].var.shape(), entries_[i].name.c_str());
      entries_[i].var.node()->value = values[i];
    }
  }

  /// Same names, shapes, values, moments and step, compared bit for bit.
  friend bool bit_identical(const BasicParamStore& a, const BasicParamStore& b) {
    if (a.step_ != b.step_ || a.entries_.size() != b.entries_.size()) return false;
    auto same = [](const BasicTensor<T>& x, const BasicTensor<T>& y) {
      return x.shape() == y.shape() &&
             std::memcmp(x.data(), y.data(), x.size() * sizeof(T)) == 0;
    };
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& ea = a.entries_[i];
      const auto& eb = b.entries_[i];
      if (ea.name != eb.name || !same(ea.var.value(), eb.var.value()) ||
          !same(ea.first_moment, eb.first_moment) || !same(ea.second_moment, eb.second_moment)) {
        return false;
      }
    }
    return true;
  }

private:
  std::vector<Entry> entries_;
  std::uint64_t step_ = 0;
  std::map<std::string, std::size_t> index_;
};

using ParamStore = BasicParamStore<float>;

}  // namespace reroof::nn
