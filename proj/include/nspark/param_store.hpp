#pragma once

#include "nspark/tape.hpp"

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace nspark {

/// Optimizer parameter group. `neuron` covers PLIF decay/threshold parameters,
/// modulation biases and halt parameters.
enum class ParamGroup { weight, neuron };

const char* to_string(ParamGroup g);

/// Named tensor registry with gradient slots. Insertion order is the
/// canonical parameter order (checkpoints, optimizer state, reductions).
template <typename Scalar>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ParamGroup group = ParamGroup::weight;
    Tensor<Scalar> value;
    Tensor<Scalar> grad;
  };

  std::size_t add(std::string name, Tensor<Scalar> value, ParamGroup group) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    const std::size_t idx = entries_.size();
    index_.emplace(name, idx);
    Tensor<Scalar> grad(value.shape());
    entries_.push_back(Entry{std::move(name), group, std::move(value), std::move(grad)});
    return idx;
  }

  std::optional<std::size_t> find(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index(const std::string& name) const {
    const auto i = find(name);
    if (!i) throw std::out_of_range("unknown parameter: " + name);
    return *i;
  }

  Entry& at(const std::string& name) { return entries_[index(name)]; }
  const Entry& at(const std::string& name) const { return entries_[index(name)]; }
  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  Index total_elements() const {
    Index n = 0;
    for (const Entry& e : entries_) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (Entry& e : entries_) e.grad = Tensor<Scalar>(e.value.shape());
  }

  template <typename Other>
  ParamStore<Other> cast() const {
    ParamStore<Other> out;
    for (const Entry& e : entries_) out.add(e.name, e.value.template cast<Other>(), e.group);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Binds store parameters to a tape as gradient-receiving leaves, lazily on
/// first use, and hands the resulting gradients back in store order.
template <typename Scalar>
class ParamBinding {
 public:
  ParamBinding(Tape<Scalar>& tape, const ParamStore<Scalar>& store)
      : tape_(&tape), store_(&store), nodes_(store.size(), -1) {}

  Var<Scalar> operator()(const std::string& name) { return get(store_->index(name)); }

  Var<Scalar> get(std::size_t idx) {
    if (nodes_[idx] < 0) nodes_[idx] = tape_->variable((*store_)[idx].value).id;
    return {tape_, nodes_[idx]};
  }

  Tape<Scalar>& tape() { return *tape_; }
  const ParamStore<Scalar>& store() const { return *store_; }

  /// sink[i] += d loss / d param i, for parameters used on the tape.
  void add_grads_to(std::vector<Tensor<Scalar>>& sink) {
    if (sink.size() != nodes_.size()) sink.resize(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (sink[i].shape() != (*store_)[i].value.shape()) sink[i] = Tensor<Scalar>((*store_)[i].value.shape());
      if (nodes_[i] >= 0) sink[i].array() += tape_->grad(nodes_[i]).array();
    }
  }

  /// store.grad += d loss / d param.
  void add_grads_to(ParamStore<Scalar>& store) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i] >= 0) store[i].grad.array() += tape_->grad(nodes_[i]).array();
    }
  }

 private:
  Tape<Scalar>* tape_;
  const ParamStore<Scalar>* store_;
  std::vector<int> nodes_;
};

}  // namespace nspark
