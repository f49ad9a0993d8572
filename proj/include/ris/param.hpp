#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ris/array.hpp"
#include "ris/rng.hpp"

namespace ris {

// A learned weight. grad accumulates across backward calls until zeroed;
// accum is the running sum of squared gradients for Adagrad.
template <typename T>
struct Parameter {
  std::string name;
  Array<T> value;
  Array<T> grad;
  Array<T> accum;

  void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), T(0)); }
};

// Owns all parameters of a model. Registration order is fixed by model
// construction, which makes checkpoint manifests and seeded initialization
// deterministic.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& create(const std::string& name, Array<T> init) {
    RIS_REQUIRE(index_.find(name) == index_.end(),
                "duplicate parameter name: " << name);
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->grad = init;
    std::fill(p->grad.v.begin(), p->grad.v.end(), T(0));
    p->accum = p->grad;
    p->value = std::move(init);
    index_[name] = items_.size();
    items_.push_back(std::move(p));
    return *items_.back();
  }

  Parameter<T>& uniform(const std::string& name, int r, int c, Rng& rng,
                        double scale = 0.08) {
    Array<T> a = Array<T>::mat(r, c);
    for (auto& x : a.v) x = static_cast<T>(rng.uniform(-scale, scale));
    return create(name, std::move(a));
  }

  Parameter<T>& uniform_vec(const std::string& name, int n, Rng& rng,
                            double scale = 0.08) {
    Array<T> a = Array<T>::vec(n);
    for (auto& x : a.v) x = static_cast<T>(rng.uniform(-scale, scale));
    return create(name, std::move(a));
  }

  Parameter<T>& zeros_vec(const std::string& name, int n) {
    return create(name, Array<T>::vec(n));
  }

  Parameter<T>& ones_vec(const std::string& name, int n) {
    return create(name, Array<T>::vec(n, T(1)));
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }

  std::size_t size() const { return items_.size(); }
  Parameter<T>& at(std::size_t i) { return *items_[i]; }
  const Parameter<T>& at(std::size_t i) const { return *items_[i]; }

  void zero_grads() {
    for (auto& p : items_) p->zero_grad();
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : items_) n += p->value.v.size();
    return n;
  }

  bool grads_finite() const {
    for (const auto& p : items_)
      if (!p->grad.all_finite()) return false;
    return true;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> items_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace ris
