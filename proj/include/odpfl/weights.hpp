#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "odpfl/tensor.hpp"

namespace odpfl {

// Named collection of tensors in a canonical (insertion) order: one target
// model's parameters, an optimizer's velocity buffers, a gradient set.
class WeightBundle {
 public:
  WeightBundle() = default;

  void add(const std::string& name, Tensor t);

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  size_t size() const { return tensors_.size(); }
  const std::string& name(size_t i) const { return names_[i]; }
  Tensor& tensor(size_t i) { return tensors_[i]; }
  const Tensor& tensor(size_t i) const { return tensors_[i]; }
  const std::vector<std::string>& names() const { return names_; }

  size_t param_count() const;

  static WeightBundle zeros_like(const WeightBundle& other);

  // keys must match exactly; missing keys are listed in the error
  void check_keys_match(const WeightBundle& other, const std::string& context) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, size_t> index_;
};

// elementwise bundle arithmetic (keys must match)
WeightBundle bundle_add(const WeightBundle& a, const WeightBundle& b);
WeightBundle bundle_sub(const WeightBundle& a, const WeightBundle& b);
WeightBundle bundle_scale(const WeightBundle& a, double c);
// a += c * b
void bundle_axpy(WeightBundle& a, double c, const WeightBundle& b);
double bundle_l2_norm(const WeightBundle& a);
bool bundle_bitwise_equal(const WeightBundle& a, const WeightBundle& b);

// p <- p - lr * v  with  v = momentum * v_prev + g.
// `velocity` is the caller-owned momentum state; zeros on first use.
WeightBundle sgd_step(const WeightBundle& params, const WeightBundle& grads, double lr,
                      double momentum, WeightBundle* velocity);

}  // namespace odpfl
