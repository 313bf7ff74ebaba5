#include "odpfl/weights.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace odpfl {

void WeightBundle::add(const std::string& name, Tensor t) {
  if (has(name)) throw std::invalid_argument("weight bundle: duplicate tensor name " + name);
  index_[name] = tensors_.size();
  names_.push_back(name);
  tensors_.push_back(std::move(t));
}

Tensor& WeightBundle::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("weight bundle: no tensor named " + name);
  return tensors_[it->second];
}

const Tensor& WeightBundle::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("weight bundle: no tensor named " + name);
  return tensors_[it->second];
}

size_t WeightBundle::param_count() const {
  size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

WeightBundle WeightBundle::zeros_like(const WeightBundle& other) {
  WeightBundle out;
  for (size_t i = 0; i < other.size(); ++i)
    out.add(other.name(i), Tensor::zeros(other.tensor(i).shape));
  return out;
}

void WeightBundle::check_keys_match(const WeightBundle& other, const std::string& context) const {
  std::string missing;
  for (const auto& n : names_)
    if (!other.has(n)) missing += (missing.empty() ? "" : ", ") + n;
  std::string extra;
  for (const auto& n : other.names_)
    if (!has(n)) extra += (extra.empty() ? "" : ", ") + n;
  if (!missing.empty() || !extra.empty()) {
    std::string msg = context + ": bundle keys do not match";
    if (!missing.empty()) msg += "; missing [" + missing + "]";
    if (!extra.empty()) msg += "; unexpected [" + extra + "]";
    throw std::invalid_argument(msg);
  }
}

namespace {

template <class F>
WeightBundle zip(const WeightBundle& a, const WeightBundle& b, const char* ctx, F&& f) {
  a.check_keys_match(b, ctx);
  WeightBundle out;
  for (size_t i = 0; i < a.size(); ++i) {
    const Tensor& ta = a.tensor(i);
    const Tensor& tb = b.at(a.name(i));
    Tensor t = ta;
    t.node = -1;
    for (size_t k = 0; k < t.size(); ++k) t.v[k] = f(ta.v[k], tb.v[k]);
    out.add(a.name(i), std::move(t));
  }
  return out;
}

}  // namespace

WeightBundle bundle_add(const WeightBundle& a, const WeightBundle& b) {
  return zip(a, b, "bundle_add", [](double x, double y) { return x + y; });
}

WeightBundle bundle_sub(const WeightBundle& a, const WeightBundle& b) {
  return zip(a, b, "bundle_sub", [](double x, double y) { return x - y; });
}

WeightBundle bundle_scale(const WeightBundle& a, double c) {
  WeightBundle out;
  for (size_t i = 0; i < a.size(); ++i) {
    Tensor t = a.tensor(i);
    t.node = -1;
    for (auto& x : t.v) x *= c;
    out.add(a.name(i), std::move(t));
  }
  return out;
}

void bundle_axpy(WeightBundle& a, double c, const WeightBundle& b) {
  a.check_keys_match(b, "bundle_axpy");
  for (size_t i = 0; i < a.size(); ++i) {
    Tensor& ta = a.tensor(i);
    const Tensor& tb = b.at(a.name(i));
    for (size_t k = 0; k < ta.size(); ++k) ta.v[k] += c * tb.v[k];
  }
}

double bundle_l2_norm(const WeightBundle& a) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    for (double x : a.tensor(i).v) acc += x * x;
  return std::sqrt(acc);
}

bool bundle_bitwise_equal(const WeightBundle& a, const WeightBundle& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a.name(i) != b.name(i)) return false;
    const Tensor& ta = a.tensor(i);
    const Tensor& tb = b.tensor(i);
    if (ta.shape != tb.shape) return false;
    if (std::memcmp(ta.v.data(), tb.v.data(), ta.size() * sizeof(double)) != 0) return false;
  }
  return true;
}

WeightBundle sgd_step(const WeightBundle& params, const WeightBundle& grads, double lr,
                      double momentum, WeightBundle* velocity) {
  params.check_keys_match(grads, "sgd_step");
  if (lr < 0.0) throw std::invalid_argument("sgd_step: negative learning rate");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("sgd_step: momentum outside [0, 1)");
  if (momentum > 0.0 && !velocity)
    throw std::invalid_argument("sgd_step: momentum requires a velocity buffer");
  if (velocity && velocity->size() == 0) *velocity = WeightBundle::zeros_like(params);
  WeightBundle out;
  for (size_t i = 0; i < params.size(); ++i) {
    const std::string& name = params.name(i);
    const Tensor& g = grads.at(name);
    Tensor p = params.tensor(i);
    p.node = -1;
    if (velocity) {
      Tensor& vel = velocity->at(name);
      for (size_t k = 0; k < p.size(); ++k) {
        vel.v[k] = momentum * vel.v[k] + g.v[k];
        p.v[k] -= lr * vel.v[k];
      }
    } else {
      for (size_t k = 0; k < p.size(); ++k) p.v[k] -= lr * g.v[k];
    }
    out.add(name, std::move(p));
  }
  return out;
}

}  // namespace odpfl
