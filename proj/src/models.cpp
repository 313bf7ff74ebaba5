#include "odpfl/models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace odpfl {

namespace {

// uniform init in +-1/sqrt(fan_in), the usual dense-layer default
Tensor init_dense_weight(int fan_in, int fan_out, double gain, Rng& rng) {
  double bound = gain / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros({fan_in, fan_out});
  for (auto& x : t.v) x = rng.uniform(-bound, bound);
  return t;
}

Tensor init_dense_bias(int fan_in, int fan_out, double gain, Rng& rng) {
  double bound = gain / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros({fan_out});
  for (auto& x : t.v) x = rng.uniform(-bound, bound);
  return t;
}

size_t count_params(const std::vector<std::pair<std::string, std::vector<int>>>& shapes) {
  size_t n = 0;
  for (const auto& [name, shape] : shapes) {
    size_t c = 1;
    for (int d : shape) c *= static_cast<size_t>(d);
    n += c;
  }
  return n;
}

void check_bundle_matches(const std::vector<std::pair<std::string, std::vector<int>>>& shapes,
                          const WeightBundle& w, const std::string& context) {
  if (w.size() != shapes.size())
    throw std::invalid_argument(context + ": bundle has " + std::to_string(w.size()) +
                                " tensors, spec expects " + std::to_string(shapes.size()));
  for (const auto& [name, shape] : shapes) {
    if (!w.has(name)) throw std::invalid_argument(context + ": bundle missing tensor " + name);
    if (w.at(name).shape != shape)
      throw std::invalid_argument(context + ": tensor " + name + " has shape " +
                                  w.at(name).shape_str());
  }
}

}  // namespace

// ---- target model ----

std::vector<std::pair<std::string, std::vector<int>>> TargetModelSpec::tensor_shapes() const {
  validate();
  std::vector<std::pair<std::string, std::vector<int>>> shapes;
  int in = input_dim;
  for (size_t i = 0; i < hidden_dims.size(); ++i) {
    shapes.emplace_back("fc" + std::to_string(i) + "_w", std::vector<int>{in, hidden_dims[i]});
    shapes.emplace_back("fc" + std::to_string(i) + "_b", std::vector<int>{hidden_dims[i]});
    in = hidden_dims[i];
  }
  shapes.emplace_back("out_w", std::vector<int>{in, num_classes});
  shapes.emplace_back("out_b", std::vector<int>{num_classes});
  return shapes;
}

size_t TargetModelSpec::param_count() const { return count_params(tensor_shapes()); }

void TargetModelSpec::validate() const {
  if (input_dim <= 0 || num_classes <= 0)
    throw std::invalid_argument("target model: input_dim and num_classes must be positive");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw std::invalid_argument("target model: dropout_rate outside [0, 1)");
  for (int h : hidden_dims)
    if (h <= 0) throw std::invalid_argument("target model: hidden dims must be positive");
}

WeightBundle TargetModelSpec::init_weights(Rng& rng) const {
  WeightBundle out;
  int in = input_dim;
  for (size_t i = 0; i < hidden_dims.size(); ++i) {
    out.add("fc" + std::to_string(i) + "_w", init_dense_weight(in, hidden_dims[i], 1.0, rng));
    out.add("fc" + std::to_string(i) + "_b", init_dense_bias(in, hidden_dims[i], 1.0, rng));
    in = hidden_dims[i];
  }
  out.add("out_w", init_dense_weight(in, num_classes, 1.0, rng));
  out.add("out_b", init_dense_bias(in, num_classes, 1.0, rng));
  return out;
}

Tensor make_dropout_mask(int rows, int cols, double rate, Rng& rng) {
  Tensor mask = Tensor::full({rows, cols}, 1.0);
  if (rate <= 0.0) return mask;
  double keep = 1.0 - rate;
  for (auto& x : mask.v) x = rng.uniform() < rate ? 0.0 : 1.0 / keep;
  return mask;
}

Tensor forward_target(const TargetModelSpec& spec, const WeightBundle& w, const Tensor& x,
                      Tape* tape, const Tensor* dropout_mask) {
  check_bundle_matches(spec.tensor_shapes(), w, "forward_target");
  if (x.rank() != 2 || x.cols() != spec.input_dim)
    throw std::invalid_argument("forward_target: input " + x.shape_str() + " does not match input_dim " +
                                std::to_string(spec.input_dim));
  Tensor h = x;
  for (size_t i = 0; i < spec.hidden_dims.size(); ++i) {
    const std::string id = std::to_string(i);
    h = relu(add_bias(matmul(h, w.at("fc" + id + "_w"), tape), w.at("fc" + id + "_b"), tape), tape);
  }
  if (dropout_mask) h = mul(h, *dropout_mask, tape);
  return add_bias(matmul(h, w.at("out_w"), tape), w.at("out_b"), tape);
}

double accuracy(const TargetModelSpec& spec, const WeightBundle& w, const Tensor& x,
                const std::vector<int>& labels) {
  Tensor logits = forward_target(spec, w, x);
  int correct = 0;
  for (int i = 0; i < logits.rows(); ++i) {
    int arg = 0;
    for (int j = 1; j < logits.cols(); ++j)
      if (logits.at(i, j) > logits.at(i, arg)) arg = j;
    if (arg == labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / logits.rows();
}

// ---- client encoder ----

void EncoderSpec::validate() const {
  if (input_dim <= 0 || descriptor_dim <= 0)
    throw std::invalid_argument("encoder: input_dim and descriptor_dim must be positive");
  if (pool_split && psi_kind == PsiKind::kIdentityMean)
    throw std::invalid_argument("encoder: identity_mean pools by plain mean; pool_split needs a linear head");
  if (pool_split && descriptor_dim % 2 != 0)
    throw std::invalid_argument("encoder: pool_split needs an even descriptor_dim, got " +
                                std::to_string(descriptor_dim));
}

std::vector<std::pair<std::string, std::vector<int>>> EncoderSpec::tensor_shapes() const {
  validate();
  std::vector<std::pair<std::string, std::vector<int>>> shapes;
  int in = input_dim;
  for (size_t i = 0; i < phi_hidden_dims.size(); ++i) {
    shapes.emplace_back("phi.fc" + std::to_string(i) + "_w", std::vector<int>{in, phi_hidden_dims[i]});
    shapes.emplace_back("phi.fc" + std::to_string(i) + "_b", std::vector<int>{phi_hidden_dims[i]});
    in = phi_hidden_dims[i];
  }
  shapes.emplace_back("phi.out_w", std::vector<int>{in, descriptor_dim});
  shapes.emplace_back("phi.out_b", std::vector<int>{descriptor_dim});
  if (psi_kind == PsiKind::kLinearHead) {
    shapes.emplace_back("psi.w", std::vector<int>{descriptor_dim, descriptor_dim});
    shapes.emplace_back("psi.b", std::vector<int>{descriptor_dim});
  }
  return shapes;
}

size_t EncoderSpec::param_count() const { return count_params(tensor_shapes()); }

WeightBundle EncoderSpec::init_weights(Rng& rng) const {
  validate();
  WeightBundle out;
  int in = input_dim;
  for (size_t i = 0; i < phi_hidden_dims.size(); ++i) {
    const std::string id = std::to_string(i);
    out.add("phi.fc" + id + "_w", init_dense_weight(in, phi_hidden_dims[i], 1.0, rng));
    out.add("phi.fc" + id + "_b", init_dense_bias(in, phi_hidden_dims[i], 1.0, rng));
    in = phi_hidden_dims[i];
  }
  out.add("phi.out_w", init_dense_weight(in, descriptor_dim, 1.0, rng));
  out.add("phi.out_b", init_dense_bias(in, descriptor_dim, 1.0, rng));
  if (psi_kind == PsiKind::kLinearHead) {
    out.add("psi.w", init_dense_weight(descriptor_dim, descriptor_dim, 1.0, rng));
    out.add("psi.b", init_dense_bias(descriptor_dim, descriptor_dim, 1.0, rng));
  }
  return out;
}

int default_descriptor_dim(int n_train) {
  if (n_train <= 0) throw std::invalid_argument("default_descriptor_dim: n_train must be positive");
  if (n_train % 4 == 0) return std::max(2, n_train / 4);
  double v = static_cast<double>(n_train) / 4.0;
  int even = 2 * static_cast<int>(std::lround(v / 2.0));
  return std::max(2, even);
}

Tensor encoder_phi(const EncoderSpec& spec, const WeightBundle& gamma, const Tensor& samples,
                   Tape* tape) {
  check_bundle_matches(spec.tensor_shapes(), gamma, "encoder");
  if (samples.rank() != 2 || samples.cols() != spec.input_dim)
    throw std::invalid_argument("encoder: samples " + samples.shape_str() +
                                " do not match input_dim " + std::to_string(spec.input_dim));
  if (samples.rows() < 1) throw std::invalid_argument("encoder: empty client dataset");
  Tensor h = samples;
  for (size_t i = 0; i < spec.phi_hidden_dims.size(); ++i) {
    const std::string id = std::to_string(i);
    h = relu(add_bias(matmul(h, gamma.at("phi.fc" + id + "_w"), tape), gamma.at("phi.fc" + id + "_b"), tape),
             tape);
  }
  h = add_bias(matmul(h, gamma.at("phi.out_w"), tape), gamma.at("phi.out_b"), tape);
  if (spec.unit_sphere_normalize) h = row_normalize(h, tape);
  return h;
}

Tensor encode_dataset(const EncoderSpec& spec, const WeightBundle& gamma, const Tensor& samples,
                      Tape* tape) {
  Tensor z = encoder_phi(spec, gamma, samples, tape);
  Tensor pooled;
  if (spec.psi_kind == PsiKind::kIdentityMean) {
    return set_pool(z, PoolKind::kMean, tape);
  }
  if (spec.pool_split) {
    int half = spec.descriptor_dim / 2;
    Tensor mean_half = set_pool(slice_cols(z, 0, half, tape), PoolKind::kMean, tape);
    Tensor max_half = set_pool(slice_cols(z, half, spec.descriptor_dim, tape), PoolKind::kMax, tape);
    pooled = concat_vec(mean_half, max_half, tape);
  } else {
    pooled = set_pool(z, PoolKind::kMean, tape);
  }
  Tensor row = reshape(pooled, {1, spec.descriptor_dim}, tape);
  row = add_bias(matmul(row, gamma.at("psi.w"), tape), gamma.at("psi.b"), tape);
  return reshape(row, {spec.descriptor_dim}, tape);
}

std::vector<std::vector<int>> partition_batches(int m, int batch_size, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("partition_batches: batch_size must be >= 1");
  std::vector<int> idx(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) idx[static_cast<size_t>(i)] = i;
  rng.shuffle(idx);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < m; start += batch_size) {
    int end = std::min(m, start + batch_size);
    batches.emplace_back(idx.begin() + start, idx.begin() + end);
  }
  return batches;
}

Tensor encode_batched(const EncoderSpec& spec, const WeightBundle& gamma, const Tensor& samples,
                      int batch_size, Rng& rng) {
  if (batch_size < 1) throw std::invalid_argument("encode_batched: batch_size must be >= 1");
  int m = samples.rows();
  if (batch_size >= m) return encode_dataset(spec, gamma, samples);
  auto batches = partition_batches(m, batch_size, rng);
  Tensor acc = Tensor::zeros({spec.descriptor_dim});
  for (const auto& batch : batches) {
    Tensor d = encode_dataset(spec, gamma, gather_rows(samples, batch));
    for (size_t i = 0; i < acc.size(); ++i) acc.v[i] += d.v[i];
  }
  for (auto& x : acc.v) x /= static_cast<double>(batches.size());
  return acc;
}

// ---- hypernetwork ----

HyperNetworkSpec HyperNetworkSpec::for_target(const TargetModelSpec& target, int embedding_dim,
                                              std::vector<int> trunk_hidden) {
  HyperNetworkSpec spec;
  spec.embedding_dim = embedding_dim;
  spec.trunk_hidden_dims = std::move(trunk_hidden);
  spec.head_shapes = target.tensor_shapes();
  spec.validate();
  return spec;
}

void HyperNetworkSpec::validate() const {
  if (embedding_dim <= 0) throw std::invalid_argument("hypernetwork: embedding_dim must be positive");
  if (trunk_hidden_dims.empty())
    throw std::invalid_argument("hypernetwork: trunk needs at least one hidden layer");
  if (head_shapes.empty()) throw std::invalid_argument("hypernetwork: no target tensors to generate");
}

std::vector<std::pair<std::string, std::vector<int>>> HyperNetworkSpec::tensor_shapes() const {
  validate();
  std::vector<std::pair<std::string, std::vector<int>>> shapes;
  int in = embedding_dim;
  for (size_t i = 0; i < trunk_hidden_dims.size(); ++i) {
    shapes.emplace_back("trunk.fc" + std::to_string(i) + "_w", std::vector<int>{in, trunk_hidden_dims[i]});
    shapes.emplace_back("trunk.fc" + std::to_string(i) + "_b", std::vector<int>{trunk_hidden_dims[i]});
    in = trunk_hidden_dims[i];
  }
  for (const auto& [name, shape] : head_shapes) {
    int flat = 1;
    for (int d : shape) flat *= d;
    shapes.emplace_back("head." + name + ".w", std::vector<int>{in, flat});
    shapes.emplace_back("head." + name + ".b", std::vector<int>{flat});
  }
  return shapes;
}

size_t HyperNetworkSpec::param_count() const { return count_params(tensor_shapes()); }

WeightBundle HyperNetworkSpec::init_weights(Rng& rng) const {
  validate();
  WeightBundle out;
  int in = embedding_dim;
  for (size_t i = 0; i < trunk_hidden_dims.size(); ++i) {
    const std::string id = std::to_string(i);
    out.add("trunk.fc" + id + "_w", init_dense_weight(in, trunk_hidden_dims[i], 1.0, rng));
    out.add("trunk.fc" + id + "_b", init_dense_bias(in, trunk_hidden_dims[i], 1.0, rng));
    in = trunk_hidden_dims[i];
  }
  // heads are damped so generated weights start near a standard init magnitude
  const double head_gain = 0.1;
  for (const auto& [name, shape] : head_shapes) {
    int flat = 1;
    for (int d : shape) flat *= d;
    out.add("head." + name + ".w", init_dense_weight(in, flat, head_gain, rng));
    out.add("head." + name + ".b", init_dense_bias(in, flat, head_gain, rng));
  }
  return out;
}

WeightBundle generate_weights(const HyperNetworkSpec& spec, const WeightBundle& theta,
                              const Tensor& e, Tape* tape) {
  check_bundle_matches(spec.tensor_shapes(), theta, "generate_weights");
  if (e.rank() != 1 || e.shape[0] != spec.embedding_dim)
    throw std::invalid_argument("generate_weights: descriptor " + e.shape_str() +
                                " does not match embedding_dim " +
                                std::to_string(spec.embedding_dim));
  Tensor t = reshape(e, {1, spec.embedding_dim}, tape);
  for (size_t i = 0; i < spec.trunk_hidden_dims.size(); ++i) {
    const std::string id = std::to_string(i);
    t = relu(add_bias(matmul(t, theta.at("trunk.fc" + id + "_w"), tape),
                      theta.at("trunk.fc" + id + "_b"), tape),
             tape);
  }
  WeightBundle out;
  for (const auto& [name, shape] : spec.head_shapes) {
    Tensor flat = add_bias(matmul(t, theta.at("head." + name + ".w"), tape),
                           theta.at("head." + name + ".b"), tape);
    out.add(name, reshape(flat, shape, tape));
  }
  return out;
}

double spectral_norm(const Tensor& w) {
  if (w.rank() != 2) throw std::invalid_argument("spectral_norm: expected a matrix, got " + w.shape_str());
  int rows = w.rows(), cols = w.cols();
  double best = 0.0;
  for (uint64_t seed : {0x5eedull, 0xfeedull}) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(cols));
    double vn2 = 0.0;
    for (auto& x : v) {
      x = rng.normal();
      vn2 += x * x;
    }
    for (auto& x : v) x /= std::sqrt(vn2);
    double sigma = 0.0, prev = -1.0;
    for (int iter = 0; iter < 100000; ++iter) {
      // u = W v with v unit; sigma = ||u|| climbs to the top singular value
      std::vector<double> u(static_cast<size_t>(rows), 0.0);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) u[static_cast<size_t>(i)] += w.at(i, j) * v[static_cast<size_t>(j)];
      double un = 0.0;
      for (double x : u) un += x * x;
      un = std::sqrt(un);
      sigma = un;
      if (un == 0.0) break;
      std::vector<double> next(static_cast<size_t>(cols), 0.0);
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) next[static_cast<size_t>(j)] += w.at(i, j) * u[static_cast<size_t>(i)];
      double nn = 0.0;
      for (double x : next) nn += x * x;
      nn = std::sqrt(nn);
      if (nn == 0.0) break;
      for (auto& x : next) x /= nn;
      v = std::move(next);
      if (prev >= 0.0 && std::abs(sigma - prev) <= 1e-9 * std::max(1.0, sigma)) break;
      prev = sigma;
    }
    best = std::max(best, sigma);
  }
  return best;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  if (x.rank() != 2) throw std::invalid_argument("gather_rows: expected a matrix, got " + x.shape_str());
  Tensor out = Tensor::zeros({static_cast<int>(rows.size()), x.cols()});
  for (size_t r = 0; r < rows.size(); ++r)
    for (int j = 0; j < x.cols(); ++j) out.at(static_cast<int>(r), j) = x.at(rows[r], j);
  return out;
}

}  // namespace odpfl
