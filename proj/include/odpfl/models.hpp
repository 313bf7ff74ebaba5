#pragma once

#include <string>
#include <utility>
#include <vector>

#include "odpfl/rng.hpp"
#include "odpfl/tensor.hpp"
#include "odpfl/weights.hpp"

namespace odpfl {

// ---- target model h(.; w): dense -> relu -> ... -> dense logits ----

struct TargetModelSpec {
  int input_dim = 16;
  std::vector<int> hidden_dims{500, 500};
  int num_classes = 10;
  double dropout_rate = 0.0;  // applied after the last hidden activation, training only

  std::vector<std::pair<std::string, std::vector<int>>> tensor_shapes() const;
  size_t param_count() const;
  WeightBundle init_weights(Rng& rng) const;
  void validate() const;
};

// Bernoulli keep-mask with inverted scaling, fixed per forward pass. The mask
// enters the recorded computation as a constant, never as a differentiated op.
Tensor make_dropout_mask(int rows, int cols, double rate, Rng& rng);

Tensor forward_target(const TargetModelSpec& spec, const WeightBundle& w, const Tensor& x,
                      Tape* tape = nullptr, const Tensor* dropout_mask = nullptr);

// fraction of rows whose argmax logit equals the label
double accuracy(const TargetModelSpec& spec, const WeightBundle& w, const Tensor& x,
                const std::vector<int>& labels);

// ---- client encoder g_gamma: per-sample net phi, invariant pooling, head psi ----

enum class PsiKind { kIdentityMean, kLinearHead };

struct EncoderSpec {
  int input_dim = 16;
  std::vector<int> phi_hidden_dims{64};
  int descriptor_dim = 16;
  bool pool_split = false;             // half mean / half max over the sample axis
  bool unit_sphere_normalize = false;  // force ||phi(x)|| = 1 per sample
  PsiKind psi_kind = PsiKind::kIdentityMean;

  std::vector<std::pair<std::string, std::vector<int>>> tensor_shapes() const;
  size_t param_count() const;
  WeightBundle init_weights(Rng& rng) const;
  void validate() const;
};

// embedding width rule used by the experiment defaults: n_train / 4,
// rounded to the nearest even integer when not exact
int default_descriptor_dim(int n_train);

// per-sample phi outputs, [m x descriptor_dim] (post-normalization when enabled)
Tensor encoder_phi(const EncoderSpec& spec, const WeightBundle& gamma, const Tensor& samples,
                   Tape* tape = nullptr);

Tensor encode_dataset(const EncoderSpec& spec, const WeightBundle& gamma, const Tensor& samples,
                      Tape* tape = nullptr);

// random partition into batches of size batch_size, exposed so callers can
// reproduce the exact grouping
std::vector<std::vector<int>> partition_batches(int m, int batch_size, Rng& rng);

// mean of per-batch descriptors over a random partition; equals
// encode_dataset when batch_size >= m
Tensor encode_batched(const EncoderSpec& spec, const WeightBundle& gamma, const Tensor& samples,
                      int batch_size, Rng& rng);

// ---- hypernetwork f_theta: trunk MLP plus one linear head per target tensor ----

struct HyperNetworkSpec {
  int embedding_dim = 16;
  std::vector<int> trunk_hidden_dims{100, 100, 100};
  std::vector<std::pair<std::string, std::vector<int>>> head_shapes;

  static HyperNetworkSpec for_target(const TargetModelSpec& target, int embedding_dim,
                                     std::vector<int> trunk_hidden = {100, 100, 100});

  std::vector<std::pair<std::string, std::vector<int>>> tensor_shapes() const;
  size_t param_count() const;
  WeightBundle init_weights(Rng& rng) const;
  void validate() const;
};

// deterministic: same (theta, e) gives a bitwise identical bundle. When taped,
// every generated tensor carries its tape node id.
WeightBundle generate_weights(const HyperNetworkSpec& spec, const WeightBundle& theta,
                              const Tensor& e, Tape* tape = nullptr);

// largest singular value by power iteration (relative tolerance 1e-8)
double spectral_norm(const Tensor& w);

// rows of x selected by index, in the given order (plain data movement, never taped)
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);

}  // namespace odpfl
