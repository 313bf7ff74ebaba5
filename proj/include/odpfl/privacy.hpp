#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "odpfl/federation.hpp"
#include "odpfl/models.hpp"
#include "odpfl/rng.hpp"
#include "odpfl/tensor.hpp"

namespace odpfl {

struct DPParams {
  double epsilon = 0.3;
  double delta = 0.01;
  double l_psi = 1.0;  // Lipschitz constant of the head
  double b_phi = 1.0;  // bound on per-sample phi outputs
  int m = 1;           // dataset size |D|

  void validate() const;
};

// encoder sensitivity bound for a mean-pooled deep set: (2 / m) * L_psi * B_phi
double sensitivity_bound(double l_psi, double b_phi, int m);

// Gaussian mechanism noise scale: sigma^2 = 2 dg^2 ln(1.25 / delta) / epsilon^2
double gaussian_sigma(double dg, double epsilon, double delta);

// Proof that an encoder configuration admits the sensitivity bound: phi
// outputs on the unit sphere, plain mean pooling, and a head whose Lipschitz
// constant is known (1 for identity, the spectral norm for a linear head).
// Only certify_dp_encoder can mint one.
struct EncoderDpCertificate {
  double l_psi = 0.0;
  double b_phi = 0.0;
};

EncoderDpCertificate certify_dp_encoder(const EncoderSpec& spec, const WeightBundle& gamma);

struct PrivatizedDescriptor {
  Tensor values;  // descriptor + noise
  double sigma = 0.0;
  DPParams params;
};

// Adds per-coordinate Gaussian noise calibrated by the certified sensitivity.
// Runs on the client side of the protocol boundary; refuses parameters the
// certificate cannot back.
PrivatizedDescriptor privatize_descriptor(const Tensor& descriptor, const DPParams& dp,
                                          const EncoderDpCertificate& cert, Rng& rng);

// L2 distance between the descriptors of base_samples and its adjacent
// dataset with `row` replaced by `replacement`
double adjacent_descriptor_distance(const EncoderSpec& spec, const WeightBundle& gamma,
                                    const Tensor& base_samples, int row,
                                    const std::vector<double>& replacement);

// Monte-Carlo lower estimate of the true sensitivity: max L2 descriptor
// change over `trials` random adjacent datasets (one sample swapped for a
// fresh draw). A sanity audit, never a privacy proof.
double empirical_sensitivity(const EncoderSpec& spec, const WeightBundle& gamma,
                             const Tensor& base_samples, int trials, Rng& rng);

struct DpSweepRow {
  double epsilon = 0.0;  // 0 marks the noiseless reference row
  double delta = 0.0;
  int m = 0;
  double sigma = 0.0;
  double accuracy_mean = 0.0;
  double accuracy_sem = 0.0;
  int repeats = 0;
};

struct ServerState;  // protocol module

// For each (epsilon, m): subsample m novel samples, privatize the descriptor,
// generate a model, score it on the full novel set. Sizes above the dataset
// are skipped with a warning row left out. Row 0 is the noiseless reference.
std::vector<DpSweepRow> dp_accuracy_sweep(const ServerState& server,
                                          const std::vector<ClientDataset>& novel_clients,
                                          const std::vector<double>& epsilons, double delta,
                                          const std::vector<int>& sizes, int repeats, Rng& rng);

void save_dp_sweep_csv(const std::vector<DpSweepRow>& rows, const std::string& path);

}  // namespace odpfl
