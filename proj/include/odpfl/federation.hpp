#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "odpfl/rng.hpp"
#include "odpfl/tensor.hpp"

namespace odpfl {

// One client's samples. Labels are optional: novel clients carry them only
// so evaluation can score predictions; training-side code paths must never
// see them (see UnlabeledClient).
struct ClientDataset {
  int client_id = -1;
  Tensor features;                  // [m x d]
  std::vector<int> labels;          // empty when unlabeled
  std::vector<int> label_histogram; // per-class counts, sized num_classes when labeled

  int sample_count() const { return features.rank() == 2 ? features.rows() : 0; }
  int feature_dim() const { return features.rank() == 2 ? features.cols() : 0; }
  bool labeled() const { return !labels.empty(); }

  static ClientDataset make(int client_id, Tensor features, std::vector<int> labels,
                            int num_classes);
  static ClientDataset make_unlabeled(int client_id, Tensor features);
};

// Label-stripped view handed to inference entry points. Constructing one is
// the only sanctioned way to move novel-client data toward the server side.
struct UnlabeledClient {
  int client_id = -1;
  Tensor features;

  static UnlabeledClient from(const ClientDataset& ds) { return {ds.client_id, ds.features}; }
};

struct SplitResult {
  std::vector<ClientDataset> clients;
  std::vector<std::vector<int>> sample_indices;  // original index per client, aligned with clients
  std::vector<int> dropped_indices;              // remainder never assigned
  int pool_exhaustion_events = 0;                // dirichlet draws made on a reduced class support
};

// sort by label, cut into n_clients * shards_per_client shards, deal
// shards_per_client random shards to each client
SplitResult pathological_split(const Tensor& features, const std::vector<int>& labels,
                               int num_classes, int n_clients, int shards_per_client,
                               uint64_t seed);

enum class QuotaRule { kEqual, kProportional };

// per client draw q_i ~ Dir(alpha) over classes, then fill an equal sample
// quota by drawing labels from q_i out of per-class pools; exhausted classes
// are renormalized away
SplitResult dirichlet_split(const Tensor& features, const std::vector<int>& labels,
                            int num_classes, int n_clients, double alpha, uint64_t seed,
                            QuotaRule quota = QuotaRule::kEqual);

enum class SplitKind { kDirichlet, kPathological };

// how a sample pool is divided into clients
struct SplitSpec {
  SplitKind kind = SplitKind::kDirichlet;
  double alpha = 0.0;         // dirichlet concentration; <= 0 deals IID
  int shards_per_client = 2;  // pathological K
};

SplitResult apply_split(const Tensor& features, const std::vector<int>& labels, int num_classes,
                        int n_clients, const SplitSpec& spec, uint64_t seed);

struct FederationSpec {
  int n_train = 50;
  int n_novel = -1;  // resolved to round(n_train / 10), at least 1
  int samples_per_client = 60;
  int novel_samples_per_client = -1;  // defaults to samples_per_client
  int feature_dim = 16;
  int num_classes = 8;
  SplitKind split_kind = SplitKind::kDirichlet;
  double label_alpha = 0.0;        // Dir concentration for label skew; <= 0 deals IID
  int shards_per_client = 2;       // pathological K
  double rotation_strength = 0.0;  // per-client orthogonal feature rotation in [0, 1]
  double class_separation = 3.0;   // pairwise centroid distance, in noise-sigma units
  double noise_sigma = 1.0;
  double train_fraction = 0.85;    // per-client train/validation split

  int resolved_novel() const;
  int resolved_novel_samples() const;
  void validate() const;
};

struct Federation {
  FederationSpec spec;
  std::vector<ClientDataset> train_clients;
  std::vector<ClientDataset> novel_clients;
};

// class-conditional Gaussian clusters with Dirichlet label skew and optional
// per-client feature rotation; bitwise deterministic per (spec, seed)
Federation make_synthetic_federation(const FederationSpec& spec, uint64_t seed);

enum class CorruptionKind { kRotation, kAdditiveNoise };

// seeded orthogonal matrix built from Givens rotations whose angles scale
// with severity (severity 0 is the identity)
Tensor rotation_matrix(int dim, double severity, uint64_t seed);

ClientDataset corrupt_covariate(const ClientDataset& ds, CorruptionKind kind, double severity,
                                uint64_t seed);

// D_KL(p_hat_a || p_hat_b) with additive smoothing on both histograms
double label_kl(const std::vector<int>& hist_a, const std::vector<int>& hist_b,
                double smoothing = 1e-3);

double kl_to_nearest_train(const ClientDataset& novel, const std::vector<ClientDataset>& train,
                           double smoothing = 1e-3);

// deterministic per-client split into train and validation parts
std::pair<ClientDataset, ClientDataset> split_train_validation(const ClientDataset& ds,
                                                               double train_fraction,
                                                               uint64_t seed);

// CSV ingestion: one row per sample: client_id, label, then feature values.
// Label -1 marks unlabeled rows; a client's rows must be all labeled or all
// unlabeled. num_classes -1 infers max label + 1.
std::vector<ClientDataset> load_feature_csv(const std::string& path, int num_classes = -1);
void save_feature_csv(const std::vector<ClientDataset>& clients, const std::string& path);

// split manifest rows: client_id, original sample indices
void save_split_manifest(const SplitResult& split, const std::string& path);

}  // namespace odpfl
