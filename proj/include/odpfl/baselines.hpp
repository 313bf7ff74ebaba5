#pragma once

#include <string>
#include <vector>

#include "odpfl/protocol.hpp"

namespace odpfl {

// single shared model, the FL side of the comparison
struct GlobalModelState {
  TargetModelSpec spec;
  WeightBundle weights;
  long round = 0;

  static GlobalModelState init(const TargetModelSpec& spec, uint64_t seed);
};

struct BaselineRoundLog {
  long round = -1;
  std::vector<RoundClientLog> clients;
  double mean_loss_before = 0.0;
  double mean_loss_after = 0.0;
};

// cohort trains locally from the global model; the new global model is the
// dataset-size weighted average of the local results
BaselineRoundLog fedavg_round(GlobalModelState& state, const std::vector<FederatedClient>& clients,
                              int cohort_size, const LocalTrainConfig& cfg, Rng& rng);

// local objective adds (mu/2) ||w - w_global||^2; mu = 0 runs the exact
// FedAvg local path
ClientUpdateResult fedprox_local_update(const TargetModelSpec& spec, const WeightBundle& w_global,
                                        const ClientDataset& data, double prox_mu,
                                        const LocalTrainConfig& cfg, Rng& rng);

BaselineRoundLog fedprox_round(GlobalModelState& state, const std::vector<FederatedClient>& clients,
                               int cohort_size, double prox_mu, const LocalTrainConfig& cfg,
                               Rng& rng);

// one trained model per training client, produced by the embedding-table
// hypernetwork (phase 1)
struct PersonalizedPool {
  std::vector<int> client_ids;
  std::vector<WeightBundle> models;
};

// regenerate the pool from a phase-1-trained server; bitwise reproducible
PersonalizedPool materialize_pool(const ServerState& server,
                                  const std::vector<FederatedClient>& clients);

// trains theta plus the embedding table, then materializes the pool
PersonalizedPool build_personalized_pool(ServerState& server,
                                         const std::vector<FederatedClient>& clients, int rounds,
                                         const TwoPhaseConfig& cfg, Rng& rng);

// mean accuracy over all pooled models on the novel client (the expectation
// of a uniform draw)
double pfl_sampled_accuracy(const TargetModelSpec& spec, const PersonalizedPool& pool,
                            const ClientDataset& novel);

// arithmetic mean of member logits
Tensor pfl_ensemble_logits(const TargetModelSpec& spec, const PersonalizedPool& pool,
                           const Tensor& x);

double pfl_ensemble_accuracy(const TargetModelSpec& spec, const PersonalizedPool& pool,
                             const ClientDataset& novel);

struct ADistanceConfig {
  int steps = 200;   // gradient steps for the domain classifier
  double lr = 0.1;
  uint64_t seed = 0; // drives the 50/50 split only; the classifier starts at zero
};

// proxy divergence 2 (1 - 2 err) of a logistic domain classifier trained to
// tell the two sample sets apart on standardized features, clamped to [0, 2]
double a_distance(const Tensor& features_a, const Tensor& features_b, const ADistanceConfig& cfg);

// index of the train client whose samples are closest to the novel client
int pfl_nearest_index(const std::vector<FederatedClient>& train_clients,
                      const UnlabeledClient& novel, const ADistanceConfig& cfg);

const WeightBundle& pfl_nearest(const PersonalizedPool& pool,
                                const std::vector<FederatedClient>& train_clients,
                                const UnlabeledClient& novel, const ADistanceConfig& cfg);

}  // namespace odpfl
