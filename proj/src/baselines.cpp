#include "odpfl/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace odpfl {

GlobalModelState GlobalModelState::init(const TargetModelSpec& spec, uint64_t seed) {
  GlobalModelState s;
  s.spec = spec;
  Rng rng(derive_seed(seed, "global-model-init"));
  s.weights = spec.init_weights(rng);
  return s;
}

namespace {

BaselineRoundLog aggregate_round(GlobalModelState& state,
                                 const std::vector<FederatedClient>& clients, int cohort_size,
                                 double prox_mu, const LocalTrainConfig& cfg, Rng& rng) {
  if (clients.empty()) throw std::invalid_argument("fedavg_round: empty cohort");
  if (cohort_size < 1 || cohort_size > static_cast<int>(clients.size()))
    throw std::invalid_argument("fedavg_round: cohort_size " + std::to_string(cohort_size) +
                                " outside [1, " + std::to_string(clients.size()) + "]");
  std::vector<int> cohort = rng.sample_without_replacement(static_cast<int>(clients.size()), cohort_size);
  std::sort(cohort.begin(), cohort.end());

  LocalTrainConfig local = cfg;
  local.prox_mu = prox_mu;

  BaselineRoundLog log;
  log.round = state.round;
  double total_weight = 0.0;
  for (int ci : cohort) total_weight += clients[static_cast<size_t>(ci)].train.sample_count();

  WeightBundle aggregate = WeightBundle::zeros_like(state.weights);
  for (int ci : cohort) {
    const FederatedClient& member = clients[static_cast<size_t>(ci)];
    ClientUpdateResult cu = client_update(state.spec, state.weights, member.train, local, rng);
    WeightBundle local_model = bundle_add(state.weights, cu.delta);
    double weight = member.train.sample_count() / total_weight;
    bundle_axpy(aggregate, weight, local_model);

    RoundClientLog entry;
    entry.client_id = member.train.client_id;
    entry.loss_before = cu.loss_before;
    entry.loss_after = cu.loss_after;
    log.clients.push_back(entry);
  }
  state.weights = aggregate;
  state.round += 1;
  for (const auto& entry : log.clients) {
    log.mean_loss_before += entry.loss_before / static_cast<double>(log.clients.size());
    log.mean_loss_after += entry.loss_after / static_cast<double>(log.clients.size());
  }
  return log;
}

}  // namespace

BaselineRoundLog fedavg_round(GlobalModelState& state, const std::vector<FederatedClient>& clients,
                              int cohort_size, const LocalTrainConfig& cfg, Rng& rng) {
  return aggregate_round(state, clients, cohort_size, 0.0, cfg, rng);
}

ClientUpdateResult fedprox_local_update(const TargetModelSpec& spec, const WeightBundle& w_global,
                                        const ClientDataset& data, double prox_mu,
                                        const LocalTrainConfig& cfg, Rng& rng) {
  if (prox_mu < 0.0) throw std::invalid_argument("fedprox: prox_mu must be >= 0");
  LocalTrainConfig local = cfg;
  local.prox_mu = prox_mu;
  return client_update(spec, w_global, data, local, rng);
}

BaselineRoundLog fedprox_round(GlobalModelState& state, const std::vector<FederatedClient>& clients,
                               int cohort_size, double prox_mu, const LocalTrainConfig& cfg,
                               Rng& rng) {
  if (prox_mu < 0.0) throw std::invalid_argument("fedprox: prox_mu must be >= 0");
  return aggregate_round(state, clients, cohort_size, prox_mu, cfg, rng);
}

PersonalizedPool materialize_pool(const ServerState& server,
                                  const std::vector<FederatedClient>& clients) {
  if (server.embedding_table.size() != clients.size())
    throw std::invalid_argument("materialize_pool: embedding table not trained for these clients");
  PersonalizedPool pool;
  for (size_t i = 0; i < clients.size(); ++i) {
    pool.client_ids.push_back(clients[i].train.client_id);
    pool.models.push_back(
        strip_nodes(generate_weights(server.hn_spec, server.theta, server.embedding_table[i])));
  }
  return pool;
}

PersonalizedPool build_personalized_pool(ServerState& server,
                                         const std::vector<FederatedClient>& clients, int rounds,
                                         const TwoPhaseConfig& cfg, Rng& rng) {
  train_phase1(server, clients, rounds, cfg, rng);
  return materialize_pool(server, clients);
}

double pfl_sampled_accuracy(const TargetModelSpec& spec, const PersonalizedPool& pool,
                            const ClientDataset& novel) {
  if (pool.models.empty()) throw std::invalid_argument("pfl_sampled: empty pool");
  if (!novel.labeled()) throw std::invalid_argument("pfl_sampled: evaluation needs held labels");
  double acc = 0.0;
  for (const auto& model : pool.models)
    acc += accuracy(spec, model, novel.features, novel.labels);
  return acc / static_cast<double>(pool.models.size());
}

Tensor pfl_ensemble_logits(const TargetModelSpec& spec, const PersonalizedPool& pool,
                           const Tensor& x) {
  if (pool.models.empty()) throw std::invalid_argument("pfl_ensemble: empty pool");
  Tensor acc;
  for (const auto& model : pool.models) {
    Tensor logits = forward_target(spec, model, x);
    if (acc.size() == 0) {
      acc = logits;
    } else {
      for (size_t i = 0; i < acc.size(); ++i) acc.v[i] += logits.v[i];
    }
  }
  for (auto& v : acc.v) v /= static_cast<double>(pool.models.size());
  return acc;
}

double pfl_ensemble_accuracy(const TargetModelSpec& spec, const PersonalizedPool& pool,
                             const ClientDataset& novel) {
  if (!novel.labeled()) throw std::invalid_argument("pfl_ensemble: evaluation needs held labels");
  Tensor logits = pfl_ensemble_logits(spec, pool, novel.features);
  int correct = 0;
  for (int i = 0; i < logits.rows(); ++i) {
    int arg = 0;
    for (int j = 1; j < logits.cols(); ++j)
      if (logits.at(i, j) > logits.at(i, arg)) arg = j;
    if (arg == novel.labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / logits.rows();
}

double a_distance(const Tensor& features_a, const Tensor& features_b, const ADistanceConfig& cfg) {
  if (features_a.rank() != 2 || features_b.rank() != 2 || features_a.cols() != features_b.cols())
    throw std::invalid_argument("a_distance: feature sets must be matrices of equal width");
  const int na = features_a.rows(), nb = features_b.rows();
  if (na < 2 || nb < 2)
    throw std::invalid_argument("a_distance: each side needs at least 2 samples for a 50/50 split");
  const int d = features_a.cols();

  // 50/50 train/held split per domain
  Rng rng(derive_seed(cfg.seed, "a-distance-split"));
  std::vector<int> ia(static_cast<size_t>(na)), ib(static_cast<size_t>(nb));
  for (int i = 0; i < na; ++i) ia[static_cast<size_t>(i)] = i;
  for (int i = 0; i < nb; ++i) ib[static_cast<size_t>(i)] = i;
  rng.shuffle(ia);
  rng.shuffle(ib);

  struct Row {
    const Tensor* src;
    int row;
    double label;
  };
  std::vector<Row> train, held;
  for (int i = 0; i < na; ++i)
    (i < na / 2 ? train : held).push_back({&features_a, ia[static_cast<size_t>(i)], 0.0});
  for (int i = 0; i < nb; ++i)
    (i < nb / 2 ? train : held).push_back({&features_b, ib[static_cast<size_t>(i)], 1.0});
  if (train.empty() || held.empty()) throw std::invalid_argument("a_distance: degenerate split");

  // standardize with train-split statistics; the argmin over clients is then
  // invariant to a global feature rescaling
  std::vector<double> mu(static_cast<size_t>(d), 0.0), sd(static_cast<size_t>(d), 0.0);
  for (const Row& r : train)
    for (int j = 0; j < d; ++j) mu[static_cast<size_t>(j)] += r.src->at(r.row, j);
  for (auto& v : mu) v /= static_cast<double>(train.size());
  for (const Row& r : train)
    for (int j = 0; j < d; ++j) {
      double diff = r.src->at(r.row, j) - mu[static_cast<size_t>(j)];
      sd[static_cast<size_t>(j)] += diff * diff;
    }
  for (auto& v : sd) v = std::max(std::sqrt(v / static_cast<double>(train.size())), 1e-12);

  auto z = [&](const Row& r, int j) {
    return (r.src->at(r.row, j) - mu[static_cast<size_t>(j)]) / sd[static_cast<size_t>(j)];
  };

  // logistic regression from zero weights, full-batch gradient descent
  std::vector<double> w(static_cast<size_t>(d), 0.0);
  double bias = 0.0;
  const double inv_n = 1.0 / static_cast<double>(train.size());
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<double> gw(static_cast<size_t>(d), 0.0);
    double gb = 0.0;
    for (const Row& r : train) {
      double logit = bias;
      for (int j = 0; j < d; ++j) logit += w[static_cast<size_t>(j)] * z(r, j);
      double p = 1.0 / (1.0 + std::exp(-logit));
      double err = p - r.label;
      for (int j = 0; j < d; ++j) gw[static_cast<size_t>(j)] += err * z(r, j) * inv_n;
      gb += err * inv_n;
    }
    for (int j = 0; j < d; ++j) w[static_cast<size_t>(j)] -= cfg.lr * gw[static_cast<size_t>(j)];
    bias -= cfg.lr * gb;
  }

  int wrong = 0;
  for (const Row& r : held) {
    double logit = bias;
    for (int j = 0; j < d; ++j) logit += w[static_cast<size_t>(j)] * z(r, j);
    double predicted = logit > 0.0 ? 1.0 : 0.0;
    if (predicted != r.label) ++wrong;
  }
  double err = static_cast<double>(wrong) / static_cast<double>(held.size());
  return std::clamp(2.0 * (1.0 - 2.0 * err), 0.0, 2.0);
}

int pfl_nearest_index(const std::vector<FederatedClient>& train_clients,
                      const UnlabeledClient& novel, const ADistanceConfig& cfg) {
  if (train_clients.empty()) throw std::invalid_argument("pfl_nearest: no train clients");
  int best = 0;
  double best_dist = 0.0;
  for (size_t i = 0; i < train_clients.size(); ++i) {
    double dist = a_distance(train_clients[i].train.features, novel.features, cfg);
    if (i == 0 || dist < best_dist) {
      best = static_cast<int>(i);
      best_dist = dist;
    }
  }
  return best;
}

const WeightBundle& pfl_nearest(const PersonalizedPool& pool,
                                const std::vector<FederatedClient>& train_clients,
                                const UnlabeledClient& novel, const ADistanceConfig& cfg) {
  if (pool.models.size() != train_clients.size())
    throw std::invalid_argument("pfl_nearest: pool is not aligned with the train clients");
  return pool.models[static_cast<size_t>(pfl_nearest_index(train_clients, novel, cfg))];
}

}  // namespace odpfl
