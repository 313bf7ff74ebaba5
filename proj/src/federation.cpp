#include "odpfl/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "odpfl/models.hpp"
#include "odpfl/serialize.hpp"

namespace odpfl {

namespace {

std::vector<int> histogram(const std::vector<int>& labels, int num_classes) {
  std::vector<int> hist(static_cast<size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes)
      throw std::invalid_argument("label " + std::to_string(y) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    ++hist[static_cast<size_t>(y)];
  }
  return hist;
}

double gamma_sample(Rng& rng, double shape) {
  if (shape < 1.0) {
    double u;
    do {
      u = rng.uniform();
    } while (u <= 0.0);
    return gamma_sample(rng, shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  // Marsaglia-Tsang squeeze
  double d = shape - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = rng.normal();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> dirichlet_sample(Rng& rng, double alpha, int k) {
  std::vector<double> q(static_cast<size_t>(k));
  double total = 0.0;
  for (auto& x : q) {
    x = gamma_sample(rng, alpha);
    total += x;
  }
  if (total <= 0.0) {
    std::fill(q.begin(), q.end(), 1.0 / k);
    return q;
  }
  for (auto& x : q) x /= total;
  return q;
}

SplitResult build_split(const Tensor& features, const std::vector<int>& labels, int num_classes,
                        const std::vector<std::vector<int>>& per_client_indices,
                        std::vector<int> dropped, int exhaustion_events) {
  SplitResult out;
  out.dropped_indices = std::move(dropped);
  out.pool_exhaustion_events = exhaustion_events;
  for (size_t c = 0; c < per_client_indices.size(); ++c) {
    const auto& idx = per_client_indices[c];
    std::vector<int> client_labels;
    client_labels.reserve(idx.size());
    for (int i : idx) client_labels.push_back(labels[static_cast<size_t>(i)]);
    out.clients.push_back(ClientDataset::make(static_cast<int>(c), gather_rows(features, idx),
                                              std::move(client_labels), num_classes));
    out.sample_indices.push_back(idx);
  }
  return out;
}

// equal quotas with the integer remainder dropped; proportional draws the
// quota weights from a flat Dirichlet over clients
std::vector<int> make_quotas(int total, int n_clients, QuotaRule rule, Rng& rng) {
  std::vector<int> quota(static_cast<size_t>(n_clients), 0);
  if (rule == QuotaRule::kEqual) {
    int base = total / n_clients;
    std::fill(quota.begin(), quota.end(), base);
    return quota;
  }
  std::vector<double> w = dirichlet_sample(rng, 1.0, n_clients);
  int assigned = 0;
  for (int i = 0; i < n_clients; ++i) {
    quota[static_cast<size_t>(i)] = std::max(1, static_cast<int>(std::floor(w[static_cast<size_t>(i)] * total)));
    assigned += quota[static_cast<size_t>(i)];
  }
  // trim overshoot deterministically from the largest quotas
  while (assigned > total) {
    auto it = std::max_element(quota.begin(), quota.end());
    --*it;
    --assigned;
  }
  return quota;
}

std::vector<std::vector<int>> allocate_by_dirichlet(const std::vector<int>& labels,
                                                    int num_classes,
                                                    const std::vector<int>& quotas, double alpha,
                                                    Rng& rng, std::vector<int>* dropped,
                                                    int* exhaustion_events) {
  std::vector<std::vector<int>> pools(static_cast<size_t>(num_classes));
  for (size_t i = 0; i < labels.size(); ++i)
    pools[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));
  for (auto& pool : pools) rng.shuffle(pool);

  std::vector<std::vector<int>> assigned(quotas.size());
  for (size_t ci = 0; ci < quotas.size(); ++ci) {
    std::vector<double> q = dirichlet_sample(rng, alpha, num_classes);
    for (int s = 0; s < quotas[ci]; ++s) {
      double mass = 0.0;
      bool reduced = false;
      for (int c = 0; c < num_classes; ++c) {
        if (pools[static_cast<size_t>(c)].empty()) {
          if (q[static_cast<size_t>(c)] > 0.0) reduced = true;
          continue;
        }
        mass += q[static_cast<size_t>(c)];
      }
      if (mass <= 0.0) break;  // everything exhausted
      if (reduced && exhaustion_events) ++*exhaustion_events;
      double r = rng.uniform() * mass;
      int chosen = -1;
      double acc = 0.0;
      for (int c = 0; c < num_classes; ++c) {
        if (pools[static_cast<size_t>(c)].empty()) continue;
        acc += q[static_cast<size_t>(c)];
        if (r < acc) {
          chosen = c;
          break;
        }
      }
      if (chosen < 0) {  // numeric edge: take the last non-empty class
        for (int c = num_classes - 1; c >= 0; --c)
          if (!pools[static_cast<size_t>(c)].empty()) {
            chosen = c;
            break;
          }
      }
      auto& pool = pools[static_cast<size_t>(chosen)];
      assigned[ci].push_back(pool.back());
      pool.pop_back();
    }
  }
  if (dropped)
    for (const auto& pool : pools) dropped->insert(dropped->end(), pool.begin(), pool.end());
  return assigned;
}

std::vector<std::vector<int>> allocate_iid(size_t total, const std::vector<int>& quotas,
                                           Rng& rng, std::vector<int>* dropped) {
  std::vector<int> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  std::vector<std::vector<int>> assigned(quotas.size());
  size_t pos = 0;
  for (size_t ci = 0; ci < quotas.size(); ++ci) {
    for (int s = 0; s < quotas[ci] && pos < total; ++s) assigned[ci].push_back(idx[pos++]);
  }
  if (dropped)
    for (; pos < total; ++pos) dropped->push_back(idx[pos]);
  return assigned;
}

}  // namespace

ClientDataset ClientDataset::make(int client_id, Tensor features, std::vector<int> labels,
                                  int num_classes) {
  if (features.rank() != 2 || features.rows() < 1)
    throw std::invalid_argument("client " + std::to_string(client_id) + ": empty client dataset");
  ClientDataset ds;
  ds.client_id = client_id;
  if (!labels.empty()) {
    if (static_cast<int>(labels.size()) != features.rows())
      throw std::invalid_argument("client " + std::to_string(client_id) + ": " +
                                  std::to_string(labels.size()) + " labels for " +
                                  std::to_string(features.rows()) + " samples");
    ds.label_histogram = histogram(labels, num_classes);
  }
  ds.features = std::move(features);
  ds.labels = std::move(labels);
  return ds;
}

ClientDataset ClientDataset::make_unlabeled(int client_id, Tensor features) {
  return make(client_id, std::move(features), {}, 0);
}

SplitResult pathological_split(const Tensor& features, const std::vector<int>& labels,
                               int num_classes, int n_clients, int shards_per_client,
                               uint64_t seed) {
  if (n_clients < 1 || shards_per_client < 1)
    throw std::invalid_argument("pathological_split: n_clients and shards_per_client must be >= 1");
  const int total = features.rows();
  const long n_shards = static_cast<long>(n_clients) * shards_per_client;
  if (n_shards > total)
    throw std::invalid_argument("pathological_split: " + std::to_string(n_shards) +
                                " shards exceed " + std::to_string(total) + " samples");
  if (static_cast<int>(labels.size()) != total)
    throw std::invalid_argument("pathological_split: label count does not match samples");

  // sort by (label, index): stable and deterministic
  std::vector<int> order(static_cast<size_t>(total));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    int la = labels[static_cast<size_t>(a)], lb = labels[static_cast<size_t>(b)];
    return la != lb ? la < lb : a < b;
  });

  const int shard_size = total / static_cast<int>(n_shards);
  Rng rng(seed);
  std::vector<int> shard_ids(static_cast<size_t>(n_shards));
  std::iota(shard_ids.begin(), shard_ids.end(), 0);
  rng.shuffle(shard_ids);

  std::vector<std::vector<int>> per_client(static_cast<size_t>(n_clients));
  size_t next = 0;
  for (int ci = 0; ci < n_clients; ++ci) {
    for (int k = 0; k < shards_per_client; ++k) {
      int shard = shard_ids[next++];
      int begin = shard * shard_size;
      for (int i = begin; i < begin + shard_size; ++i)
        per_client[static_cast<size_t>(ci)].push_back(order[static_cast<size_t>(i)]);
    }
  }
  std::vector<int> dropped;
  for (int i = static_cast<int>(n_shards) * shard_size; i < total; ++i)
    dropped.push_back(order[static_cast<size_t>(i)]);
  return build_split(features, labels, num_classes, per_client, std::move(dropped), 0);
}

SplitResult dirichlet_split(const Tensor& features, const std::vector<int>& labels,
                            int num_classes, int n_clients, double alpha, uint64_t seed,
                            QuotaRule quota_rule) {
  if (alpha <= 0.0) throw std::invalid_argument("dirichlet_split: alpha must be positive");
  if (n_clients < 1) throw std::invalid_argument("dirichlet_split: n_clients must be >= 1");
  if (static_cast<int>(labels.size()) != features.rows())
    throw std::invalid_argument("dirichlet_split: label count does not match samples");
  Rng rng(seed);
  std::vector<int> quotas = make_quotas(features.rows(), n_clients, quota_rule, rng);
  std::vector<int> dropped;
  int events = 0;
  auto assigned = allocate_by_dirichlet(labels, num_classes, quotas, alpha, rng, &dropped, &events);
  return build_split(features, labels, num_classes, assigned, std::move(dropped), events);
}

SplitResult apply_split(const Tensor& features, const std::vector<int>& labels, int num_classes,
                        int n_clients, const SplitSpec& spec, uint64_t seed) {
  if (spec.kind == SplitKind::kPathological)
    return pathological_split(features, labels, num_classes, n_clients, spec.shards_per_client, seed);
  if (spec.alpha > 0.0)
    return dirichlet_split(features, labels, num_classes, n_clients, spec.alpha, seed);
  // IID deal with equal quotas
  Rng rng(seed);
  std::vector<int> quotas(static_cast<size_t>(n_clients), features.rows() / n_clients);
  std::vector<int> dropped;
  auto assigned = allocate_iid(static_cast<size_t>(features.rows()), quotas, rng, &dropped);
  return build_split(features, labels, num_classes, assigned, std::move(dropped), 0);
}

int FederationSpec::resolved_novel() const {
  if (n_novel >= 0) return n_novel;
  return std::max(1, static_cast<int>(std::lround(n_train / 10.0)));
}

int FederationSpec::resolved_novel_samples() const {
  return novel_samples_per_client > 0 ? novel_samples_per_client : samples_per_client;
}

void FederationSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("federation: need at least 2 classes");
  if (n_train < 1) throw std::invalid_argument("federation: need at least 1 training client");
  if (samples_per_client < 2) throw std::invalid_argument("federation: samples_per_client too small");
  if (feature_dim < num_classes)
    throw std::invalid_argument("federation: feature_dim must be >= num_classes for separated centroids");
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw std::invalid_argument("federation: train_fraction outside (0, 1)");
  if (rotation_strength < 0.0 || rotation_strength > 1.0)
    throw std::invalid_argument("federation: rotation_strength outside [0, 1]");
  if (split_kind == SplitKind::kPathological) {
    if (shards_per_client < 1)
      throw std::invalid_argument("federation: shards_per_client must be >= 1");
    if (novel_samples_per_client > 0 && novel_samples_per_client != samples_per_client)
      throw std::invalid_argument(
          "federation: the pathological split deals equal shards, so novel clients cannot have a "
          "different sample count");
  }
}

Federation make_synthetic_federation(const FederationSpec& spec, uint64_t seed) {
  spec.validate();
  const int n_novel = spec.resolved_novel();
  const int n_total_clients = spec.n_train + n_novel;
  const long total =
      static_cast<long>(spec.samples_per_client) * spec.n_train +
      static_cast<long>(spec.resolved_novel_samples()) * n_novel;
  const int d = spec.feature_dim;
  const int c = spec.num_classes;

  // orthonormal class directions: random rotation applied to the first c axes
  Tensor basis = rotation_matrix(d, 1.0, derive_seed(seed, "centroid-basis"));
  double radius = spec.class_separation * spec.noise_sigma / std::sqrt(2.0);
  std::vector<std::vector<double>> centroids(static_cast<size_t>(c), std::vector<double>(static_cast<size_t>(d)));
  for (int k = 0; k < c; ++k)
    for (int j = 0; j < d; ++j) centroids[static_cast<size_t>(k)][static_cast<size_t>(j)] = radius * basis.at(k, j);

  // balanced label pool, then per-sample Gaussian features around the centroid
  std::vector<int> labels(static_cast<size_t>(total));
  for (long i = 0; i < total; ++i) labels[static_cast<size_t>(i)] = static_cast<int>(i % c);
  Rng feature_rng(derive_seed(seed, "features"));
  Tensor features = Tensor::zeros({static_cast<int>(total), d});
  for (long i = 0; i < total; ++i) {
    const auto& mu = centroids[static_cast<size_t>(labels[static_cast<size_t>(i)])];
    for (int j = 0; j < d; ++j)
      features.at(static_cast<int>(i), j) = mu[static_cast<size_t>(j)] + spec.noise_sigma * feature_rng.normal();
  }

  // per-client quotas: train clients then novel clients
  std::vector<int> quotas(static_cast<size_t>(n_total_clients), spec.samples_per_client);
  for (int i = spec.n_train; i < n_total_clients; ++i)
    quotas[static_cast<size_t>(i)] = spec.resolved_novel_samples();

  Rng alloc_rng(derive_seed(seed, "allocation"));
  std::vector<std::vector<int>> assigned;
  if (spec.split_kind == SplitKind::kPathological) {
    SplitResult shards = pathological_split(features, labels, c, n_total_clients,
                                            spec.shards_per_client, derive_seed(seed, "shards"));
    assigned = std::move(shards.sample_indices);
  } else if (spec.label_alpha > 0.0) {
    assigned = allocate_by_dirichlet(labels, c, quotas, spec.label_alpha, alloc_rng, nullptr, nullptr);
  } else {
    assigned = allocate_iid(static_cast<size_t>(total), quotas, alloc_rng, nullptr);
  }

  Federation fed;
  fed.spec = spec;
  for (int ci = 0; ci < n_total_clients; ++ci) {
    std::vector<int> client_labels;
    for (int i : assigned[static_cast<size_t>(ci)]) client_labels.push_back(labels[static_cast<size_t>(i)]);
    Tensor client_features = gather_rows(features, assigned[static_cast<size_t>(ci)]);
    if (spec.rotation_strength > 0.0) {
      Tensor rot = rotation_matrix(d, spec.rotation_strength,
                                   derive_seed(seed, "client-rotation-" + std::to_string(ci)));
      client_features = matmul(client_features, rot);
    }
    ClientDataset ds = ClientDataset::make(ci, std::move(client_features), std::move(client_labels), c);
    if (ci < spec.n_train)
      fed.train_clients.push_back(std::move(ds));
    else
      fed.novel_clients.push_back(std::move(ds));
  }
  return fed;
}

Tensor rotation_matrix(int dim, double severity, uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("rotation_matrix: dim must be >= 1");
  Tensor r = Tensor::zeros({dim, dim});
  for (int i = 0; i < dim; ++i) r.at(i, i) = 1.0;
  if (dim == 1) return r;
  Rng rng(seed);
  const int n_rotations = 2 * dim;
  for (int k = 0; k < n_rotations; ++k) {
    int i = rng.uniform_int(dim);
    int j = rng.uniform_int(dim - 1);
    if (j >= i) ++j;
    double angle = severity * rng.uniform(-1.5707963267948966, 1.5707963267948966);
    double cs = std::cos(angle), sn = std::sin(angle);
    // right-multiply by the Givens rotation in the (i, j) plane
    for (int row = 0; row < dim; ++row) {
      double a = r.at(row, i), b = r.at(row, j);
      r.at(row, i) = cs * a - sn * b;
      r.at(row, j) = sn * a + cs * b;
    }
  }
  return r;
}

ClientDataset corrupt_covariate(const ClientDataset& ds, CorruptionKind kind, double severity,
                                uint64_t seed) {
  if (severity < 0.0) throw std::invalid_argument("corrupt_covariate: severity must be >= 0");
  ClientDataset out = ds;
  if (severity == 0.0) return out;
  if (kind == CorruptionKind::kRotation) {
    Tensor rot = rotation_matrix(ds.feature_dim(), severity, seed);
    out.features = matmul(ds.features, rot);
    return out;
  }
  // additive noise scaled by the dataset's global feature std
  double mean = 0.0;
  for (double v : ds.features.v) mean += v;
  mean /= static_cast<double>(ds.features.size());
  double var = 0.0;
  for (double v : ds.features.v) var += (v - mean) * (v - mean);
  var /= static_cast<double>(ds.features.size());
  double sd = std::sqrt(var);
  Rng rng(seed);
  for (auto& v : out.features.v) v += severity * sd * rng.normal();
  return out;
}

double label_kl(const std::vector<int>& hist_a, const std::vector<int>& hist_b, double smoothing) {
  if (hist_a.size() != hist_b.size())
    throw std::invalid_argument("label_kl: histograms have different class counts");
  if (hist_a.empty()) throw std::invalid_argument("label_kl: empty histograms");
  double total_a = 0.0, total_b = 0.0;
  for (int v : hist_a) total_a += v;
  for (int v : hist_b) total_b += v;
  const double c = static_cast<double>(hist_a.size());
  double kl = 0.0;
  for (size_t i = 0; i < hist_a.size(); ++i) {
    double p = (hist_a[i] + smoothing) / (total_a + c * smoothing);
    double q = (hist_b[i] + smoothing) / (total_b + c * smoothing);
    kl += p * std::log(p / q);
  }
  return kl;
}

double kl_to_nearest_train(const ClientDataset& novel, const std::vector<ClientDataset>& train,
                           double smoothing) {
  if (train.empty()) throw std::invalid_argument("kl_to_nearest_train: empty train client list");
  double best = label_kl(novel.label_histogram, train[0].label_histogram, smoothing);
  for (size_t i = 1; i < train.size(); ++i)
    best = std::min(best, label_kl(novel.label_histogram, train[i].label_histogram, smoothing));
  return best;
}

std::pair<ClientDataset, ClientDataset> split_train_validation(const ClientDataset& ds,
                                                               double train_fraction,
                                                               uint64_t seed) {
  const int m = ds.sample_count();
  if (m < 2)
    throw std::invalid_argument("split_train_validation: need at least 2 samples, have " +
                                std::to_string(m));
  int n_train = static_cast<int>(std::lround(train_fraction * m));
  n_train = std::min(m - 1, std::max(1, n_train));
  Rng rng(seed);
  std::vector<int> idx(static_cast<size_t>(m));
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  std::vector<int> train_idx(idx.begin(), idx.begin() + n_train);
  std::vector<int> val_idx(idx.begin() + n_train, idx.end());
  int num_classes = static_cast<int>(ds.label_histogram.size());
  auto pick = [&](const std::vector<int>& which) {
    std::vector<int> labels;
    if (ds.labeled())
      for (int i : which) labels.push_back(ds.labels[static_cast<size_t>(i)]);
    return ClientDataset::make(ds.client_id, gather_rows(ds.features, which), std::move(labels),
                               num_classes);
  };
  return {pick(train_idx), pick(val_idx)};
}

std::vector<ClientDataset> load_feature_csv(const std::string& path, int num_classes) {
  std::istringstream is(read_text_file(path));
  std::string line;
  std::vector<int> ids;
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  int dim = -1;
  int max_label = -1;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() < 3)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected client_id, label, features");
    int id = std::stoi(cells[0]);
    int label = std::stoi(cells[1]);
    std::vector<double> feat;
    for (size_t i = 2; i < cells.size(); ++i) feat.push_back(std::stod(cells[i]));
    if (dim < 0) dim = static_cast<int>(feat.size());
    if (static_cast<int>(feat.size()) != dim)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": inconsistent feature width");
    ids.push_back(id);
    labels.push_back(label);
    max_label = std::max(max_label, label);
    rows.push_back(std::move(feat));
  }
  if (rows.empty()) throw std::runtime_error(path + ": no samples");
  if (num_classes < 0) num_classes = max_label + 1;

  std::vector<int> order;  // client ids in first-appearance order
  for (int id : ids)
    if (std::find(order.begin(), order.end(), id) == order.end()) order.push_back(id);

  std::vector<ClientDataset> out;
  for (int id : order) {
    std::vector<std::vector<double>> f;
    std::vector<int> l;
    for (size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) {
        f.push_back(rows[i]);
        l.push_back(labels[i]);
      }
    bool unlabeled = std::all_of(l.begin(), l.end(), [](int y) { return y == -1; });
    bool labeled = std::all_of(l.begin(), l.end(), [](int y) { return y >= 0; });
    if (!unlabeled && !labeled)
      throw std::runtime_error(path + ": client " + std::to_string(id) +
                               " mixes labeled and unlabeled rows");
    Tensor features = Tensor::zeros({static_cast<int>(f.size()), dim});
    for (size_t i = 0; i < f.size(); ++i)
      for (int j = 0; j < dim; ++j) features.at(static_cast<int>(i), j) = f[i][static_cast<size_t>(j)];
    out.push_back(unlabeled ? ClientDataset::make_unlabeled(id, std::move(features))
                            : ClientDataset::make(id, std::move(features), std::move(l), num_classes));
  }
  return out;
}

void save_feature_csv(const std::vector<ClientDataset>& clients, const std::string& path) {
  std::ostringstream os;
  for (const auto& ds : clients) {
    for (int i = 0; i < ds.sample_count(); ++i) {
      os << ds.client_id << "," << (ds.labeled() ? ds.labels[static_cast<size_t>(i)] : -1);
      for (int j = 0; j < ds.feature_dim(); ++j) os << "," << format_g17(ds.features.at(i, j));
      os << "\n";
    }
  }
  write_text_file(path, os.str());
}

void save_split_manifest(const SplitResult& split, const std::string& path) {
  std::ostringstream os;
  for (size_t c = 0; c < split.clients.size(); ++c) {
    os << split.clients[c].client_id;
    for (int i : split.sample_indices[c]) os << "," << i;
    os << "\n";
  }
  write_text_file(path, os.str());
}

}  // namespace odpfl
