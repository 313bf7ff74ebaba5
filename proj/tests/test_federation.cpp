#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <set>

#include "odpfl/federation.hpp"
#include "odpfl/models.hpp"
#include "odpfl/rng.hpp"
#include "odpfl/serialize.hpp"
#include "oracles.hpp"

using namespace odpfl;

namespace {

// sorted-by-label synthetic pool with exactly `per_class` samples per class
std::pair<Tensor, std::vector<int>> balanced_pool(int num_classes, int per_class, int dim,
                                                  uint64_t seed) {
  Rng rng(seed);
  int total = num_classes * per_class;
  Tensor features = oracles::random_tensor({total, dim}, rng);
  std::vector<int> labels(static_cast<size_t>(total));
  for (int i = 0; i < total; ++i) labels[static_cast<size_t>(i)] = i % num_classes;
  return {features, labels};
}

// exact multiset accounting over original sample indices
void check_multiset_conservation(const SplitResult& split, int total) {
  std::vector<int> seen;
  for (const auto& idx : split.sample_indices) seen.insert(seen.end(), idx.begin(), idx.end());
  seen.insert(seen.end(), split.dropped_indices.begin(), split.dropped_indices.end());
  REQUIRE(static_cast<int>(seen.size()) == total);
  std::sort(seen.begin(), seen.end());
  for (int i = 0; i < total; ++i) REQUIRE(seen[static_cast<size_t>(i)] == i);
}

double tv_from_uniform(const std::vector<int>& hist) {
  double total = 0.0;
  for (int v : hist) total += v;
  double tv = 0.0;
  for (int v : hist) tv += std::abs(v / total - 1.0 / hist.size());
  return 0.5 * tv;
}

double mean_pairwise_tv(const std::vector<ClientDataset>& clients) {
  double acc = 0.0;
  int pairs = 0;
  for (size_t a = 0; a < clients.size(); ++a)
    for (size_t b = a + 1; b < clients.size(); ++b) {
      double ta = 0, tb = 0;
      for (int v : clients[a].label_histogram) ta += v;
      for (int v : clients[b].label_histogram) tb += v;
      double tv = 0.0;
      for (size_t c = 0; c < clients[a].label_histogram.size(); ++c)
        tv += std::abs(clients[a].label_histogram[c] / ta - clients[b].label_histogram[c] / tb);
      acc += 0.5 * tv;
      ++pairs;
    }
  return acc / pairs;
}

}  // namespace

TEST_CASE("pathological split") {
  SUBCASE("100 clients x 2 shards: each client sees at most 2 classes") {
    auto [features, labels] = balanced_pool(10, 200, 4, 1);  // 2000 samples, 200 shards of 10
    SplitResult split = pathological_split(features, labels, 10, 100, 2, 7);
    REQUIRE(split.clients.size() == 100);
    for (const auto& ds : split.clients) {
      CHECK(ds.sample_count() == 20);
      int classes_present = 0;
      for (int v : ds.label_histogram) classes_present += v > 0 ? 1 : 0;
      CHECK(classes_present <= 2);  // shard size 10 divides the 200-sample classes
    }
    check_multiset_conservation(split, 2000);
  }

  SUBCASE("single client single shard owns almost all samples") {
    auto [features, labels] = balanced_pool(3, 11, 4, 2);  // 33 samples
    SplitResult split = pathological_split(features, labels, 3, 1, 1, 7);
    REQUIRE(split.clients.size() == 1);
    CHECK(split.clients[0].sample_count() == 33);
    CHECK(split.dropped_indices.empty());
    check_multiset_conservation(split, 33);
  }

  SUBCASE("remainder samples are recorded, never lost") {
    auto [features, labels] = balanced_pool(5, 21, 4, 3);  // 105 samples, 10 shards of 10
    SplitResult split = pathological_split(features, labels, 5, 5, 2, 11);
    CHECK(split.dropped_indices.size() == 5);
    check_multiset_conservation(split, 105);
  }

  SUBCASE("too many shards is a configuration error") {
    auto [features, labels] = balanced_pool(2, 5, 4, 4);
    CHECK_THROWS_AS(pathological_split(features, labels, 2, 100, 2, 1), std::invalid_argument);
  }
}

TEST_CASE("dirichlet split") {
  SUBCASE("alpha 10 keeps clients near uniform") {
    auto [features, labels] = balanced_pool(10, 1000, 4, 5);  // 10k samples
    double mean_tv = 0.0;
    const int n_seeds = 10;
    for (int s = 0; s < n_seeds; ++s) {
      SplitResult split = dirichlet_split(features, labels, 10, 10, 10.0, 100 + static_cast<uint64_t>(s));
      double acc = 0.0;
      for (const auto& ds : split.clients) acc += tv_from_uniform(ds.label_histogram);
      mean_tv += acc / split.clients.size();
    }
    CHECK(mean_tv / n_seeds < 0.2);
  }

  SUBCASE("huge alpha is within 0.02 of uniform per class") {
    auto [features, labels] = balanced_pool(10, 4000, 4, 6);
    SplitResult split = dirichlet_split(features, labels, 10, 10, 1e6, 42);
    for (const auto& ds : split.clients) {
      double total = 0;
      for (int v : ds.label_histogram) total += v;
      for (int v : ds.label_histogram) CHECK(std::abs(v / total - 0.1) <= 0.02);
    }
  }

  SUBCASE("single client reproduces the global histogram") {
    auto [features, labels] = balanced_pool(4, 25, 4, 7);
    SplitResult split = dirichlet_split(features, labels, 4, 1, 0.3, 9);
    REQUIRE(split.clients.size() == 1);
    for (int v : split.clients[0].label_histogram) CHECK(v == 25);
    check_multiset_conservation(split, 100);
  }

  SUBCASE("assigned plus dropped counts are conserved") {
    auto [features, labels] = balanced_pool(6, 17, 4, 8);  // 102 samples, 10 clients x 10
    SplitResult split = dirichlet_split(features, labels, 6, 10, 0.5, 13);
    size_t assigned = 0;
    for (const auto& ds : split.clients) assigned += static_cast<size_t>(ds.sample_count());
    CHECK(assigned + split.dropped_indices.size() == 102);
    check_multiset_conservation(split, 102);
  }

  SUBCASE("smaller alpha strictly increases heterogeneity (20 seed average)") {
    auto [features, labels] = balanced_pool(8, 250, 4, 9);
    std::map<double, double> mean_tv;
    for (double alpha : {0.1, 1.0, 10.0}) {
      double acc = 0.0;
      for (uint64_t s = 0; s < 20; ++s)
        acc += mean_pairwise_tv(dirichlet_split(features, labels, 8, 20, alpha, 1000 + s).clients);
      mean_tv[alpha] = acc / 20.0;
    }
    CHECK(mean_tv[0.1] > mean_tv[1.0]);
    CHECK(mean_tv[1.0] > mean_tv[10.0]);
  }

  SUBCASE("invalid alpha rejected") {
    auto [features, labels] = balanced_pool(2, 5, 4, 10);
    CHECK_THROWS_AS(dirichlet_split(features, labels, 2, 2, 0.0, 1), std::invalid_argument);
  }

  SUBCASE("class pool exhaustion falls back to the remaining classes and is logged") {
    // extreme skew over a tiny pool forces every client onto the same classes
    auto [features, labels] = balanced_pool(3, 8, 4, 11);  // 24 samples, 8 per class
    int seen_events = 0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
      SplitResult split = dirichlet_split(features, labels, 3, 4, 0.05, seed);
      seen_events += split.pool_exhaustion_events;
      size_t assigned = 0;
      for (const auto& ds : split.clients) assigned += static_cast<size_t>(ds.sample_count());
      CHECK(assigned == 24);  // equal quotas of 6 are always met via the fallback
      check_multiset_conservation(split, 24);
    }
    CHECK(seen_events > 0);
  }
}

TEST_CASE("synthetic federation") {
  FederationSpec spec;
  spec.n_train = 10;
  spec.samples_per_client = 30;
  spec.feature_dim = 8;
  spec.num_classes = 4;
  spec.label_alpha = 0.5;

  SUBCASE("same seed twice is bitwise identical") {
    Federation a = make_synthetic_federation(spec, 77);
    Federation b = make_synthetic_federation(spec, 77);
    REQUIRE(a.train_clients.size() == b.train_clients.size());
    REQUIRE(a.novel_clients.size() == 1);  // round(10 / 10)
    for (size_t i = 0; i < a.train_clients.size(); ++i) {
      CHECK(std::memcmp(a.train_clients[i].features.v.data(), b.train_clients[i].features.v.data(),
                        a.train_clients[i].features.size() * sizeof(double)) == 0);
      CHECK(a.train_clients[i].labels == b.train_clients[i].labels);
    }
  }

  SUBCASE("heterogeneity off keeps label histograms near uniform") {
    FederationSpec iid = spec;
    iid.label_alpha = 0.0;
    iid.samples_per_client = 400;
    Federation fed = make_synthetic_federation(iid, 3);
    for (const auto& ds : fed.train_clients) {
      double total = 0;
      for (int v : ds.label_histogram) total += v;
      for (int v : ds.label_histogram) CHECK(std::abs(v / total - 0.25) < 0.08);
    }
  }

  SUBCASE("well separated classes are learnable by a centroid classifier") {
    FederationSpec sep = spec;
    sep.class_separation = 6.0;
    sep.label_alpha = 0.0;
    Federation fed = make_synthetic_federation(sep, 5);
    // train centroids on pooled training data
    std::vector<std::vector<double>> centroid(4, std::vector<double>(8, 0.0));
    std::vector<int> counts(4, 0);
    for (const auto& ds : fed.train_clients)
      for (int i = 0; i < ds.sample_count(); ++i) {
        int y = ds.labels[static_cast<size_t>(i)];
        ++counts[static_cast<size_t>(y)];
        for (int j = 0; j < 8; ++j) centroid[static_cast<size_t>(y)][static_cast<size_t>(j)] += ds.features.at(i, j);
      }
    for (int c = 0; c < 4; ++c)
      for (auto& v : centroid[static_cast<size_t>(c)]) v /= counts[static_cast<size_t>(c)];
    int correct = 0, total = 0;
    for (const auto& ds : fed.novel_clients)
      for (int i = 0; i < ds.sample_count(); ++i) {
        int best = 0;
        double best_d = 1e300;
        for (int c = 0; c < 4; ++c) {
          double d2 = 0.0;
          for (int j = 0; j < 8; ++j) {
            double diff = ds.features.at(i, j) - centroid[static_cast<size_t>(c)][static_cast<size_t>(j)];
            d2 += diff * diff;
          }
          if (d2 < best_d) best_d = d2, best = c;
        }
        correct += best == ds.labels[static_cast<size_t>(i)] ? 1 : 0;
        ++total;
      }
    CHECK(static_cast<double>(correct) / total >= 0.95);
  }

  SUBCASE("degenerate spec rejected") {
    FederationSpec bad = spec;
    bad.num_classes = 0;
    CHECK_THROWS_AS(make_synthetic_federation(bad, 1), std::invalid_argument);
  }

  SUBCASE("pathological synthetic federation deals K shards per client") {
    FederationSpec path = spec;
    path.split_kind = SplitKind::kPathological;
    path.shards_per_client = 2;
    path.samples_per_client = 40;
    path.n_train = 7;  // 8 clients total: 16 shards align with the 4 class blocks
    Federation fed = make_synthetic_federation(path, 9);
    REQUIRE(fed.train_clients.size() == 7);
    for (const auto& ds : fed.train_clients) {
      CHECK(ds.sample_count() == 40);
      int classes_present = 0;
      for (int v : ds.label_histogram) classes_present += v > 0 ? 1 : 0;
      CHECK(classes_present <= 2);
    }
    // bitwise deterministic like every other split
    Federation again = make_synthetic_federation(path, 9);
    CHECK(std::memcmp(fed.train_clients[3].features.v.data(),
                      again.train_clients[3].features.v.data(),
                      fed.train_clients[3].features.size() * sizeof(double)) == 0);

    FederationSpec bad = path;
    bad.novel_samples_per_client = 100;
    CHECK_THROWS_AS(make_synthetic_federation(bad, 1), std::invalid_argument);
  }
}

TEST_CASE("split dispatcher covers all three allocation modes") {
  auto [features, labels] = balanced_pool(4, 30, 4, 22);  // 120 samples
  SplitSpec spec;

  spec.kind = SplitKind::kPathological;
  spec.shards_per_client = 2;
  SplitResult path = apply_split(features, labels, 4, 6, spec, 5);
  REQUIRE(path.clients.size() == 6);
  check_multiset_conservation(path, 120);

  spec.kind = SplitKind::kDirichlet;
  spec.alpha = 0.4;
  SplitResult dir = apply_split(features, labels, 4, 6, spec, 5);
  REQUIRE(dir.clients.size() == 6);
  check_multiset_conservation(dir, 120);

  spec.alpha = 0.0;  // IID deal
  SplitResult iid = apply_split(features, labels, 4, 6, spec, 5);
  REQUIRE(iid.clients.size() == 6);
  for (const auto& ds : iid.clients) CHECK(ds.sample_count() == 20);
  check_multiset_conservation(iid, 120);
}

TEST_CASE("covariate corruption") {
  FederationSpec spec;
  spec.n_train = 4;
  spec.samples_per_client = 40;
  spec.feature_dim = 8;
  spec.num_classes = 4;
  Federation fed = make_synthetic_federation(spec, 21);
  const ClientDataset& ds = fed.train_clients[0];

  SUBCASE("severity zero is bitwise unchanged") {
    ClientDataset out = corrupt_covariate(ds, CorruptionKind::kRotation, 0.0, 99);
    CHECK(std::memcmp(out.features.v.data(), ds.features.v.data(),
                      ds.features.size() * sizeof(double)) == 0);
    ClientDataset out2 = corrupt_covariate(ds, CorruptionKind::kAdditiveNoise, 0.0, 99);
    CHECK(std::memcmp(out2.features.v.data(), ds.features.v.data(),
                      ds.features.size() * sizeof(double)) == 0);
  }

  SUBCASE("rotation preserves sample norms") {
    ClientDataset out = corrupt_covariate(ds, CorruptionKind::kRotation, 1.0, 99);
    for (int i = 0; i < ds.sample_count(); ++i) {
      double a = 0.0, b = 0.0;
      for (int j = 0; j < 8; ++j) {
        a += ds.features.at(i, j) * ds.features.at(i, j);
        b += out.features.at(i, j) * out.features.at(i, j);
      }
      CHECK(std::abs(std::sqrt(a) - std::sqrt(b)) < 1e-9);
    }
  }

  SUBCASE("applying the rotation twice equals the squared rotation") {
    ClientDataset once = corrupt_covariate(ds, CorruptionKind::kRotation, 1.0, 55);
    ClientDataset twice = corrupt_covariate(once, CorruptionKind::kRotation, 1.0, 55);
    Tensor r = rotation_matrix(8, 1.0, 55);
    Tensor squared = matmul(r, r);
    Tensor direct = matmul(ds.features, squared);
    for (size_t i = 0; i < direct.size(); ++i)
      CHECK(std::abs(direct.v[i] - twice.features.v[i]) < 1e-9);
  }

  SUBCASE("severity sweep degrades a frozen centroid model monotonically") {
    FederationSpec sep = spec;
    sep.class_separation = 4.0;
    sep.samples_per_client = 200;
    Federation f2 = make_synthetic_federation(sep, 31);
    // frozen model: class centroids from training clients
    std::vector<std::vector<double>> centroid(4, std::vector<double>(8, 0.0));
    std::vector<int> counts(4, 0);
    for (const auto& c : f2.train_clients)
      for (int i = 0; i < c.sample_count(); ++i) {
        int y = c.labels[static_cast<size_t>(i)];
        ++counts[static_cast<size_t>(y)];
        for (int j = 0; j < 8; ++j) centroid[static_cast<size_t>(y)][static_cast<size_t>(j)] += c.features.at(i, j);
      }
    for (int c = 0; c < 4; ++c)
      for (auto& v : centroid[static_cast<size_t>(c)]) v /= counts[static_cast<size_t>(c)];
    auto eval = [&](const ClientDataset& d) {
      int correct = 0;
      for (int i = 0; i < d.sample_count(); ++i) {
        int best = 0;
        double best_d = 1e300;
        for (int c = 0; c < 4; ++c) {
          double d2 = 0.0;
          for (int j = 0; j < 8; ++j) {
            double diff = d.features.at(i, j) - centroid[static_cast<size_t>(c)][static_cast<size_t>(j)];
            d2 += diff * diff;
          }
          if (d2 < best_d) best_d = d2, best = c;
        }
        correct += best == d.labels[static_cast<size_t>(i)] ? 1 : 0;
      }
      return static_cast<double>(correct) / d.sample_count();
    };
    const ClientDataset& novel = f2.novel_clients[0];
    double prev = 2.0;
    for (double severity : {0.0, 0.25, 0.5, 1.0}) {
      ClientDataset corrupted = corrupt_covariate(novel, CorruptionKind::kRotation, severity, 77);
      double acc = eval(corrupted);
      CHECK(acc <= prev + 1e-12);
      prev = acc;
    }
  }
}

TEST_CASE("label kl divergence") {
  SUBCASE("identical histograms give exactly zero") {
    std::vector<int> h{3, 5, 2, 0};
    CHECK(label_kl(h, h) == 0.0);
  }

  SUBCASE("disjoint two-class histograms match the closed form") {
    double s = 1e-3;
    double got = label_kl({1, 0}, {0, 1}, s);
    double p0 = (1 + s) / (1 + 2 * s), p1 = s / (1 + 2 * s);
    double want = p0 * std::log(p0 / p1) + p1 * std::log(p1 / p0);
    CHECK(std::abs(got - want) < 1e-12);
  }

  SUBCASE("non-negative on 1000 random histogram pairs") {
    Rng rng(17);
    for (int rep = 0; rep < 1000; ++rep) {
      std::vector<int> a(5), b(5);
      for (int i = 0; i < 5; ++i) {
        a[static_cast<size_t>(i)] = rng.uniform_int(20);
        b[static_cast<size_t>(i)] = rng.uniform_int(20);
      }
      CHECK(label_kl(a, b) >= 0.0);
    }
  }

  SUBCASE("kl to nearest train scans all clients") {
    FederationSpec spec;
    spec.n_train = 10;
    spec.samples_per_client = 50;
    spec.feature_dim = 8;
    spec.num_classes = 4;
    spec.label_alpha = 0.3;
    Federation fed = make_synthetic_federation(spec, 8);
    const ClientDataset& novel = fed.novel_clients[0];
    double got = kl_to_nearest_train(novel, fed.train_clients);
    double want = 1e300;
    for (const auto& t : fed.train_clients)
      want = std::min(want, label_kl(novel.label_histogram, t.label_histogram));
    CHECK(got == want);

    // identical histogram in the list pins the minimum at zero
    std::vector<ClientDataset> with_self = fed.train_clients;
    ClientDataset clone = novel;
    with_self.push_back(clone);
    CHECK(kl_to_nearest_train(novel, with_self) == 0.0);

    // single train client reduces to a direct divergence
    std::vector<ClientDataset> one{fed.train_clients[0]};
    CHECK(kl_to_nearest_train(novel, one) ==
          label_kl(novel.label_histogram, fed.train_clients[0].label_histogram));

    CHECK_THROWS_AS(kl_to_nearest_train(novel, {}), std::invalid_argument);
  }
}

TEST_CASE("train validation split") {
  FederationSpec spec;
  spec.n_train = 2;
  spec.samples_per_client = 40;
  spec.feature_dim = 8;
  spec.num_classes = 4;
  Federation fed = make_synthetic_federation(spec, 12);
  auto [train, val] = split_train_validation(fed.train_clients[0], 0.85, 5);
  CHECK(train.sample_count() == 34);
  CHECK(val.sample_count() == 6);
  CHECK(train.labeled());
  CHECK(val.labeled());
  // deterministic
  auto [train2, val2] = split_train_validation(fed.train_clients[0], 0.85, 5);
  CHECK(std::memcmp(train.features.v.data(), train2.features.v.data(),
                    train.features.size() * sizeof(double)) == 0);
}

TEST_CASE("feature csv ingestion round trip") {
  FederationSpec spec;
  spec.n_train = 3;
  spec.samples_per_client = 10;
  spec.feature_dim = 8;
  spec.num_classes = 4;
  Federation fed = make_synthetic_federation(spec, 14);
  std::vector<ClientDataset> all = fed.train_clients;
  ClientDataset stripped = ClientDataset::make_unlabeled(99, fed.novel_clients[0].features);
  all.push_back(stripped);

  std::string path = "/tmp/odpfl_features.csv";
  save_feature_csv(all, path);
  auto back = load_feature_csv(path, 4);
  REQUIRE(back.size() == all.size());
  for (size_t i = 0; i < all.size(); ++i) {
    CHECK(back[i].client_id == all[i].client_id);
    CHECK(back[i].labels == all[i].labels);
    CHECK(std::memcmp(back[i].features.v.data(), all[i].features.v.data(),
                      all[i].features.size() * sizeof(double)) == 0);
  }
  std::remove(path.c_str());

  // empty client dataset is rejected at construction
  CHECK_THROWS_WITH_AS(ClientDataset::make_unlabeled(1, Tensor::zeros({1})),
                       doctest::Contains("empty client dataset"), std::invalid_argument);

  // a client mixing labeled and unlabeled rows is rejected
  write_text_file("/tmp/odpfl_mixed.csv", "5,0,1.0,2.0\n5,-1,3.0,4.0\n");
  CHECK_THROWS_WITH_AS(load_feature_csv("/tmp/odpfl_mixed.csv", 2), doctest::Contains("mixes"),
                       std::runtime_error);
  std::remove("/tmp/odpfl_mixed.csv");
}

TEST_CASE("split manifest export") {
  auto [features, labels] = balanced_pool(4, 25, 4, 20);
  SplitResult split = dirichlet_split(features, labels, 4, 5, 1.0, 3);
  std::string path = "/tmp/odpfl_manifest.csv";
  save_split_manifest(split, path);
  std::string content = read_text_file(path);
  size_t rows = static_cast<size_t>(std::count(content.begin(), content.end(), '\n'));
  CHECK(rows == split.clients.size());
  std::remove(path.c_str());
}
