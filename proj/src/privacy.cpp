#include "odpfl/privacy.hpp"

#include <cmath>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "odpfl/protocol.hpp"
#include "odpfl/serialize.hpp"
#include "odpfl/stats.hpp"

namespace odpfl {

void DPParams::validate() const {
  if (epsilon <= 0.0) throw std::invalid_argument("dp: epsilon must be positive");
  if (delta <= 0.0 || delta >= 1.0) throw std::invalid_argument("dp: delta outside (0, 1)");
  if (l_psi < 0.0 || b_phi < 0.0) throw std::invalid_argument("dp: negative Lipschitz or bound");
  if (m < 1) throw std::invalid_argument("dp: dataset size m must be >= 1");
}

double sensitivity_bound(double l_psi, double b_phi, int m) {
  if (m < 1) throw std::invalid_argument("sensitivity_bound: dataset size m must be >= 1");
  if (l_psi < 0.0 || b_phi < 0.0)
    throw std::invalid_argument("sensitivity_bound: constants must be non-negative");
  return (2.0 / static_cast<double>(m)) * l_psi * b_phi;
}

double gaussian_sigma(double dg, double epsilon, double delta) {
  if (dg < 0.0) throw std::invalid_argument("gaussian_sigma: negative sensitivity");
  if (epsilon <= 0.0) throw std::invalid_argument("gaussian_sigma: epsilon must be positive");
  if (delta <= 0.0 || delta >= 1.25)
    throw std::invalid_argument("gaussian_sigma: delta must lie in (0, 1.25) for a positive log");
  return std::sqrt(2.0 * dg * dg * std::log(1.25 / delta)) / epsilon;
}

EncoderDpCertificate certify_dp_encoder(const EncoderSpec& spec, const WeightBundle& gamma) {
  spec.validate();
  if (!spec.unit_sphere_normalize)
    throw std::runtime_error(
        "dp certification failed: phi outputs are not normalized to the unit sphere, so no bound "
        "on B_phi holds");
  if (spec.pool_split)
    throw std::runtime_error(
        "dp certification failed: split mean/max pooling is not a plain mean, the sensitivity "
        "bound does not apply");
  EncoderDpCertificate cert;
  cert.b_phi = 1.0;
  if (spec.psi_kind == PsiKind::kIdentityMean) {
    cert.l_psi = 1.0;
  } else {
    cert.l_psi = spectral_norm(gamma.at("psi.w"));
  }
  return cert;
}

PrivatizedDescriptor privatize_descriptor(const Tensor& descriptor, const DPParams& dp,
                                          const EncoderDpCertificate& cert, Rng& rng) {
  dp.validate();
  if (cert.b_phi <= 0.0 || cert.l_psi < 0.0)
    throw std::runtime_error("dp: descriptor privatization requires a valid encoder certificate");
  const double slack = 1e-12;
  if (dp.l_psi + slack < cert.l_psi || dp.b_phi + slack < cert.b_phi)
    throw std::runtime_error(
        "dp: requested constants understate the certified encoder (L_psi " +
        format_g17(cert.l_psi) + ", B_phi " + format_g17(cert.b_phi) +
        "); noise would be calibrated to a wrong sensitivity");
  PrivatizedDescriptor out;
  out.params = dp;
  out.sigma = gaussian_sigma(sensitivity_bound(dp.l_psi, dp.b_phi, dp.m), dp.epsilon, dp.delta);
  Tensor noisy = descriptor;
  noisy.node = -1;
  for (auto& v : noisy.v) v += out.sigma * rng.normal();
  out.values = std::move(noisy);
  return out;
}

double adjacent_descriptor_distance(const EncoderSpec& spec, const WeightBundle& gamma,
                                    const Tensor& base_samples, int row,
                                    const std::vector<double>& replacement) {
  if (row < 0 || row >= base_samples.rows())
    throw std::out_of_range("adjacent_descriptor_distance: row outside the dataset");
  if (static_cast<int>(replacement.size()) != base_samples.cols())
    throw std::invalid_argument("adjacent_descriptor_distance: replacement width mismatch");
  Tensor base_descriptor = encode_dataset(spec, gamma, base_samples);
  Tensor adjacent = base_samples;
  adjacent.node = -1;
  for (int j = 0; j < base_samples.cols(); ++j) adjacent.at(row, j) = replacement[static_cast<size_t>(j)];
  Tensor other = encode_dataset(spec, gamma, adjacent);
  double dist = 0.0;
  for (size_t k = 0; k < other.size(); ++k) {
    double diff = other.v[k] - base_descriptor.v[k];
    dist += diff * diff;
  }
  return std::sqrt(dist);
}

double empirical_sensitivity(const EncoderSpec& spec, const WeightBundle& gamma,
                             const Tensor& base_samples, int trials, Rng& rng) {
  if (trials < 1) throw std::invalid_argument("empirical_sensitivity: trials must be >= 1");
  const int m = base_samples.rows();
  const int d = base_samples.cols();

  // fresh replacement samples follow the base per-dimension statistics
  std::vector<double> dim_mean(static_cast<size_t>(d), 0.0), dim_sd(static_cast<size_t>(d), 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) dim_mean[static_cast<size_t>(j)] += base_samples.at(i, j);
  for (auto& v : dim_mean) v /= m;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < d; ++j) {
      double diff = base_samples.at(i, j) - dim_mean[static_cast<size_t>(j)];
      dim_sd[static_cast<size_t>(j)] += diff * diff;
    }
  for (auto& v : dim_sd) v = std::sqrt(v / std::max(1, m - 1));

  double worst = 0.0;
  std::vector<double> fresh(static_cast<size_t>(d));
  for (int t = 0; t < trials; ++t) {
    int swap = rng.uniform_int(m);
    for (int j = 0; j < d; ++j)
      fresh[static_cast<size_t>(j)] = dim_mean[static_cast<size_t>(j)] + dim_sd[static_cast<size_t>(j)] * rng.normal();
    worst = std::max(worst, adjacent_descriptor_distance(spec, gamma, base_samples, swap, fresh));
  }
  return worst;
}

std::vector<DpSweepRow> dp_accuracy_sweep(const ServerState& server,
                                          const std::vector<ClientDataset>& novel_clients,
                                          const std::vector<double>& epsilons, double delta,
                                          const std::vector<int>& sizes, int repeats, Rng& rng) {
  if (novel_clients.empty()) throw std::invalid_argument("dp_accuracy_sweep: no novel clients");
  if (repeats < 1) throw std::invalid_argument("dp_accuracy_sweep: repeats must be >= 1");
  for (const auto& ds : novel_clients)
    if (!ds.labeled())
      throw std::invalid_argument("dp_accuracy_sweep: evaluation needs held novel labels");

  std::vector<DpSweepRow> rows;

  // noiseless reference: full data, no mechanism
  {
    DpSweepRow ref;
    ref.delta = delta;
    std::vector<double> accs;
    for (const auto& ds : novel_clients) accs.push_back(evaluate_novel_client(server, ds));
    ref.accuracy_mean = mean(accs);
    ref.accuracy_sem = sem(accs);
    ref.repeats = static_cast<int>(accs.size());
    rows.push_back(ref);
  }

  for (double eps : epsilons) {
    for (int m : sizes) {
      std::vector<double> accs;
      for (const auto& ds : novel_clients) {
        if (ds.sample_count() < m) {
          std::cerr << "dp sweep: skipping client " << ds.client_id << " at m=" << m
                    << " (only " << ds.sample_count() << " samples)\n";
          continue;
        }
        for (int rep = 0; rep < repeats; ++rep) {
          std::vector<int> idx = rng.sample_without_replacement(ds.sample_count(), m);
          UnlabeledClient sub{ds.client_id, gather_rows(ds.features, idx)};
          DPParams dp;
          dp.epsilon = eps;
          dp.delta = delta;
          dp.l_psi = 1.0;
          dp.b_phi = 1.0;
          dp.m = m;
          InferenceResult inf = infer_novel(server, sub, &dp, &rng);
          accs.push_back(accuracy(server.target_spec, inf.model, ds.features, ds.labels));
        }
      }
      if (accs.empty()) continue;
      DpSweepRow row;
      row.epsilon = eps;
      row.delta = delta;
      row.m = m;
      row.sigma = gaussian_sigma(sensitivity_bound(1.0, 1.0, m), eps, delta);
      row.accuracy_mean = mean(accs);
      row.accuracy_sem = sem(accs);
      row.repeats = static_cast<int>(accs.size());
      rows.push_back(row);
    }
  }
  return rows;
}

void save_dp_sweep_csv(const std::vector<DpSweepRow>& rows, const std::string& path) {
  std::ostringstream os;
  os << "epsilon,delta,m,sigma,accuracy_mean,accuracy_sem,repeats\n";
  for (const auto& r : rows)
    os << format_g17(r.epsilon) << "," << format_g17(r.delta) << "," << r.m << ","
       << format_g17(r.sigma) << "," << format_g17(r.accuracy_mean) << ","
       << format_g17(r.accuracy_sem) << "," << r.repeats << "\n";
  write_text_file(path, os.str());
}

}  // namespace odpfl
