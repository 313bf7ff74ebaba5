#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "odpfl/baselines.hpp"
#include "odpfl/federation.hpp"
#include "odpfl/privacy.hpp"
#include "odpfl/protocol.hpp"

namespace odpfl {

inline constexpr const char* kLibraryVersion = "0.1.0";

// every field has a default; an empty config is runnable
struct ExperimentConfig {
  FederationSpec federation;
  std::string features_csv;  // when set, ingest this file instead of synthesizing

  std::string method = "odpfl_hn";
  int rounds = 500;
  double cohort_fraction = 0.1;
  uint64_t seed = 0;
  std::string out_dir = "results/run";

  LocalTrainConfig local;

  double lr_hn = 0.05;
  double lr_encoder = 0.05;
  double momentum_hn = 0.9;
  double momentum_encoder = 0.9;
  double weight_decay_hn = 0.0;
  double weight_decay_encoder = 0.0;
  int encode_batch_limit = 0;
  bool raw_delta_sign = false;  // ablation: seed the chain rule with +delta

  std::vector<int> phi_hidden{64};
  int descriptor_dim = -1;  // -1 resolves to default_descriptor_dim(n_train)
  bool pool_split = false;
  bool unit_sphere = false;
  std::string psi_kind = "identity_mean";
  std::vector<int> trunk_hidden{100, 100, 100};
  std::vector<int> target_hidden{32};
  double target_dropout = 0.0;

  int phase1_rounds = -1;  // -1 resolves to rounds
  int phase2_rounds = -1;
  int phase3_rounds = 0;
  double lr_embedding = 0.05;
  double momentum_embedding = 0.9;

  double prox_mu = 0.01;

  bool early_stop = true;
  int eval_every = 25;
  int patience = 50;
  int min_rounds = 150;  // warmup floor: the patience rule cannot halt before this

  bool eval_all_novel_samples = true;  // off: score a held 15% novel split

  int adist_steps = 200;
  double adist_lr = 0.1;

  // grid axes for hyperparameter_search: config key -> candidate values
  std::vector<std::pair<std::string, std::vector<std::string>>> grid;

  int resolved_cohort_size() const;
  int resolved_descriptor_dim() const;
  EncoderSpec encoder_spec() const;
  TargetModelSpec target_spec() const;
};

// ---- flat key=value config text (dotted sections, one key per line) ----

std::vector<std::string> config_keys();
void config_set(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string config_get(const ExperimentConfig& cfg, const std::string& key);
// full resolved config in registry order, plus the library version
std::string config_to_manifest(const ExperimentConfig& cfg);
ExperimentConfig config_from_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

const std::vector<std::string>& method_registry();

struct MetricsRecord {
  std::string method;
  uint64_t seed = 0;
  int client_id = -1;
  std::string client_kind;  // train | novel
  double accuracy = 0.0;
  double kl_to_nearest_train = 0.0;
  std::string corruption_kind = "none";
  double corruption_severity = 0.0;
  double dp_epsilon = -1.0;  // -1 marks dp off
  int dp_m = -1;
};

void save_metrics_csv(const std::vector<MetricsRecord>& records, const std::string& path);
std::vector<MetricsRecord> load_metrics_csv(const std::string& path);

struct RoundLogRow {
  long round = -1;
  int client_id = -1;
  double loss_before = 0.0;
  double loss_after = 0.0;
  size_t bytes_up = 0;
  size_t bytes_down = 0;
};

// a trained method behind one evaluation surface
struct TrainedMethod {
  std::string method;
  std::optional<ServerState> server;
  std::optional<GlobalModelState> global;
  std::optional<PersonalizedPool> pool;
  std::vector<FederatedClient> clients;
  ADistanceConfig adist;
  double final_validation_accuracy = 0.0;
  long rounds_run = 0;
  std::vector<RoundLogRow> round_rows;

  double evaluate_novel(const ClientDataset& novel) const;
  // model built from the submitted features, accuracy on the scored split
  double evaluate_novel(const ClientDataset& model_source, const ClientDataset& scored) const;
};

TrainedMethod train_method(const ExperimentConfig& cfg,
                           const std::vector<FederatedClient>& clients);

// builds the federation for a config (synthetic or ingested)
Federation build_federation(const ExperimentConfig& cfg);

struct RunResult {
  std::string dir;
  std::vector<MetricsRecord> metrics;
  double mean_novel_accuracy = 0.0;
  double final_validation_accuracy = 0.0;
  long rounds_run = 0;
};

// full pipeline: federation, training with validation-based early stopping,
// novel-client evaluation, metrics/rounds/checkpoints/manifest on disk
RunResult run_experiment(const ExperimentConfig& cfg);

struct GridCell {
  std::vector<std::pair<std::string, std::string>> overrides;
  double validation_accuracy = 0.0;
  std::string dir;
};

struct GridSearchResult {
  std::vector<GridCell> cells;       // in grid enumeration order
  ExperimentConfig best_config;
  int best_index = -1;
};

// exhaustive grid scored on training-client validation accuracy; ties break
// toward the lower local learning rate, then lexicographic overrides
GridSearchResult hyperparameter_search(const ExperimentConfig& cfg);
void save_grid_report_csv(const GridSearchResult& result, const std::string& path);

struct KlPoint {
  int client_id = -1;
  uint64_t seed = 0;
  double kl = 0.0;
  double accuracy = 0.0;
};

struct KlAnalysis {
  std::vector<KlPoint> points;
  std::optional<double> spearman_correlation;  // absent below 5 points
};

// pools novel-client rows from several runs' metrics files
KlAnalysis kl_analysis(const std::vector<std::string>& metrics_csv_paths);
void save_kl_analysis_csv(const KlAnalysis& analysis, const std::string& path);

// one row per client: id, dominant labels, then descriptor coordinates
void export_embeddings(const ServerState& server, const std::vector<FederatedClient>& clients,
                       const std::string& path);

struct CorruptSweepRow {
  std::string method;
  uint64_t seed = 0;
  std::string kind;
  double severity = 0.0;
  double accuracy_mean = 0.0;
  double accuracy_sem = 0.0;
};

// trains once, then scores novel clients under each corruption severity
std::vector<CorruptSweepRow> corrupt_sweep(const ExperimentConfig& cfg,
                                           const std::vector<double>& severities,
                                           CorruptionKind kind);
void save_corrupt_sweep_csv(const std::vector<CorruptSweepRow>& rows, const std::string& path);

uint64_t file_checksum(const std::string& path);

}  // namespace odpfl
