#include "odpfl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include "odpfl/serialize.hpp"
#include "odpfl/stats.hpp"

namespace odpfl {

namespace {

// ---- config value parsing ----

int parse_int(const std::string& s) { return std::stoi(s); }
double parse_double(const std::string& s) { return std::stod(s); }
uint64_t parse_u64(const std::string& s) { return std::stoull(s); }

bool parse_bool(const std::string& s) {
  if (s == "1" || s == "true" || s == "on") return true;
  if (s == "0" || s == "false" || s == "off") return false;
  throw std::invalid_argument("config: boolean value must be 0/1/true/false, got '" + s + "'");
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string fmt_bool(bool b) { return b ? "1" : "0"; }

struct Binding {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = {
      {"method", [](const ExperimentConfig& c) { return c.method; },
       [](ExperimentConfig& c, const std::string& v) { c.method = v; }},
      {"run.rounds", [](const ExperimentConfig& c) { return std::to_string(c.rounds); },
       [](ExperimentConfig& c, const std::string& v) { c.rounds = parse_int(v); }},
      {"run.cohort_fraction", [](const ExperimentConfig& c) { return format_g17(c.cohort_fraction); },
       [](ExperimentConfig& c, const std::string& v) { c.cohort_fraction = parse_double(v); }},
      {"run.seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
       [](ExperimentConfig& c, const std::string& v) { c.seed = parse_u64(v); }},
      {"run.out_dir", [](const ExperimentConfig& c) { return c.out_dir; },
       [](ExperimentConfig& c, const std::string& v) { c.out_dir = v; }},
      {"data.features_csv", [](const ExperimentConfig& c) { return c.features_csv; },
       [](ExperimentConfig& c, const std::string& v) { c.features_csv = v; }},
      {"federation.n_train", [](const ExperimentConfig& c) { return std::to_string(c.federation.n_train); },
       [](ExperimentConfig& c, const std::string& v) { c.federation.n_train = parse_int(v); }},
      {"federation.n_novel", [](const ExperimentConfig& c) { return std::to_string(c.federation.n_novel); },
       [](ExperimentConfig& c, const std::string& v) { c.federation.n_novel = parse_int(v); }},
      {"federation.samples_per_client",
       [](const ExperimentConfig& c) { return std::to_string(c.federation.samples_per_client); },
       [](ExperimentConfig& c, const std::string& v) { c.federation.samples_per_client = parse_int(v); }},
      {"federation.novel_samples_per_client",
       [](const ExperimentConfig& c) { return std::to_string(c.federation.novel_samples_per_client); },
       [](ExperimentConfig& c, const std::string& v) { c.federation.novel_samples_per_client = parse_int(v); }},
      {"federation.feature_dim",
       [](const ExperimentConfig& c) { return std::to_string(c.federation.feature_dim); },
       [](ExperimentConfig& c, const std::string& v) { c.federation.feature_dim = parse_int(v); }},
      {"federation.num_classes",
       [](const ExperimentConfig& c) { return std::to_string(c.federation.num_classes); },
       [](ExperimentConfig& c, const std::string& v) { c.federation.num_classes = parse_int(v); }},
      {"federation.split_kind",
       [](const ExperimentConfig& c) {
         return c.federation.split_kind == SplitKind::kPathological ? "pathological" : "dirichlet";
       },
       [](ExperimentConfig& c, const std::string& v) {
         if (v == "dirichlet")
           c.federation.split_kind = SplitKind::kDirichlet;
         else if (v == "pathological")
           c.federation.split_kind = SplitKind::kPathological;
         else
           throw std::invalid_argument("config: federation.split_kind must be dirichlet or pathological");
       }},
      {"federation.shards_per_client",
       [](const ExperimentConfig& c) { return std::to_string(c.federation.shards_per_client); },
       [](ExperimentConfig& c, const std::string& v) { c.federation.shards_per_client = parse_int(v); }},
      {"federation.label_alpha",
       [](const ExperimentConfig& c) { return format_g17(c.federation.label_alpha); },
       [](ExperimentConfig& c, const std::string& v) { c.federation.label_alpha = parse_double(v); }},
      {"federation.rotation_strength",
       [](const ExperimentConfig& c) { return format_g17(c.federation.rotation_strength); },
       [](ExperimentConfig& c, const std::string& v) { c.federation.rotation_strength = parse_double(v); }},
      {"federation.class_separation",
       [](const ExperimentConfig& c) { return format_g17(c.federation.class_separation); },
       [](ExperimentConfig& c, const std::string& v) { c.federation.class_separation = parse_double(v); }},
      {"federation.noise_sigma",
       [](const ExperimentConfig& c) { return format_g17(c.federation.noise_sigma); },
       [](ExperimentConfig& c, const std::string& v) { c.federation.noise_sigma = parse_double(v); }},
      {"federation.train_fraction",
       [](const ExperimentConfig& c) { return format_g17(c.federation.train_fraction); },
       [](ExperimentConfig& c, const std::string& v) { c.federation.train_fraction = parse_double(v); }},
      {"local.epochs", [](const ExperimentConfig& c) { return std::to_string(c.local.epochs); },
       [](ExperimentConfig& c, const std::string& v) { c.local.epochs = parse_int(v); }},
      {"local.batch_size", [](const ExperimentConfig& c) { return std::to_string(c.local.batch_size); },
       [](ExperimentConfig& c, const std::string& v) { c.local.batch_size = parse_int(v); }},
      {"local.lr", [](const ExperimentConfig& c) { return format_g17(c.local.lr); },
       [](ExperimentConfig& c, const std::string& v) { c.local.lr = parse_double(v); }},
      {"local.momentum", [](const ExperimentConfig& c) { return format_g17(c.local.momentum); },
       [](ExperimentConfig& c, const std::string& v) { c.local.momentum = parse_double(v); }},
      {"server.lr_hn", [](const ExperimentConfig& c) { return format_g17(c.lr_hn); },
       [](ExperimentConfig& c, const std::string& v) { c.lr_hn = parse_double(v); }},
      {"server.lr_encoder", [](const ExperimentConfig& c) { return format_g17(c.lr_encoder); },
       [](ExperimentConfig& c, const std::string& v) { c.lr_encoder = parse_double(v); }},
      {"server.momentum_hn", [](const ExperimentConfig& c) { return format_g17(c.momentum_hn); },
       [](ExperimentConfig& c, const std::string& v) { c.momentum_hn = parse_double(v); }},
      {"server.momentum_encoder",
       [](const ExperimentConfig& c) { return format_g17(c.momentum_encoder); },
       [](ExperimentConfig& c, const std::string& v) { c.momentum_encoder = parse_double(v); }},
      {"server.weight_decay_hn", [](const ExperimentConfig& c) { return format_g17(c.weight_decay_hn); },
       [](ExperimentConfig& c, const std::string& v) { c.weight_decay_hn = parse_double(v); }},
      {"server.weight_decay_encoder",
       [](const ExperimentConfig& c) { return format_g17(c.weight_decay_encoder); },
       [](ExperimentConfig& c, const std::string& v) { c.weight_decay_encoder = parse_double(v); }},
      {"server.encode_batch_limit",
       [](const ExperimentConfig& c) { return std::to_string(c.encode_batch_limit); },
       [](ExperimentConfig& c, const std::string& v) { c.encode_batch_limit = parse_int(v); }},
      {"server.raw_delta_sign", [](const ExperimentConfig& c) { return fmt_bool(c.raw_delta_sign); },
       [](ExperimentConfig& c, const std::string& v) { c.raw_delta_sign = parse_bool(v); }},
      {"encoder.phi_hidden", [](const ExperimentConfig& c) { return fmt_int_list(c.phi_hidden); },
       [](ExperimentConfig& c, const std::string& v) { c.phi_hidden = parse_int_list(v); }},
      {"encoder.descriptor_dim",
       [](const ExperimentConfig& c) { return std::to_string(c.descriptor_dim); },
       [](ExperimentConfig& c, const std::string& v) { c.descriptor_dim = parse_int(v); }},
      {"encoder.pool_split", [](const ExperimentConfig& c) { return fmt_bool(c.pool_split); },
       [](ExperimentConfig& c, const std::string& v) { c.pool_split = parse_bool(v); }},
      {"encoder.unit_sphere", [](const ExperimentConfig& c) { return fmt_bool(c.unit_sphere); },
       [](ExperimentConfig& c, const std::string& v) { c.unit_sphere = parse_bool(v); }},
      {"encoder.psi_kind", [](const ExperimentConfig& c) { return c.psi_kind; },
       [](ExperimentConfig& c, const std::string& v) { c.psi_kind = v; }},
      {"hn.trunk_hidden", [](const ExperimentConfig& c) { return fmt_int_list(c.trunk_hidden); },
       [](ExperimentConfig& c, const std::string& v) { c.trunk_hidden = parse_int_list(v); }},
      {"target.hidden", [](const ExperimentConfig& c) { return fmt_int_list(c.target_hidden); },
       [](ExperimentConfig& c, const std::string& v) { c.target_hidden = parse_int_list(v); }},
      {"target.dropout", [](const ExperimentConfig& c) { return format_g17(c.target_dropout); },
       [](ExperimentConfig& c, const std::string& v) { c.target_dropout = parse_double(v); }},
      {"two_phase.phase1_rounds",
       [](const ExperimentConfig& c) { return std::to_string(c.phase1_rounds); },
       [](ExperimentConfig& c, const std::string& v) { c.phase1_rounds = parse_int(v); }},
      {"two_phase.phase2_rounds",
       [](const ExperimentConfig& c) { return std::to_string(c.phase2_rounds); },
       [](ExperimentConfig& c, const std::string& v) { c.phase2_rounds = parse_int(v); }},
      {"two_phase.phase3_rounds",
       [](const ExperimentConfig& c) { return std::to_string(c.phase3_rounds); },
       [](ExperimentConfig& c, const std::string& v) { c.phase3_rounds = parse_int(v); }},
      {"two_phase.lr_embedding", [](const ExperimentConfig& c) { return format_g17(c.lr_embedding); },
       [](ExperimentConfig& c, const std::string& v) { c.lr_embedding = parse_double(v); }},
      {"two_phase.momentum_embedding",
       [](const ExperimentConfig& c) { return format_g17(c.momentum_embedding); },
       [](ExperimentConfig& c, const std::string& v) { c.momentum_embedding = parse_double(v); }},
      {"fedprox.mu", [](const ExperimentConfig& c) { return format_g17(c.prox_mu); },
       [](ExperimentConfig& c, const std::string& v) { c.prox_mu = parse_double(v); }},
      {"early_stop.enabled", [](const ExperimentConfig& c) { return fmt_bool(c.early_stop); },
       [](ExperimentConfig& c, const std::string& v) { c.early_stop = parse_bool(v); }},
      {"early_stop.eval_every", [](const ExperimentConfig& c) { return std::to_string(c.eval_every); },
       [](ExperimentConfig& c, const std::string& v) { c.eval_every = parse_int(v); }},
      {"early_stop.patience", [](const ExperimentConfig& c) { return std::to_string(c.patience); },
       [](ExperimentConfig& c, const std::string& v) { c.patience = parse_int(v); }},
      {"early_stop.min_rounds", [](const ExperimentConfig& c) { return std::to_string(c.min_rounds); },
       [](ExperimentConfig& c, const std::string& v) { c.min_rounds = parse_int(v); }},
      {"eval.all_novel_samples",
       [](const ExperimentConfig& c) { return fmt_bool(c.eval_all_novel_samples); },
       [](ExperimentConfig& c, const std::string& v) { c.eval_all_novel_samples = parse_bool(v); }},
      {"adist.steps", [](const ExperimentConfig& c) { return std::to_string(c.adist_steps); },
       [](ExperimentConfig& c, const std::string& v) { c.adist_steps = parse_int(v); }},
      {"adist.lr", [](const ExperimentConfig& c) { return format_g17(c.adist_lr); },
       [](ExperimentConfig& c, const std::string& v) { c.adist_lr = parse_double(v); }},
  };
  return table;
}

const Binding& find_binding(const std::string& key) {
  for (const auto& b : bindings())
    if (b.key == key) return b;
  throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// ---- budgeted training loop with validation-based early stopping ----

long run_rounds(const ExperimentConfig& cfg, int budget, const std::function<void(long)>& step,
                const std::function<double()>& evaluate, const std::function<void()>& snapshot,
                const std::function<void()>& restore, double* best_out) {
  double best = evaluate();
  long best_round = 0;
  snapshot();
  long r = 0;
  for (; r < budget; ++r) {
    step(r);
    bool last = r + 1 == budget;
    if (cfg.early_stop && (last || (r + 1) % cfg.eval_every == 0)) {
      double v = evaluate();
      if (v > best) {
        best = v;
        best_round = r + 1;
        snapshot();
      } else if (r + 1 >= cfg.min_rounds && (r + 1) - best_round >= cfg.patience) {
        ++r;
        break;
      }
    }
  }
  if (cfg.early_stop) {
    restore();
  } else {
    best = evaluate();
  }
  if (best_out) *best_out = best;
  return r;
}

double global_validation_accuracy(const GlobalModelState& state,
                                  const std::vector<FederatedClient>& clients) {
  double acc = 0.0;
  for (const auto& c : clients)
    acc += accuracy(state.spec, state.weights, c.validation.features, c.validation.labels);
  return acc / static_cast<double>(clients.size());
}

void append_round_rows(std::vector<RoundLogRow>& rows, const RoundLog& log) {
  for (const auto& c : log.clients)
    rows.push_back({log.round, c.client_id, c.loss_before, c.loss_after, c.bytes_up, c.bytes_down});
}

void append_baseline_rows(std::vector<RoundLogRow>& rows, const BaselineRoundLog& log) {
  for (const auto& c : log.clients)
    rows.push_back({log.round, c.client_id, c.loss_before, c.loss_after, c.bytes_up, c.bytes_down});
}

}  // namespace

int ExperimentConfig::resolved_cohort_size() const {
  int n = federation.n_train;
  return std::max(1, static_cast<int>(std::lround(cohort_fraction * n)));
}

int ExperimentConfig::resolved_descriptor_dim() const {
  return descriptor_dim > 0 ? descriptor_dim : default_descriptor_dim(federation.n_train);
}

EncoderSpec ExperimentConfig::encoder_spec() const {
  EncoderSpec enc;
  enc.input_dim = federation.feature_dim;
  enc.phi_hidden_dims = phi_hidden;
  enc.descriptor_dim = resolved_descriptor_dim();
  enc.pool_split = pool_split;
  enc.unit_sphere_normalize = unit_sphere;
  if (psi_kind == "identity_mean")
    enc.psi_kind = PsiKind::kIdentityMean;
  else if (psi_kind == "linear_head")
    enc.psi_kind = PsiKind::kLinearHead;
  else
    throw std::invalid_argument("config: encoder.psi_kind must be identity_mean or linear_head");
  enc.validate();
  return enc;
}

TargetModelSpec ExperimentConfig::target_spec() const {
  TargetModelSpec t;
  t.input_dim = federation.feature_dim;
  t.hidden_dims = target_hidden;
  t.num_classes = federation.num_classes;
  t.dropout_rate = target_dropout;
  t.validate();
  return t;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& b : bindings()) keys.push_back(b.key);
  return keys;
}

void config_set(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_binding(key).set(cfg, value);
}

std::string config_get(const ExperimentConfig& cfg, const std::string& key) {
  return find_binding(key).get(cfg);
}

std::string config_to_manifest(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "library_version = " << kLibraryVersion << "\n";
  for (const auto& b : bindings()) os << b.key << " = " << b.get(cfg) << "\n";
  for (const auto& [key, values] : cfg.grid) {
    os << "grid." << key << " =";
    for (size_t i = 0; i < values.size(); ++i) os << (i ? "," : " ") << values[i];
    os << "\n";
  }
  return os.str();
}

ExperimentConfig config_from_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key == "library_version") continue;
    if (key.rfind("grid.", 0) == 0) {
      std::vector<std::string> values;
      std::stringstream ss(value);
      std::string tok;
      while (std::getline(ss, tok, ',')) values.push_back(trim(tok));
      cfg.grid.emplace_back(key.substr(5), values);
      continue;
    }
    config_set(cfg, key, value);
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  return config_from_text(read_text_file(path));
}

const std::vector<std::string>& method_registry() {
  static const std::vector<std::string> methods = {
      "odpfl_hn", "odpfl_hn_two_phase", "fedavg", "fedprox",
      "pfl_sampled", "pfl_nearest", "pfl_ensemble"};
  return methods;
}

void save_metrics_csv(const std::vector<MetricsRecord>& records, const std::string& path) {
  std::ostringstream os;
  os << "method,seed,client_id,client_kind,accuracy,kl_to_nearest_train,"
        "corruption_kind,corruption_severity,dp_epsilon,dp_m\n";
  for (const auto& r : records)
    os << r.method << "," << r.seed << "," << r.client_id << "," << r.client_kind << ","
       << format_g17(r.accuracy) << "," << format_g17(r.kl_to_nearest_train) << ","
       << r.corruption_kind << "," << format_g17(r.corruption_severity) << ","
       << format_g17(r.dp_epsilon) << "," << r.dp_m << "\n";
  write_text_file(path, os.str());
}

std::vector<MetricsRecord> load_metrics_csv(const std::string& path) {
  std::istringstream is(read_text_file(path));
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(path + ": empty metrics file");
  std::vector<MetricsRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != 10) throw std::runtime_error(path + ": malformed metrics row");
    MetricsRecord r;
    r.method = cells[0];
    r.seed = std::stoull(cells[1]);
    r.client_id = std::stoi(cells[2]);
    r.client_kind = cells[3];
    r.accuracy = std::stod(cells[4]);
    r.kl_to_nearest_train = std::stod(cells[5]);
    r.corruption_kind = cells[6];
    r.corruption_severity = std::stod(cells[7]);
    r.dp_epsilon = std::stod(cells[8]);
    r.dp_m = std::stoi(cells[9]);
    out.push_back(std::move(r));
  }
  return out;
}

Federation build_federation(const ExperimentConfig& cfg) {
  if (!cfg.features_csv.empty()) {
    std::vector<ClientDataset> all = load_feature_csv(cfg.features_csv, cfg.federation.num_classes);
    int n_novel = cfg.federation.n_novel >= 0
                      ? cfg.federation.n_novel
                      : std::max(1, static_cast<int>(std::lround(all.size() / 11.0)));
    if (n_novel >= static_cast<int>(all.size()))
      throw std::invalid_argument("ingest: novel client count leaves no training clients");
    Federation fed;
    fed.spec = cfg.federation;
    fed.spec.n_train = static_cast<int>(all.size()) - n_novel;
    fed.spec.n_novel = n_novel;
    for (size_t i = 0; i < all.size(); ++i) {
      if (static_cast<int>(i) < fed.spec.n_train)
        fed.train_clients.push_back(std::move(all[i]));
      else
        fed.novel_clients.push_back(std::move(all[i]));
    }
    return fed;
  }
  return make_synthetic_federation(cfg.federation, derive_seed(cfg.seed, "federation"));
}

double TrainedMethod::evaluate_novel(const ClientDataset& novel) const {
  return evaluate_novel(novel, novel);
}

double TrainedMethod::evaluate_novel(const ClientDataset& model_source,
                                     const ClientDataset& scored) const {
  if (!scored.labeled())
    throw std::invalid_argument("evaluate_novel: evaluation needs held novel labels");
  if (method == "odpfl_hn" || method == "odpfl_hn_two_phase") {
    Rng rng(derive_seed(0x6e6f76656cull, "novel-eval-" + std::to_string(model_source.client_id)));
    InferenceResult inf = infer_novel(*server, UnlabeledClient::from(model_source), nullptr, &rng);
    return accuracy(server->target_spec, inf.model, scored.features, scored.labels);
  }
  if (method == "fedavg" || method == "fedprox")
    return accuracy(global->spec, global->weights, scored.features, scored.labels);
  if (method == "pfl_sampled") return pfl_sampled_accuracy(server->target_spec, *pool, scored);
  if (method == "pfl_ensemble") return pfl_ensemble_accuracy(server->target_spec, *pool, scored);
  if (method == "pfl_nearest") {
    const WeightBundle& model =
        pfl_nearest(*pool, clients, UnlabeledClient::from(model_source), adist);
    return accuracy(server->target_spec, model, scored.features, scored.labels);
  }
  throw std::invalid_argument("evaluate_novel: unknown method " + method);
}

TrainedMethod train_method(const ExperimentConfig& cfg,
                           const std::vector<FederatedClient>& clients) {
  const auto& registry = method_registry();
  if (std::find(registry.begin(), registry.end(), cfg.method) == registry.end()) {
    std::string names;
    for (const auto& m : registry) names += (names.empty() ? "" : ", ") + m;
    throw std::invalid_argument("unknown method '" + cfg.method + "'; registry: " + names);
  }
  TrainedMethod tm;
  tm.method = cfg.method;
  tm.clients = clients;
  tm.adist.steps = cfg.adist_steps;
  tm.adist.lr = cfg.adist_lr;
  tm.adist.seed = derive_seed(cfg.seed, "a-distance");

  const int cohort = std::min<int>(cfg.resolved_cohort_size(), static_cast<int>(clients.size()));
  Rng rng(derive_seed(cfg.seed, "train-" + cfg.method));

  if (cfg.method == "fedavg" || cfg.method == "fedprox") {
    GlobalModelState state = GlobalModelState::init(cfg.target_spec(), derive_seed(cfg.seed, "model-init"));
    GlobalModelState snapshot = state;
    double mu = cfg.method == "fedprox" ? cfg.prox_mu : 0.0;
    tm.rounds_run = run_rounds(
        cfg, cfg.rounds,
        [&](long) {
          BaselineRoundLog log = cfg.method == "fedavg"
                                     ? fedavg_round(state, clients, cohort, cfg.local, rng)
                                     : fedprox_round(state, clients, cohort, mu, cfg.local, rng);
          append_baseline_rows(tm.round_rows, log);
        },
        [&] { return global_validation_accuracy(state, clients); }, [&] { snapshot = state; },
        [&] { state = snapshot; }, &tm.final_validation_accuracy);
    tm.global = std::move(state);
    return tm;
  }

  ServerConfig scfg;
  scfg.lr_hn = cfg.lr_hn;
  scfg.lr_encoder = cfg.lr_encoder;
  scfg.momentum_hn = cfg.momentum_hn;
  scfg.momentum_encoder = cfg.momentum_encoder;
  scfg.weight_decay_hn = cfg.weight_decay_hn;
  scfg.weight_decay_encoder = cfg.weight_decay_encoder;
  scfg.local = cfg.local;
  scfg.encode_batch_limit = cfg.encode_batch_limit;
  scfg.raw_delta_sign = cfg.raw_delta_sign;
  EncoderSpec enc = cfg.encoder_spec();
  TargetModelSpec target = cfg.target_spec();
  HyperNetworkSpec hn = HyperNetworkSpec::for_target(target, enc.descriptor_dim, cfg.trunk_hidden);
  ServerState server = ServerState::init(target, enc, hn, scfg, derive_seed(cfg.seed, "model-init"));
  ServerState snapshot = server;

  TwoPhaseConfig tp;
  tp.cohort_size = cohort;
  tp.lr_embedding = cfg.lr_embedding;
  tp.momentum_embedding = cfg.momentum_embedding;

  if (cfg.method == "odpfl_hn") {
    tm.rounds_run = run_rounds(
        cfg, cfg.rounds,
        [&](long) {
          RoundLog log = train_round(server, clients, cohort, rng);
          append_round_rows(tm.round_rows, log);
        },
        [&] { return evaluate_train_validation(server, clients); }, [&] { snapshot = server; },
        [&] { server = snapshot; }, &tm.final_validation_accuracy);
    tm.server = std::move(server);
    return tm;
  }

  // embedding-table training drives the two-phase method and the pfl pools
  const int p1 = cfg.phase1_rounds >= 0 ? cfg.phase1_rounds : cfg.rounds;
  if (p1 < 1) throw std::invalid_argument("phase 1 needs a positive round budget");
  long p1_rounds = run_rounds(
      cfg, p1,
      [&](long) {
        std::vector<double> losses = train_phase1(server, clients, 1, tp, rng);
        tm.round_rows.push_back({server.round - 1, -1, losses[0], losses[0], 0, 0});
      },
      [&] {
        // the table only exists once phase 1 has stepped; any real evaluation
        // must beat the sentinel so the restored snapshot always carries one
        return server.embedding_table.empty() ? -1.0
                                              : evaluate_train_validation(server, clients, true);
      },
      [&] { snapshot = server; }, [&] { server = snapshot; }, &tm.final_validation_accuracy);
  tm.rounds_run = p1_rounds;

  if (cfg.method != "odpfl_hn_two_phase") {
    tm.pool = materialize_pool(server, clients);
    tm.server = std::move(server);
    return tm;
  }

  const int p2 = cfg.phase2_rounds >= 0 ? cfg.phase2_rounds : cfg.rounds;
  ServerState snap2 = server;
  double enc_val = 0.0;
  tm.rounds_run += run_rounds(
      cfg, p2,
      [&](long) {
        std::vector<double> losses = train_phase2(server, clients, 1, tp, rng);
        tm.round_rows.push_back({server.round - 1, -1, losses[0], losses[0], 0, 0});
      },
      [&] { return evaluate_train_validation(server, clients); }, [&] { snap2 = server; },
      [&] { server = snap2; }, &enc_val);
  tm.final_validation_accuracy = enc_val;

  if (cfg.phase3_rounds > 0) {
    for (int r = 0; r < cfg.phase3_rounds; ++r) {
      std::vector<double> losses = train_phase3(server, clients, 1, tp, rng);
      tm.round_rows.push_back({server.round - 1, -1, losses[0], losses[0], 0, 0});
    }
    tm.rounds_run += cfg.phase3_rounds;
    tm.final_validation_accuracy = evaluate_train_validation(server, clients);
  }
  tm.server = std::move(server);
  return tm;
}

namespace {

void save_round_rows(const std::string& method, const std::vector<RoundLogRow>& rows,
                     const std::string& path) {
  std::ostringstream os;
  os << "method,round,client_id,loss_before,loss_after,bytes_up,bytes_down\n";
  for (const auto& r : rows)
    os << method << "," << r.round << "," << r.client_id << "," << format_g17(r.loss_before) << ","
       << format_g17(r.loss_after) << "," << r.bytes_up << "," << r.bytes_down << "\n";
  write_text_file(path, os.str());
}

void save_checkpoints(const TrainedMethod& tm, const std::string& dir) {
  if (tm.server) {
    save_bundle(tm.server->theta, dir + "/theta.bin");
    save_bundle(tm.server->gamma, dir + "/gamma.bin");
    if (!tm.server->embedding_table.empty()) {
      WeightBundle table;
      for (size_t i = 0; i < tm.server->embedding_table.size(); ++i)
        table.add("e" + std::to_string(i), tm.server->embedding_table[i]);
      save_bundle(table, dir + "/embedding_table.bin");
    }
    if (tm.server->theta_pre_finetune)
      save_bundle(*tm.server->theta_pre_finetune, dir + "/theta_pre_finetune.bin");
  }
  if (tm.global) save_bundle(tm.global->weights, dir + "/global.bin");
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg) {
  Federation fed = build_federation(cfg);
  std::vector<FederatedClient> clients =
      split_federation_clients(fed.train_clients, cfg.federation.train_fraction,
                               derive_seed(cfg.seed, "train-validation"));
  TrainedMethod tm = train_method(cfg, clients);

  std::filesystem::create_directories(cfg.out_dir);

  RunResult result;
  result.dir = cfg.out_dir;
  result.final_validation_accuracy = tm.final_validation_accuracy;
  result.rounds_run = tm.rounds_run;

  // training-client rows: personalized (or global) accuracy on own validation
  for (size_t i = 0; i < clients.size(); ++i) {
    MetricsRecord r;
    r.method = cfg.method;
    r.seed = cfg.seed;
    r.client_id = clients[i].train.client_id;
    r.client_kind = "train";
    if (tm.server && tm.method != "pfl_sampled" && tm.method != "pfl_nearest" &&
        tm.method != "pfl_ensemble") {
      Tensor e = tm.server->embedding_table.empty()
                     ? encode_dataset(tm.server->encoder_spec, tm.server->gamma, clients[i].train.features)
                     : tm.server->embedding_table[i];
      WeightBundle w = strip_nodes(generate_weights(tm.server->hn_spec, tm.server->theta, e));
      r.accuracy = accuracy(tm.server->target_spec, w, clients[i].validation.features,
                            clients[i].validation.labels);
    } else if (tm.global) {
      r.accuracy = accuracy(tm.global->spec, tm.global->weights, clients[i].validation.features,
                            clients[i].validation.labels);
    } else {
      r.accuracy = accuracy(tm.server->target_spec, tm.pool->models[i],
                            clients[i].validation.features, clients[i].validation.labels);
    }
    // distance to the nearest other training client
    double best = -1.0;
    for (size_t j = 0; j < fed.train_clients.size(); ++j) {
      if (fed.train_clients[j].client_id == r.client_id) continue;
      double kl = label_kl(fed.train_clients[i].label_histogram, fed.train_clients[j].label_histogram);
      if (best < 0.0 || kl < best) best = kl;
    }
    r.kl_to_nearest_train = std::max(0.0, best);
    result.metrics.push_back(std::move(r));
  }

  std::vector<double> novel_accs;
  for (const auto& novel : fed.novel_clients) {
    MetricsRecord r;
    r.method = cfg.method;
    r.seed = cfg.seed;
    r.client_id = novel.client_id;
    r.client_kind = "novel";
    if (cfg.eval_all_novel_samples) {
      r.accuracy = tm.evaluate_novel(novel);
    } else {
      // descriptors come from the held-in part; scoring uses the held-out part
      auto [infer_part, score_part] = split_train_validation(
          novel, cfg.federation.train_fraction,
          derive_seed(cfg.seed, "novel-split-" + std::to_string(novel.client_id)));
      r.accuracy = tm.evaluate_novel(infer_part, score_part);
    }
    r.kl_to_nearest_train = kl_to_nearest_train(novel, fed.train_clients);
    novel_accs.push_back(r.accuracy);
    result.metrics.push_back(std::move(r));
  }
  result.mean_novel_accuracy = mean(novel_accs);

  save_metrics_csv(result.metrics, cfg.out_dir + "/metrics.csv");
  save_round_rows(cfg.method, tm.round_rows, cfg.out_dir + "/rounds.csv");
  save_checkpoints(tm, cfg.out_dir);
  write_text_file(cfg.out_dir + "/manifest.txt", config_to_manifest(cfg));
  return result;
}

GridSearchResult hyperparameter_search(const ExperimentConfig& cfg) {
  if (cfg.grid.empty()) throw std::invalid_argument("hyperparameter_search: empty grid");
  GridSearchResult result;

  std::vector<size_t> sizes;
  size_t total = 1;
  for (const auto& [key, values] : cfg.grid) {
    if (values.empty()) throw std::invalid_argument("hyperparameter_search: empty axis for " + key);
    sizes.push_back(values.size());
    total *= values.size();
  }

  int best_index = -1;
  double best_score = -1.0;
  double best_local_lr = 0.0;
  std::string best_key;
  ExperimentConfig best_cfg;

  for (size_t cell = 0; cell < total; ++cell) {
    ExperimentConfig run_cfg = cfg;
    run_cfg.grid.clear();
    GridCell record;
    size_t rest = cell;
    for (size_t axis = 0; axis < cfg.grid.size(); ++axis) {
      size_t idx = rest % sizes[axis];
      rest /= sizes[axis];
      const auto& [key, values] = cfg.grid[axis];
      config_set(run_cfg, key, values[idx]);
      record.overrides.emplace_back(key, values[idx]);
    }
    run_cfg.out_dir = cfg.out_dir + "/cell_" + std::to_string(cell);
    RunResult run = run_experiment(run_cfg);
    record.validation_accuracy = run.final_validation_accuracy;
    record.dir = run.dir;

    std::string cell_key;
    for (const auto& [k, v] : record.overrides) cell_key += k + "=" + v + ";";
    bool better = false;
    if (record.validation_accuracy > best_score) {
      better = true;
    } else if (record.validation_accuracy == best_score) {
      if (run_cfg.local.lr < best_local_lr) better = true;
      else if (run_cfg.local.lr == best_local_lr && cell_key < best_key) better = true;
    }
    if (better) {
      best_index = static_cast<int>(cell);
      best_score = record.validation_accuracy;
      best_local_lr = run_cfg.local.lr;
      best_key = cell_key;
      best_cfg = run_cfg;
    }
    result.cells.push_back(std::move(record));
  }
  result.best_config = best_cfg;
  result.best_index = best_index;
  return result;
}

void save_grid_report_csv(const GridSearchResult& result, const std::string& path) {
  std::ostringstream os;
  os << "cell,overrides,validation_accuracy\n";
  for (size_t i = 0; i < result.cells.size(); ++i) {
    os << i << ",";
    const auto& cell = result.cells[i];
    for (size_t k = 0; k < cell.overrides.size(); ++k)
      os << (k ? ";" : "") << cell.overrides[k].first << "=" << cell.overrides[k].second;
    os << "," << format_g17(cell.validation_accuracy) << "\n";
  }
  write_text_file(path, os.str());
}

KlAnalysis kl_analysis(const std::vector<std::string>& metrics_csv_paths) {
  KlAnalysis out;
  for (const auto& path : metrics_csv_paths) {
    for (const auto& r : load_metrics_csv(path)) {
      if (r.client_kind != "novel") continue;
      out.points.push_back({r.client_id, r.seed, r.kl_to_nearest_train, r.accuracy});
    }
  }
  if (out.points.size() >= 5) {
    std::vector<double> kl, acc;
    for (const auto& p : out.points) {
      kl.push_back(p.kl);
      acc.push_back(p.accuracy);
    }
    out.spearman_correlation = spearman(kl, acc);
  }
  return out;
}

void save_kl_analysis_csv(const KlAnalysis& analysis, const std::string& path) {
  std::ostringstream os;
  os << "client_id,seed,kl_to_nearest_train,accuracy\n";
  for (const auto& p : analysis.points)
    os << p.client_id << "," << p.seed << "," << format_g17(p.kl) << "," << format_g17(p.accuracy)
       << "\n";
  write_text_file(path, os.str());
}

void export_embeddings(const ServerState& server, const std::vector<FederatedClient>& clients,
                       const std::string& path) {
  std::ostringstream os;
  os << "client_id,dominant_labels,descriptor\n";
  for (const auto& c : clients) {
    Tensor e = encode_dataset(server.encoder_spec, server.gamma, c.train.features);
    // top two classes by count, ties toward the lower class id
    const auto& hist = c.train.label_histogram;
    int first = 0, second = -1;
    for (size_t k = 1; k < hist.size(); ++k)
      if (hist[k] > hist[static_cast<size_t>(first)]) first = static_cast<int>(k);
    for (size_t k = 0; k < hist.size(); ++k) {
      if (static_cast<int>(k) == first) continue;
      if (second < 0 || hist[k] > hist[static_cast<size_t>(second)]) second = static_cast<int>(k);
    }
    os << c.train.client_id << "," << first;
    if (second >= 0 && hist[static_cast<size_t>(second)] > 0) os << "|" << second;
    for (double v : e.v) os << "," << format_g17(v);
    os << "\n";
  }
  write_text_file(path, os.str());
}

std::vector<CorruptSweepRow> corrupt_sweep(const ExperimentConfig& cfg,
                                           const std::vector<double>& severities,
                                           CorruptionKind kind) {
  Federation fed = build_federation(cfg);
  std::vector<FederatedClient> clients =
      split_federation_clients(fed.train_clients, cfg.federation.train_fraction,
                               derive_seed(cfg.seed, "train-validation"));
  TrainedMethod tm = train_method(cfg, clients);
  const std::string kind_name = kind == CorruptionKind::kRotation ? "rotation" : "additive_noise";

  std::vector<CorruptSweepRow> rows;
  std::vector<MetricsRecord> records;
  for (double severity : severities) {
    std::vector<double> accs;
    for (const auto& novel : fed.novel_clients) {
      ClientDataset corrupted = corrupt_covariate(
          novel, kind, severity, derive_seed(cfg.seed, "corrupt-" + std::to_string(novel.client_id)));
      accs.push_back(tm.evaluate_novel(corrupted));

      MetricsRecord r;
      r.method = cfg.method;
      r.seed = cfg.seed;
      r.client_id = novel.client_id;
      r.client_kind = "novel";
      r.accuracy = accs.back();
      r.kl_to_nearest_train = kl_to_nearest_train(novel, fed.train_clients);
      r.corruption_kind = kind_name;
      r.corruption_severity = severity;
      records.push_back(std::move(r));
    }
    CorruptSweepRow row;
    row.method = cfg.method;
    row.seed = cfg.seed;
    row.kind = kind_name;
    row.severity = severity;
    row.accuracy_mean = mean(accs);
    row.accuracy_sem = sem(accs);
    rows.push_back(row);
  }
  std::filesystem::create_directories(cfg.out_dir);
  save_metrics_csv(records, cfg.out_dir + "/metrics.csv");
  return rows;
}

void save_corrupt_sweep_csv(const std::vector<CorruptSweepRow>& rows, const std::string& path) {
  std::ostringstream os;
  os << "method,seed,kind,severity,accuracy_mean,accuracy_sem\n";
  for (const auto& r : rows)
    os << r.method << "," << r.seed << "," << r.kind << "," << format_g17(r.severity) << ","
       << format_g17(r.accuracy_mean) << "," << format_g17(r.accuracy_sem) << "\n";
  write_text_file(path, os.str());
}

uint64_t file_checksum(const std::string& path) {
  std::string content = read_text_file(path);
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : content) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace odpfl
