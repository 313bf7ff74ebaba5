#pragma once

#include <optional>
#include <string>
#include <vector>

#include "odpfl/federation.hpp"
#include "odpfl/models.hpp"
#include "odpfl/privacy.hpp"
#include "odpfl/rng.hpp"

namespace odpfl {

struct LocalTrainConfig {
  int epochs = 1;
  int batch_size = 32;
  double lr = 0.01;       // eta_local
  double momentum = 0.5;  // mu_local
  double prox_mu = 0.0;   // proximal pull toward the starting weights (0 = off)

  void validate() const;
};

enum class MessageKind {
  kEncoderDownload,
  kDescriptorUpload,
  kModelDownload,
  kDeltaUpload,
  kEncoderGradUpload,
};

const char* message_kind_name(MessageKind kind);

struct RoundMessage {
  MessageKind kind;
  int client_id;
  size_t bytes;
};

// a legal training round is, per participating client, exactly:
// EncoderDownload, DescriptorUpload, ModelDownload, DeltaUpload, EncoderGradUpload
bool validate_round_transcript(const std::vector<RoundMessage>& transcript,
                               std::string* error = nullptr);

// a training client's local data, split once into train and validation parts
struct FederatedClient {
  ClientDataset train;
  ClientDataset validation;
};

std::vector<FederatedClient> split_federation_clients(const std::vector<ClientDataset>& clients,
                                                      double train_fraction, uint64_t seed);

struct ServerConfig {
  double lr_hn = 0.05;
  double lr_encoder = 0.05;
  double momentum_hn = 0.9;
  double momentum_encoder = 0.9;
  double weight_decay_hn = 0.0;
  double weight_decay_encoder = 0.0;
  LocalTrainConfig local;
  int encode_batch_limit = 0;  // > 0: encode in batches of this size when the split is larger
  bool raw_delta_sign = false; // ablation: seed the chain rule with +delta instead of -delta
};

struct ServerState {
  TargetModelSpec target_spec;
  EncoderSpec encoder_spec;
  HyperNetworkSpec hn_spec;
  ServerConfig cfg;
  WeightBundle theta;
  WeightBundle gamma;
  WeightBundle theta_velocity;
  WeightBundle gamma_velocity;
  long round = 0;

  // two-phase artifacts
  std::vector<Tensor> embedding_table;           // per train client, phase 1
  std::vector<Tensor> embedding_velocity;
  std::optional<WeightBundle> theta_pre_finetune;  // snapshot taken before phase 3

  static ServerState init(const TargetModelSpec& target, const EncoderSpec& encoder,
                          const HyperNetworkSpec& hn, const ServerConfig& cfg, uint64_t seed);

  // digest over parameters, table and round counter; bitwise-sensitive
  uint64_t checksum() const;
};

// ---- single-client primitives (Algorithm-1 legs) ----

struct ClientUpdateResult {
  WeightBundle delta;  // w_new - w
  double loss_before = 0.0;
  double loss_after = 0.0;
};

// E local epochs of minibatch SGD from w; returns the weight delta
ClientUpdateResult client_update(const TargetModelSpec& spec, const WeightBundle& w,
                                 const ClientDataset& data, const LocalTrainConfig& cfg, Rng& rng);

// recorded hypernetwork forward, kept so the proxy gradient can flow back
struct HnForward {
  Tape tape;
  WeightBundle generated;  // tensors carry their tape node ids
  std::vector<std::string> theta_names;
  std::vector<int> theta_nodes;
  int embedding_node = -1;
};

HnForward hn_forward(const HyperNetworkSpec& spec, const WeightBundle& theta, const Tensor& e);

struct ServerBackpropResult {
  WeightBundle dtheta;
  Tensor dembedding;
};

// seeds the chain rule with -delta_w (or +delta_w under the raw-sign ablation)
// and returns vector-Jacobian products for theta and the embedding
ServerBackpropResult server_backprop(const HnForward& fwd, const WeightBundle& delta_w,
                                     bool raw_sign = false);

// recorded encoder forward over a client's training split
struct EncoderForward {
  Tape tape;
  Tensor descriptor;
  std::vector<std::string> gamma_names;
  std::vector<int> gamma_nodes;
};

EncoderForward encoder_forward(const EncoderSpec& spec, const WeightBundle& gamma,
                               const Tensor& samples, int batch_limit = 0, Rng* rng = nullptr);

// gamma cotangents from the descriptor cotangent (sign inherited from the seed)
WeightBundle client_backprop(const EncoderForward& fwd, const Tensor& dembedding);

// copy with tape node ids cleared, for values that leave the recorded pass
WeightBundle strip_nodes(const WeightBundle& bundle);

// ---- rounds ----

struct RoundClientLog {
  int client_id = -1;
  double loss_before = 0.0;
  double loss_after = 0.0;
  size_t bytes_up = 0;
  size_t bytes_down = 0;
};

struct RoundLog {
  long round = -1;
  std::vector<RoundClientLog> clients;
  std::vector<RoundMessage> transcript;
  double mean_loss_before = 0.0;
  double mean_loss_after = 0.0;
};

// one communication round: sample a cohort, run the five-message exchange per
// member, average the proxy gradients, apply one optimizer step each to theta
// and gamma
RoundLog train_round(ServerState& server, const std::vector<FederatedClient>& clients,
                     int cohort_size, Rng& rng);

// ---- two-phase training ----

struct TwoPhaseConfig {
  int phase1_rounds = 500;
  int phase2_rounds = 500;
  int phase3_rounds = 0;  // 0 disables hypernetwork fine-tuning
  int cohort_size = 5;
  double lr_embedding = 0.01;
  double momentum_embedding = 0.9;
};

struct TwoPhaseLog {
  std::vector<double> phase1_loss;  // mean local loss after update, per round
  std::vector<double> phase2_loss;  // mean embedding regression loss, per round
  std::vector<double> phase3_loss;
};

// phase 1: theta plus a per-client embedding table; phase 2: encoder regresses
// the learned embeddings; phase 3 (optional): freeze the encoder, fine-tune
// theta from its predictions (pre-fine-tune theta snapshot is preserved)
TwoPhaseLog train_two_phase(ServerState& server, const std::vector<FederatedClient>& clients,
                            const TwoPhaseConfig& cfg, Rng& rng);

// individual phases, exposed for the baselines that need only phase 1
std::vector<double> train_phase1(ServerState& server, const std::vector<FederatedClient>& clients,
                                 int rounds, const TwoPhaseConfig& cfg, Rng& rng);
std::vector<double> train_phase2(ServerState& server, const std::vector<FederatedClient>& clients,
                                 int rounds, const TwoPhaseConfig& cfg, Rng& rng);
std::vector<double> train_phase3(ServerState& server, const std::vector<FederatedClient>& clients,
                                 int rounds, const TwoPhaseConfig& cfg, Rng& rng);

// ---- inference for a novel client ----

struct InferenceResult {
  WeightBundle model;
  Tensor descriptor;  // exactly what was uploaded: privatized when dp is active
  std::vector<RoundMessage> transcript;
  std::optional<PrivatizedDescriptor> privatized;
};

// The only client-to-server payload is the descriptor. Accepts a label-free
// view by construction; dp, when given, must match the dataset size.
InferenceResult infer_novel(const ServerState& server, const UnlabeledClient& novel,
                            const DPParams* dp = nullptr, Rng* rng = nullptr);

// ---- evaluation helpers ----

// mean accuracy of per-client generated models on training-client validation
// splits; use_embedding_table scores the phase-1 table instead of the encoder
double evaluate_train_validation(const ServerState& server,
                                 const std::vector<FederatedClient>& clients,
                                 bool use_embedding_table = false);

// generates a model from unlabeled features, scores it against held labels
double evaluate_novel_client(const ServerState& server, const ClientDataset& novel);

}  // namespace odpfl
