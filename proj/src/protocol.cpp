#include "odpfl/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "odpfl/serialize.hpp"

namespace odpfl {

namespace {

// register every tensor of a bundle as a tape leaf
WeightBundle leaf_bundle(Tape& tape, const WeightBundle& src, std::vector<std::string>* names,
                         std::vector<int>* ids) {
  WeightBundle out;
  for (size_t i = 0; i < src.size(); ++i) {
    Tensor t = src.tensor(i);
    t.node = -1;
    t = tape.leaf(t);
    if (names) names->push_back(src.name(i));
    if (ids) ids->push_back(t.node);
    out.add(src.name(i), std::move(t));
  }
  return out;
}

// collect adjoints into a bundle shaped like the parameters (zeros where no
// cotangent flowed)
WeightBundle adjoints_to_bundle(const std::vector<Tensor>& adjoints, const WeightBundle& params,
                                const std::vector<std::string>& names, const std::vector<int>& ids) {
  WeightBundle out;
  for (size_t i = 0; i < names.size(); ++i) {
    const Tensor& adj = adjoints[static_cast<size_t>(ids[i])];
    out.add(names[i], adj.size() ? adj : Tensor::zeros(params.at(names[i]).shape));
  }
  return out;
}

double dataset_loss(const TargetModelSpec& spec, const WeightBundle& w, const ClientDataset& data) {
  return softmax_cross_entropy(forward_target(spec, w, data.features), data.labels).v[0];
}

std::vector<int> sorted_cohort(int n_clients, int cohort_size, Rng& rng) {
  std::vector<int> cohort = rng.sample_without_replacement(n_clients, cohort_size);
  // reduce in client-id order so results never depend on sampling order
  std::sort(cohort.begin(), cohort.end());
  return cohort;
}

void hash_bytes(uint64_t& h, const void* data, size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
}

void hash_bundle(uint64_t& h, const WeightBundle& b) {
  for (size_t i = 0; i < b.size(); ++i) {
    hash_bytes(h, b.name(i).data(), b.name(i).size());
    hash_bytes(h, b.tensor(i).v.data(), b.tensor(i).size() * sizeof(double));
  }
}

Tensor encode_for_inference(const ServerState& server, const Tensor& features, Rng* rng) {
  const int limit = server.cfg.encode_batch_limit;
  if (limit > 0 && features.rows() > limit) {
    if (!rng)
      throw std::invalid_argument("inference encoding above the batch budget needs a random source");
    return encode_batched(server.encoder_spec, server.gamma, features, limit, *rng);
  }
  return encode_dataset(server.encoder_spec, server.gamma, features);
}

}  // namespace

void LocalTrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("local train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("local train: batch_size must be >= 1");
  if (lr < 0.0) throw std::invalid_argument("local train: negative learning rate");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("local train: momentum outside [0, 1)");
  if (prox_mu < 0.0) throw std::invalid_argument("local train: prox_mu must be >= 0");
}

const char* message_kind_name(MessageKind kind) {
  switch (kind) {
    case MessageKind::kEncoderDownload: return "encoder_download";
    case MessageKind::kDescriptorUpload: return "descriptor_upload";
    case MessageKind::kModelDownload: return "model_download";
    case MessageKind::kDeltaUpload: return "delta_upload";
    case MessageKind::kEncoderGradUpload: return "encoder_grad_upload";
  }
  return "unknown";
}

bool validate_round_transcript(const std::vector<RoundMessage>& transcript, std::string* error) {
  static const MessageKind legal[5] = {
      MessageKind::kEncoderDownload, MessageKind::kDescriptorUpload, MessageKind::kModelDownload,
      MessageKind::kDeltaUpload, MessageKind::kEncoderGradUpload};
  auto fail = [&](const std::string& msg) {
    if (error) *error = msg;
    return false;
  };
  if (transcript.size() % 5 != 0)
    return fail("transcript length " + std::to_string(transcript.size()) + " is not a multiple of 5");
  for (size_t i = 0; i < transcript.size(); i += 5) {
    int cid = transcript[i].client_id;
    for (size_t k = 0; k < 5; ++k) {
      const RoundMessage& msg = transcript[i + k];
      if (msg.client_id != cid)
        return fail("message " + std::to_string(i + k) + " interleaves clients");
      if (msg.kind != legal[k])
        return fail("message " + std::to_string(i + k) + " is " + message_kind_name(msg.kind) +
                    ", expected " + message_kind_name(legal[k]));
    }
  }
  return true;
}

std::vector<FederatedClient> split_federation_clients(const std::vector<ClientDataset>& clients,
                                                      double train_fraction, uint64_t seed) {
  std::vector<FederatedClient> out;
  out.reserve(clients.size());
  for (const auto& ds : clients) {
    auto [train, val] =
        split_train_validation(ds, train_fraction, derive_seed(seed, "client-split-" + std::to_string(ds.client_id)));
    out.push_back(FederatedClient{std::move(train), std::move(val)});
  }
  return out;
}

ServerState ServerState::init(const TargetModelSpec& target, const EncoderSpec& encoder,
                              const HyperNetworkSpec& hn, const ServerConfig& cfg, uint64_t seed) {
  target.validate();
  encoder.validate();
  hn.validate();
  cfg.local.validate();
  if (encoder.descriptor_dim != hn.embedding_dim)
    throw std::invalid_argument("server init: descriptor_dim " + std::to_string(encoder.descriptor_dim) +
                                " does not match hypernetwork embedding_dim " +
                                std::to_string(hn.embedding_dim));
  ServerState s;
  s.target_spec = target;
  s.encoder_spec = encoder;
  s.hn_spec = hn;
  s.cfg = cfg;
  Rng enc_rng(derive_seed(seed, "encoder-init"));
  s.gamma = encoder.init_weights(enc_rng);
  Rng hn_rng(derive_seed(seed, "hypernetwork-init"));
  s.theta = hn.init_weights(hn_rng);
  return s;
}

uint64_t ServerState::checksum() const {
  uint64_t h = 14695981039346656037ull;
  hash_bytes(h, &round, sizeof(round));
  hash_bundle(h, theta);
  hash_bundle(h, gamma);
  for (const auto& e : embedding_table) hash_bytes(h, e.v.data(), e.size() * sizeof(double));
  return h;
}

ClientUpdateResult client_update(const TargetModelSpec& spec, const WeightBundle& w,
                                 const ClientDataset& data, const LocalTrainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!data.labeled())
    throw std::invalid_argument("client_update: protocol violation, local training needs labels");
  const WeightBundle start = strip_nodes(w);

  ClientUpdateResult result;
  result.loss_before = dataset_loss(spec, start, data);

  WeightBundle current = start;
  WeightBundle velocity;
  const int m = data.sample_count();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto batches = partition_batches(m, std::min(cfg.batch_size, m), rng);
    for (const auto& batch : batches) {
      Tensor bx = gather_rows(data.features, batch);
      std::vector<int> by;
      by.reserve(batch.size());
      for (int i : batch) by.push_back(data.labels[static_cast<size_t>(i)]);

      Tape tape;
      std::vector<std::string> names;
      std::vector<int> ids;
      WeightBundle leaves = leaf_bundle(tape, current, &names, &ids);
      Tensor mask;
      const Tensor* mask_ptr = nullptr;
      if (spec.dropout_rate > 0.0 && !spec.hidden_dims.empty()) {
        mask = make_dropout_mask(bx.rows(), spec.hidden_dims.back(), spec.dropout_rate, rng);
        mask_ptr = &mask;
      }
      Tensor loss = softmax_cross_entropy(forward_target(spec, leaves, bx, &tape, mask_ptr), by, &tape);
      auto adjoints = tape.backward(AdjointSeed{loss.node, Tensor::scalar(1.0)});
      WeightBundle grads = adjoints_to_bundle(adjoints, current, names, ids);
      if (cfg.prox_mu > 0.0) {
        for (size_t i = 0; i < grads.size(); ++i) {
          const Tensor& cur = current.at(grads.name(i));
          const Tensor& anchor = start.at(grads.name(i));
          Tensor& g = grads.tensor(i);
          for (size_t k = 0; k < g.size(); ++k) g.v[k] += cfg.prox_mu * (cur.v[k] - anchor.v[k]);
        }
      }
      current = sgd_step(current, grads, cfg.lr, cfg.momentum, &velocity);
    }
  }
  result.loss_after = dataset_loss(spec, current, data);
  result.delta = bundle_sub(current, start);
  return result;
}

HnForward hn_forward(const HyperNetworkSpec& spec, const WeightBundle& theta, const Tensor& e) {
  HnForward fwd;
  WeightBundle theta_leaves = leaf_bundle(fwd.tape, theta, &fwd.theta_names, &fwd.theta_nodes);
  Tensor e_clean = e;
  e_clean.node = -1;
  Tensor e_leaf = fwd.tape.leaf(e_clean);
  fwd.embedding_node = e_leaf.node;
  fwd.generated = generate_weights(spec, theta_leaves, e_leaf, &fwd.tape);
  return fwd;
}

ServerBackpropResult server_backprop(const HnForward& fwd, const WeightBundle& delta_w,
                                     bool raw_sign) {
  fwd.generated.check_keys_match(delta_w, "server_backprop");
  std::vector<AdjointSeed> seeds;
  seeds.reserve(delta_w.size());
  const double sign = raw_sign ? 1.0 : -1.0;
  for (size_t i = 0; i < fwd.generated.size(); ++i) {
    const std::string& name = fwd.generated.name(i);
    const Tensor& gen = fwd.generated.tensor(i);
    const Tensor& delta = delta_w.at(name);
    if (delta.shape != gen.shape)
      throw std::invalid_argument("server_backprop: delta " + name + " has shape " +
                                  delta.shape_str() + ", generated " + gen.shape_str());
    Tensor cot = delta;
    cot.node = -1;
    for (auto& v : cot.v) v *= sign;
    seeds.push_back(AdjointSeed{gen.node, std::move(cot)});
  }
  auto adjoints = fwd.tape.backward(seeds);

  ServerBackpropResult out;
  WeightBundle theta_like;
  for (size_t i = 0; i < fwd.theta_names.size(); ++i)
    theta_like.add(fwd.theta_names[i], fwd.tape.value(fwd.theta_nodes[i]));
  out.dtheta = adjoints_to_bundle(adjoints, theta_like, fwd.theta_names, fwd.theta_nodes);
  const Tensor& de = adjoints[static_cast<size_t>(fwd.embedding_node)];
  out.dembedding = de.size() ? de : Tensor::zeros(fwd.tape.value(fwd.embedding_node).shape);
  return out;
}

EncoderForward encoder_forward(const EncoderSpec& spec, const WeightBundle& gamma,
                               const Tensor& samples, int batch_limit, Rng* rng) {
  EncoderForward fwd;
  WeightBundle gamma_leaves = leaf_bundle(fwd.tape, gamma, &fwd.gamma_names, &fwd.gamma_nodes);
  if (batch_limit > 0 && samples.rows() > batch_limit) {
    if (!rng) throw std::invalid_argument("encoder_forward: batched encoding needs a random source");
    auto batches = partition_batches(samples.rows(), batch_limit, *rng);
    Tensor acc;
    for (const auto& batch : batches) {
      Tensor d = encode_dataset(spec, gamma_leaves, gather_rows(samples, batch), &fwd.tape);
      acc = acc.size() == 0 ? d : add(acc, d, &fwd.tape);
    }
    fwd.descriptor = scale(acc, 1.0 / static_cast<double>(batches.size()), &fwd.tape);
  } else {
    fwd.descriptor = encode_dataset(spec, gamma_leaves, samples, &fwd.tape);
  }
  return fwd;
}

WeightBundle client_backprop(const EncoderForward& fwd, const Tensor& dembedding) {
  if (fwd.descriptor.node < 0) throw std::invalid_argument("client_backprop: stale encoder tape");
  Tensor seed = dembedding;
  seed.node = -1;
  auto adjoints = fwd.tape.backward(AdjointSeed{fwd.descriptor.node, std::move(seed)});
  WeightBundle gamma_like;
  for (size_t i = 0; i < fwd.gamma_names.size(); ++i)
    gamma_like.add(fwd.gamma_names[i], fwd.tape.value(fwd.gamma_nodes[i]));
  return adjoints_to_bundle(adjoints, gamma_like, fwd.gamma_names, fwd.gamma_nodes);
}

WeightBundle strip_nodes(const WeightBundle& bundle) {
  WeightBundle out;
  for (size_t i = 0; i < bundle.size(); ++i) {
    Tensor t = bundle.tensor(i);
    t.node = -1;
    out.add(bundle.name(i), std::move(t));
  }
  return out;
}

RoundLog train_round(ServerState& server, const std::vector<FederatedClient>& clients,
                     int cohort_size, Rng& rng) {
  if (clients.empty()) throw std::invalid_argument("train_round: empty federation");
  if (cohort_size < 1 || cohort_size > static_cast<int>(clients.size()))
    throw std::invalid_argument("train_round: cohort_size " + std::to_string(cohort_size) +
                                " outside [1, " + std::to_string(clients.size()) + "]");
  RoundLog log;
  log.round = server.round;
  std::vector<int> cohort = sorted_cohort(static_cast<int>(clients.size()), cohort_size, rng);

  WeightBundle dtheta_acc = WeightBundle::zeros_like(server.theta);
  WeightBundle dgamma_acc = WeightBundle::zeros_like(server.gamma);
  const size_t gamma_bytes = bundle_byte_size(server.gamma);

  for (int ci : cohort) {
    const FederatedClient& member = clients[static_cast<size_t>(ci)];
    const int cid = member.train.client_id;
    RoundClientLog entry;
    entry.client_id = cid;

    log.transcript.push_back({MessageKind::kEncoderDownload, cid, gamma_bytes});
    entry.bytes_down += gamma_bytes;

    EncoderForward enc = encoder_forward(server.encoder_spec, server.gamma, member.train.features,
                                         server.cfg.encode_batch_limit, &rng);
    size_t desc_bytes = descriptor_byte_size(enc.descriptor);
    log.transcript.push_back({MessageKind::kDescriptorUpload, cid, desc_bytes});
    entry.bytes_up += desc_bytes;

    HnForward hn = hn_forward(server.hn_spec, server.theta, enc.descriptor);
    WeightBundle model = strip_nodes(hn.generated);
    size_t model_bytes = bundle_byte_size(model);
    log.transcript.push_back({MessageKind::kModelDownload, cid, model_bytes});
    entry.bytes_down += model_bytes;

    ClientUpdateResult cu = client_update(server.target_spec, model, member.train,
                                          server.cfg.local, rng);
    size_t delta_bytes = bundle_byte_size(cu.delta);
    log.transcript.push_back({MessageKind::kDeltaUpload, cid, delta_bytes});
    entry.bytes_up += delta_bytes;

    ServerBackpropResult sb = server_backprop(hn, cu.delta, server.cfg.raw_delta_sign);
    WeightBundle dgamma = client_backprop(enc, sb.dembedding);
    size_t grad_bytes = bundle_byte_size(dgamma);
    log.transcript.push_back({MessageKind::kEncoderGradUpload, cid, grad_bytes});
    entry.bytes_up += grad_bytes;

    bundle_axpy(dtheta_acc, 1.0, sb.dtheta);
    bundle_axpy(dgamma_acc, 1.0, dgamma);

    entry.loss_before = cu.loss_before;
    entry.loss_after = cu.loss_after;
    log.clients.push_back(entry);
  }

  const double inv = 1.0 / static_cast<double>(cohort.size());
  WeightBundle dtheta = bundle_scale(dtheta_acc, inv);
  WeightBundle dgamma = bundle_scale(dgamma_acc, inv);
  if (server.cfg.weight_decay_hn > 0.0) bundle_axpy(dtheta, server.cfg.weight_decay_hn, server.theta);
  if (server.cfg.weight_decay_encoder > 0.0)
    bundle_axpy(dgamma, server.cfg.weight_decay_encoder, server.gamma);

  server.theta = sgd_step(server.theta, dtheta, server.cfg.lr_hn, server.cfg.momentum_hn,
                          &server.theta_velocity);
  server.gamma = sgd_step(server.gamma, dgamma, server.cfg.lr_encoder, server.cfg.momentum_encoder,
                          &server.gamma_velocity);
  server.round += 1;

  for (const auto& entry : log.clients) {
    log.mean_loss_before += entry.loss_before / static_cast<double>(log.clients.size());
    log.mean_loss_after += entry.loss_after / static_cast<double>(log.clients.size());
  }
  return log;
}

std::vector<double> train_phase1(ServerState& server, const std::vector<FederatedClient>& clients,
                                 int rounds, const TwoPhaseConfig& cfg, Rng& rng) {
  if (clients.empty()) throw std::invalid_argument("train_phase1: empty federation");
  const int n = static_cast<int>(clients.size());
  const int cohort_size = std::min(cfg.cohort_size, n);
  if (server.embedding_table.empty()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(server.hn_spec.embedding_dim));
    for (int k = 0; k < n; ++k) {
      Tensor e = Tensor::zeros({server.hn_spec.embedding_dim});
      for (auto& v : e.v) v = rng.uniform(-bound, bound);
      server.embedding_table.push_back(std::move(e));
      server.embedding_velocity.push_back(Tensor::zeros({server.hn_spec.embedding_dim}));
    }
  }
  std::vector<double> losses;
  for (int r = 0; r < rounds; ++r) {
    std::vector<int> cohort = sorted_cohort(n, cohort_size, rng);
    WeightBundle dtheta_acc = WeightBundle::zeros_like(server.theta);
    double mean_loss = 0.0;
    for (int ci : cohort) {
      HnForward hn = hn_forward(server.hn_spec, server.theta,
                                server.embedding_table[static_cast<size_t>(ci)]);
      ClientUpdateResult cu = client_update(server.target_spec, strip_nodes(hn.generated),
                                            clients[static_cast<size_t>(ci)].train,
                                            server.cfg.local, rng);
      ServerBackpropResult sb = server_backprop(hn, cu.delta, server.cfg.raw_delta_sign);
      bundle_axpy(dtheta_acc, 1.0, sb.dtheta);
      Tensor& e = server.embedding_table[static_cast<size_t>(ci)];
      Tensor& vel = server.embedding_velocity[static_cast<size_t>(ci)];
      for (size_t k = 0; k < e.size(); ++k) {
        vel.v[k] = cfg.momentum_embedding * vel.v[k] + sb.dembedding.v[k];
        e.v[k] -= cfg.lr_embedding * vel.v[k];
      }
      mean_loss += cu.loss_after / static_cast<double>(cohort.size());
    }
    WeightBundle dtheta = bundle_scale(dtheta_acc, 1.0 / static_cast<double>(cohort.size()));
    if (server.cfg.weight_decay_hn > 0.0) bundle_axpy(dtheta, server.cfg.weight_decay_hn, server.theta);
    server.theta = sgd_step(server.theta, dtheta, server.cfg.lr_hn, server.cfg.momentum_hn,
                            &server.theta_velocity);
    server.round += 1;
    losses.push_back(mean_loss);
  }
  return losses;
}

std::vector<double> train_phase2(ServerState& server, const std::vector<FederatedClient>& clients,
                                 int rounds, const TwoPhaseConfig& cfg, Rng& rng) {
  if (server.embedding_table.size() != clients.size())
    throw std::invalid_argument("train_phase2: embedding table missing; run phase 1 first");
  const int n = static_cast<int>(clients.size());
  const int cohort_size = std::min(cfg.cohort_size, n);
  std::vector<double> losses;
  for (int r = 0; r < rounds; ++r) {
    std::vector<int> cohort = sorted_cohort(n, cohort_size, rng);
    WeightBundle dgamma_acc = WeightBundle::zeros_like(server.gamma);
    double mean_loss = 0.0;
    for (int ci : cohort) {
      EncoderForward enc = encoder_forward(server.encoder_spec, server.gamma,
                                           clients[static_cast<size_t>(ci)].train.features,
                                           server.cfg.encode_batch_limit, &rng);
      Tensor loss = mean_squared_error(enc.descriptor, server.embedding_table[static_cast<size_t>(ci)],
                                       &enc.tape);
      auto adjoints = enc.tape.backward(AdjointSeed{loss.node, Tensor::scalar(1.0)});
      WeightBundle gamma_like;
      for (size_t i = 0; i < enc.gamma_names.size(); ++i)
        gamma_like.add(enc.gamma_names[i], enc.tape.value(enc.gamma_nodes[i]));
      bundle_axpy(dgamma_acc, 1.0,
                  adjoints_to_bundle(adjoints, gamma_like, enc.gamma_names, enc.gamma_nodes));
      mean_loss += loss.v[0] / static_cast<double>(cohort.size());
    }
    WeightBundle dgamma = bundle_scale(dgamma_acc, 1.0 / static_cast<double>(cohort.size()));
    if (server.cfg.weight_decay_encoder > 0.0)
      bundle_axpy(dgamma, server.cfg.weight_decay_encoder, server.gamma);
    server.gamma = sgd_step(server.gamma, dgamma, server.cfg.lr_encoder,
                            server.cfg.momentum_encoder, &server.gamma_velocity);
    server.round += 1;
    losses.push_back(mean_loss);
  }
  return losses;
}

std::vector<double> train_phase3(ServerState& server, const std::vector<FederatedClient>& clients,
                                 int rounds, const TwoPhaseConfig& cfg, Rng& rng) {
  if (clients.empty()) throw std::invalid_argument("train_phase3: empty federation");
  if (rounds > 0 && !server.theta_pre_finetune) server.theta_pre_finetune = server.theta;
  const int n = static_cast<int>(clients.size());
  const int cohort_size = std::min(cfg.cohort_size, n);
  std::vector<double> losses;
  for (int r = 0; r < rounds; ++r) {
    std::vector<int> cohort = sorted_cohort(n, cohort_size, rng);
    WeightBundle dtheta_acc = WeightBundle::zeros_like(server.theta);
    double mean_loss = 0.0;
    for (int ci : cohort) {
      const Tensor& features = clients[static_cast<size_t>(ci)].train.features;
      Tensor e = (server.cfg.encode_batch_limit > 0 && features.rows() > server.cfg.encode_batch_limit)
                     ? encode_batched(server.encoder_spec, server.gamma, features,
                                      server.cfg.encode_batch_limit, rng)
                     : encode_dataset(server.encoder_spec, server.gamma, features);
      HnForward hn = hn_forward(server.hn_spec, server.theta, e);
      ClientUpdateResult cu = client_update(server.target_spec, strip_nodes(hn.generated),
                                            clients[static_cast<size_t>(ci)].train,
                                            server.cfg.local, rng);
      ServerBackpropResult sb = server_backprop(hn, cu.delta, server.cfg.raw_delta_sign);
      bundle_axpy(dtheta_acc, 1.0, sb.dtheta);
      mean_loss += cu.loss_after / static_cast<double>(cohort.size());
    }
    WeightBundle dtheta = bundle_scale(dtheta_acc, 1.0 / static_cast<double>(cohort.size()));
    if (server.cfg.weight_decay_hn > 0.0) bundle_axpy(dtheta, server.cfg.weight_decay_hn, server.theta);
    server.theta = sgd_step(server.theta, dtheta, server.cfg.lr_hn, server.cfg.momentum_hn,
                            &server.theta_velocity);
    server.round += 1;
    losses.push_back(mean_loss);
  }
  return losses;
}

TwoPhaseLog train_two_phase(ServerState& server, const std::vector<FederatedClient>& clients,
                            const TwoPhaseConfig& cfg, Rng& rng) {
  if (cfg.phase1_rounds < 1)
    throw std::invalid_argument("train_two_phase: phase 1 needs a positive round budget");
  TwoPhaseLog log;
  log.phase1_loss = train_phase1(server, clients, cfg.phase1_rounds, cfg, rng);
  log.phase2_loss = train_phase2(server, clients, cfg.phase2_rounds, cfg, rng);
  if (cfg.phase3_rounds > 0)
    log.phase3_loss = train_phase3(server, clients, cfg.phase3_rounds, cfg, rng);
  return log;
}

InferenceResult infer_novel(const ServerState& server, const UnlabeledClient& novel,
                            const DPParams* dp, Rng* rng) {
  if (novel.features.rank() != 2 || novel.features.rows() < 1)
    throw std::invalid_argument("infer_novel: empty client dataset");
  InferenceResult out;
  const size_t gamma_bytes = bundle_byte_size(server.gamma);
  out.transcript.push_back({MessageKind::kEncoderDownload, novel.client_id, gamma_bytes});

  Tensor descriptor = encode_for_inference(server, novel.features, rng);
  if (dp) {
    if (!rng) throw std::invalid_argument("infer_novel: differential privacy needs a random source");
    if (dp->m != novel.features.rows())
      throw std::invalid_argument("infer_novel: dp params say m=" + std::to_string(dp->m) +
                                  " but the dataset has " + std::to_string(novel.features.rows()) +
                                  " samples");
    EncoderDpCertificate cert = certify_dp_encoder(server.encoder_spec, server.gamma);
    out.privatized = privatize_descriptor(descriptor, *dp, cert, *rng);
    descriptor = out.privatized->values;
  }
  out.descriptor = descriptor;
  out.transcript.push_back(
      {MessageKind::kDescriptorUpload, novel.client_id, descriptor_byte_size(descriptor)});

  out.model = strip_nodes(generate_weights(server.hn_spec, server.theta, descriptor));
  out.transcript.push_back({MessageKind::kModelDownload, novel.client_id, bundle_byte_size(out.model)});
  return out;
}

double evaluate_train_validation(const ServerState& server,
                                 const std::vector<FederatedClient>& clients,
                                 bool use_embedding_table) {
  if (clients.empty()) throw std::invalid_argument("evaluate_train_validation: no clients");
  if (use_embedding_table && server.embedding_table.size() != clients.size())
    throw std::invalid_argument("evaluate_train_validation: embedding table not trained");
  double acc = 0.0;
  for (size_t i = 0; i < clients.size(); ++i) {
    Tensor e = use_embedding_table
                   ? server.embedding_table[i]
                   : encode_dataset(server.encoder_spec, server.gamma, clients[i].train.features);
    WeightBundle w = strip_nodes(generate_weights(server.hn_spec, server.theta, e));
    acc += accuracy(server.target_spec, w, clients[i].validation.features, clients[i].validation.labels);
  }
  return acc / static_cast<double>(clients.size());
}

double evaluate_novel_client(const ServerState& server, const ClientDataset& novel) {
  if (!novel.labeled())
    throw std::invalid_argument("evaluate_novel_client: evaluation needs held labels");
  // deterministic per client so batched encoding stays reproducible
  Rng rng(derive_seed(0x6e6f76656cull, "novel-eval-" + std::to_string(novel.client_id)));
  InferenceResult inf = infer_novel(server, UnlabeledClient::from(novel), nullptr, &rng);
  return accuracy(server.target_spec, inf.model, novel.features, novel.labels);
}

}  // namespace odpfl
