#include "odpfl/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <iomanip>
#include <vector>

#include "odpfl/models.hpp"
#include "odpfl/rng.hpp"
#include "odpfl/tensor.hpp"

namespace odpfl {

namespace {

constexpr double kTolerance = 1e-4;
constexpr double kStep = 1e-5;

Tensor random_tensor(const std::vector<int>& shape, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  for (auto& x : t.v) {
    x = rng.uniform(-1.0, 1.0);
    // keep relu kinks and pooling ties out of the finite-difference window
    if (std::abs(x) < 5e-3) x += x >= 0 ? 5e-3 : -5e-3;
  }
  return t;
}

std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + kStep;
    double hi = f(x);
    x[i] = keep - kStep;
    double lo = f(x);
    x[i] = keep;
    g[i] = (hi - lo) / (2.0 * kStep);
  }
  return g;
}

double worst_mismatch(const std::vector<double>& ad, const std::vector<double>& fd) {
  double worst = 0.0;
  for (size_t i = 0; i < ad.size(); ++i) {
    double denom = std::max({std::abs(ad[i]), std::abs(fd[i]), 1e-4});
    worst = std::max(worst, std::abs(ad[i] - fd[i]) / denom);
  }
  return worst;
}

double probe_loss(const Tensor& out, const Tensor& probe) {
  double acc = 0.0;
  for (size_t i = 0; i < out.size(); ++i) acc += out.v[i] * probe.v[i];
  return acc;
}

struct OpCase {
  const char* name;
  std::vector<std::vector<int>> shapes;
  std::function<Tensor(const std::vector<Tensor>&, Tape*)> op;
};

double check_op(const OpCase& c, int instances, Rng& rng) {
  double worst = 0.0;
  for (int inst = 0; inst < instances; ++inst) {
    std::vector<Tensor> inputs;
    for (const auto& s : c.shapes) inputs.push_back(random_tensor(s, rng));
    Tape tape;
    std::vector<Tensor> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    Tensor out = c.op(leaves, &tape);
    Tensor probe = random_tensor(out.shape, rng);
    auto adjoints = tape.backward(AdjointSeed{out.node, probe});
    for (size_t k = 0; k < inputs.size(); ++k) {
      auto f = [&](const std::vector<double>& flat) {
        std::vector<Tensor> ins = inputs;
        ins[k].v = flat;
        return probe_loss(c.op(ins, nullptr), probe);
      };
      auto fd = central_diff(f, inputs[k].v);
      worst = std::max(worst, worst_mismatch(adjoints[static_cast<size_t>(leaves[k].node)].v, fd));
    }
  }
  return worst;
}

double check_composite(int instances, Rng& rng) {
  TargetModelSpec target;
  target.input_dim = 3;
  target.hidden_dims = {4};
  target.num_classes = 2;
  EncoderSpec enc;
  enc.input_dim = 3;
  enc.phi_hidden_dims = {4};
  enc.descriptor_dim = 4;
  HyperNetworkSpec hn = HyperNetworkSpec::for_target(target, 4, {6});

  double worst = 0.0;
  for (int inst = 0; inst < instances; ++inst) {
    WeightBundle gamma = enc.init_weights(rng);
    WeightBundle theta = hn.init_weights(rng);
    Tensor x = random_tensor({8, 3}, rng);
    std::vector<int> labels;
    for (int i = 0; i < 8; ++i) labels.push_back(rng.uniform_int(2));

    auto loss_value = [&](const WeightBundle& th, const WeightBundle& ga) {
      Tensor e = encode_dataset(enc, ga, x);
      WeightBundle w = generate_weights(hn, th, e);
      return softmax_cross_entropy(forward_target(target, w, x), labels).v[0];
    };

    Tape tape;
    WeightBundle gamma_l, theta_l;
    std::vector<int> gamma_ids, theta_ids;
    for (size_t i = 0; i < gamma.size(); ++i) {
      Tensor t = tape.leaf(gamma.tensor(i));
      gamma_ids.push_back(t.node);
      gamma_l.add(gamma.name(i), std::move(t));
    }
    for (size_t i = 0; i < theta.size(); ++i) {
      Tensor t = tape.leaf(theta.tensor(i));
      theta_ids.push_back(t.node);
      theta_l.add(theta.name(i), std::move(t));
    }
    Tensor e = encode_dataset(enc, gamma_l, x, &tape);
    WeightBundle w = generate_weights(hn, theta_l, e, &tape);
    Tensor loss = softmax_cross_entropy(forward_target(target, w, x, &tape), labels, &tape);
    auto adjoints = tape.backward(AdjointSeed{loss.node, Tensor::scalar(1.0)});

    for (size_t i = 0; i < theta.size(); ++i) {
      auto f = [&](const std::vector<double>& flat) {
        WeightBundle th = theta;
        th.tensor(i).v = flat;
        return loss_value(th, gamma);
      };
      auto fd = central_diff(f, theta.tensor(i).v);
      worst = std::max(worst, worst_mismatch(adjoints[static_cast<size_t>(theta_ids[i])].v, fd));
    }
    for (size_t i = 0; i < gamma.size(); ++i) {
      auto f = [&](const std::vector<double>& flat) {
        WeightBundle ga = gamma;
        ga.tensor(i).v = flat;
        return loss_value(theta, ga);
      };
      auto fd = central_diff(f, gamma.tensor(i).v);
      worst = std::max(worst, worst_mismatch(adjoints[static_cast<size_t>(gamma_ids[i])].v, fd));
    }
  }
  return worst;
}

}  // namespace

bool run_gradcheck(int instances, std::ostream& out) {
  const std::vector<OpCase> cases = {
      {"matmul", {{3, 4}, {4, 2}}, [](const std::vector<Tensor>& in, Tape* t) { return matmul(in[0], in[1], t); }},
      {"add", {{3, 4}, {3, 4}}, [](const std::vector<Tensor>& in, Tape* t) { return add(in[0], in[1], t); }},
      {"sub", {{3, 4}, {3, 4}}, [](const std::vector<Tensor>& in, Tape* t) { return sub(in[0], in[1], t); }},
      {"mul", {{3, 4}, {3, 4}}, [](const std::vector<Tensor>& in, Tape* t) { return mul(in[0], in[1], t); }},
      {"relu", {{4, 5}}, [](const std::vector<Tensor>& in, Tape* t) { return relu(in[0], t); }},
      {"scale", {{6}}, [](const std::vector<Tensor>& in, Tape* t) { return scale(in[0], -1.7, t); }},
      {"add_bias", {{3, 4}, {4}}, [](const std::vector<Tensor>& in, Tape* t) { return add_bias(in[0], in[1], t); }},
      {"set_pool_mean", {{5, 3}}, [](const std::vector<Tensor>& in, Tape* t) { return set_pool(in[0], PoolKind::kMean, t); }},
      {"set_pool_max", {{5, 3}}, [](const std::vector<Tensor>& in, Tape* t) { return set_pool(in[0], PoolKind::kMax, t); }},
      {"row_normalize", {{4, 3}}, [](const std::vector<Tensor>& in, Tape* t) { return row_normalize(in[0], t); }},
      {"slice_cols", {{3, 5}}, [](const std::vector<Tensor>& in, Tape* t) { return slice_cols(in[0], 1, 4, t); }},
      {"concat_vec", {{3}, {4}}, [](const std::vector<Tensor>& in, Tape* t) { return concat_vec(in[0], in[1], t); }},
      {"reshape", {{3, 4}}, [](const std::vector<Tensor>& in, Tape* t) { return reshape(in[0], {6, 2}, t); }},
      {"sum", {{3, 4}}, [](const std::vector<Tensor>& in, Tape* t) { return sum(in[0], t); }},
      {"mean_squared_error", {{7}, {7}}, [](const std::vector<Tensor>& in, Tape* t) { return mean_squared_error(in[0], in[1], t); }},
      {"softmax_cross_entropy", {{4, 3}},
       [](const std::vector<Tensor>& in, Tape* t) { return softmax_cross_entropy(in[0], {0, 2, 1, 2}, t); }},
  };

  Rng rng(0x9ddc7e11);
  bool all_ok = true;
  for (const auto& c : cases) {
    double worst = check_op(c, instances, rng);
    bool ok = worst <= kTolerance;
    all_ok = all_ok && ok;
    out << (ok ? "PASS" : "FAIL") << " " << std::left << std::setw(22) << c.name
        << " max_rel_err=" << std::scientific << std::setprecision(3) << worst << std::defaultfloat
        << " (" << instances << " instances)\n";
  }
  double worst = check_composite(instances, rng);
  bool ok = worst <= kTolerance;
  all_ok = all_ok && ok;
  out << (ok ? "PASS" : "FAIL") << " " << std::left << std::setw(22) << "composite_loss"
      << " max_rel_err=" << std::scientific << std::setprecision(3) << worst << std::defaultfloat
      << " (" << instances << " instances)\n";
  return all_ok;
}

}  // namespace odpfl
