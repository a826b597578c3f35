#pragma once

// Finite-difference checks of full-model gradients, shared by the unit and
// acceptance suites.

#include <algorithm>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "portraitid/encoder.hpp"
#include "portraitid/lora.hpp"
#include "portraitid/training.hpp"

namespace gradcheck {

using namespace portraitid;

struct Result {
  double max_relative_error = 0.0;
  std::size_t n_checked = 0;
  double loss = 0.0;
};

/// Triplet loss of three random token sets through the encoder with random
/// (non-neutral) Q/V adapters, differentiated with respect to every encoder
/// and adapter parameter. The margin keeps the hinge active.
inline Result encoder_triplet(const EncoderConfig& cfg, std::uint64_t seed, double h = 1e-5,
                              double floor = 1e-6) {
  std::mt19937_64 rng(seed);
  EncoderWeights w = init_encoder(cfg, seed);
  // Larger-than-init weights so every path carries a visible gradient.
  for (Matrix* m : oracle::encoder_params(w))
    for (double& v : m->values()) v += std::normal_distribution<double>(0.0, 0.3)(rng);
  auto adapters = init_qv_adapters(cfg, std::min<std::size_t>(4, cfg.d_model), 4.0, seed + 1);
  for (auto& ad : adapters) oracle::perturb(ad, rng, 0.3);
  std::vector<Matrix> tokens;
  for (int i = 0; i < 3; ++i) tokens.push_back(oracle::random_matrix(cfg.seq_len, cfg.d_model, rng));
  const double margin = 1.9;

  auto loss_value = [&] {
    const auto a = encode(cfg, w, adapters, tokens[0]);
    const auto p = encode(cfg, w, adapters, tokens[1]);
    const auto n = encode(cfg, w, adapters, tokens[2]);
    return triplet_loss(a, p, n, margin);
  };

  Tape tape;
  const EncoderVars ev = bind_encoder(tape, w, true);
  const auto av = bind_adapters(tape, adapters, true);
  auto embed = [&](const Matrix& t) { return encode_on_tape(tape, cfg, ev, av, tape.constant(t)); };
  Var loss = triplet_loss_on_tape(tape, embed(tokens[0]), embed(tokens[1]), embed(tokens[2]), margin);
  tape.backward(loss);

  std::vector<Matrix*> params = oracle::encoder_params(w);
  std::vector<Var> vars = oracle::encoder_vars(ev);
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    params.push_back(&adapters[i].a_down);
    vars.push_back(av[i].a_down);
    params.push_back(&adapters[i].b_up);
    vars.push_back(av[i].b_up);
  }
  std::vector<Matrix> analytic;
  for (Var v : vars) analytic.push_back(tape.grad(v));

  Result r;
  r.loss = tape.value(loss)(0, 0);
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k]->size(); ++i) {
      const double numeric = oracle::central_difference(loss_value, *params[k], i, h);
      r.max_relative_error = std::max(
          r.max_relative_error, oracle::relative_error(analytic[k].values()[i], numeric, floor));
      ++r.n_checked;
    }
  }
  return r;
}

/// The same check for the linear head over fixed backbone vectors.
inline Result head_triplet(std::size_t d_in, std::size_t d_out, std::uint64_t seed,
                           double h = 1e-6) {
  std::mt19937_64 rng(seed);
  HeadWeights head = init_head(d_in, d_out, true);
  head.w_head = add(head.w_head, oracle::random_matrix(d_out, d_in, rng, 0.3));
  head.bias = oracle::random_matrix(1, d_out, rng, 0.3);
  std::vector<std::vector<double>> x;
  for (int i = 0; i < 3; ++i) x.push_back(oracle::random_vector(d_in, rng));
  const double margin = 1.9;
  auto loss_value = [&] {
    return triplet_loss(head_forward(head, x[0]), head_forward(head, x[1]), head_forward(head, x[2]),
                        margin);
  };
  Tape tape;
  const HeadVars hv = bind_head(tape, head, true);
  auto embed = [&](const std::vector<double>& v) {
    return head_on_tape(tape, hv, tape.constant(Matrix::row_vector(v)));
  };
  Var loss = triplet_loss_on_tape(tape, embed(x[0]), embed(x[1]), embed(x[2]), margin);
  tape.backward(loss);
  Result r;
  r.loss = tape.value(loss)(0, 0);
  for (auto [param, var] : {std::pair{&head.w_head, hv.w_head}, std::pair{&head.bias, hv.bias}}) {
    const Matrix g = tape.grad(var);
    for (std::size_t i = 0; i < param->size(); ++i) {
      const double numeric = oracle::central_difference(loss_value, *param, i, h);
      r.max_relative_error =
          std::max(r.max_relative_error, oracle::relative_error(g.values()[i], numeric));
      ++r.n_checked;
    }
  }
  return r;
}

}  // namespace gradcheck
