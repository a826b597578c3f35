#include "portraitid/training.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <unordered_map>

#include "portraitid/error.hpp"
#include "portraitid/metrics.hpp"
#include "portraitid/textio.hpp"

namespace portraitid {

namespace {

constexpr double kUnitTolerance = 1e-9;

void require_unit(std::span<const double> v, const char* which) {
  const double norm = l2_norm(v);
  if (std::abs(norm - 1.0) > kUnitTolerance) {
    throw ContractError(std::string("triplet_loss: ") + which + " is not unit norm");
  }
}

// Training and validation views of a manifest for one source.
struct Dataset {
  std::vector<std::vector<double>> train_inputs;
  std::vector<std::string> train_identities;
  std::vector<std::string> val_items;
  std::vector<std::vector<double>> val_inputs;
  std::vector<VerificationPair> val_pairs;
};

Dataset make_dataset(const Manifest& m, const std::string& tag, const TrainConfig& cfg) {
  Dataset data;
  std::map<std::string, std::size_t> per_identity;
  for (const auto& r : m.records) {
    if (r.split != Split::kTrain && r.split != Split::kVal) continue;
    auto it = r.vectors.find(tag);
    if (it == r.vectors.end()) {
      throw ContractError("training: item '" + r.item_id + "' has no source '" + tag + "'");
    }
    if (r.split == Split::kTrain) {
      data.train_inputs.push_back(it->second);
      data.train_identities.push_back(r.identity_id);
      per_identity[r.identity_id]++;
    } else {
      data.val_items.push_back(r.item_id);
      data.val_inputs.push_back(it->second);
    }
  }
  std::size_t usable = 0;
  for (const auto& [id, count] : per_identity) usable += count >= 2 ? 1 : 0;
  if (per_identity.size() < 2 || usable < 1) {
    throw ContractError("training: train split needs >= 2 identities and one with >= 2 items");
  }
  data.val_pairs = generate_pairs(m, Split::kVal, cfg.val_impostor_cap, cfg.seed);
  return data;
}

std::vector<Triplet> form_triplets(const Dataset& data,
                                   const std::vector<std::vector<double>>& embeddings,
                                   const TrainConfig& cfg, std::mt19937_64& rng) {
  std::unordered_map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < data.train_identities.size(); ++i) {
    members[data.train_identities[i]].push_back(i);
  }
  std::vector<Triplet> triplets;
  for (std::size_t a = 0; a < embeddings.size(); ++a) {
    const auto& same = members.at(data.train_identities[a]);
    if (same.size() < 2) continue;
    const auto negatives = mine_negatives(a, embeddings, data.train_identities, cfg.mining,
                                          cfg.triplets_per_anchor, rng);
    std::uniform_int_distribution<std::size_t> pick(0, same.size() - 2);
    for (auto n : negatives) {
      // Uniform over the identity's other items.
      std::size_t k = pick(rng);
      if (same[k] == a) k = same.size() - 1;
      triplets.push_back({a, same[k], n});
    }
  }
  return triplets;
}

template <typename Model>
std::vector<std::vector<double>> embed_all(const Model& model,
                                           const std::vector<std::vector<double>>& inputs) {
  std::vector<std::vector<double>> out;
  out.reserve(inputs.size());
  for (const auto& v : inputs) out.push_back(model.embed(v));
  return out;
}

template <typename Model>
double validation_eer(const Model& model, const Dataset& data) {
  std::unordered_map<std::string, std::vector<double>> lookup;
  for (std::size_t i = 0; i < data.val_items.size(); ++i) {
    lookup.emplace(data.val_items[i], model.embed(data.val_inputs[i]));
  }
  const ScoreSet scores =
      score_pairs(data.val_pairs, [&](const std::string& item) { return lookup.at(item); });
  return eer(sweep(scores));
}

std::vector<Matrix> snapshot(const std::vector<Matrix*>& params) {
  std::vector<Matrix> out;
  for (const Matrix* p : params) out.push_back(*p);
  return out;
}

template <typename Model>
TrainHistory run_training(Model& model, const Dataset& data, const TrainConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  const auto params = model.parameters();
  AdamState adam;
  TrainHistory history;

  const auto monitored = [&](const EpochRecord& r) {
    return cfg.monitor == Monitor::kValEer ? r.val_eer : r.train_loss;
  };

  // Epoch 0: the starting point, measured without any update.
  {
    const auto emb = embed_all(model, data.train_inputs);
    const auto triplets = form_triplets(data, emb, cfg, rng);
    double total = 0.0;
    for (const auto& t : triplets) {
      total += triplet_loss(emb[t.anchor], emb[t.positive], emb[t.negative], cfg.margin);
    }
    history.epochs.push_back(
        {0, total / static_cast<double>(triplets.size()), validation_eer(model, data), false});
  }
  auto best_params = snapshot(params);
  double best_value = monitored(history.epochs.back());

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    // Hardness is measured once per epoch on the current parameters.
    const auto emb = embed_all(model, data.train_inputs);
    auto triplets = form_triplets(data, emb, cfg, rng);
    std::shuffle(triplets.begin(), triplets.end(), rng);

    double epoch_total = 0.0;
    for (std::size_t start = 0; start < triplets.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(triplets.size(), start + cfg.batch_size);
      Tape tape;
      const std::vector<Var> vars = model.bind(tape);
      std::unordered_map<std::size_t, Var> cache;
      const auto embed = [&](std::size_t item) {
        auto it = cache.find(item);
        if (it != cache.end()) return it->second;
        Var v = model.embed_on_tape(tape, data.train_inputs[item]);
        cache.emplace(item, v);
        return v;
      };
      Var total{};
      for (std::size_t i = start; i < end; ++i) {
        const auto& t = triplets[i];
        Var l = triplet_loss_on_tape(tape, embed(t.anchor), embed(t.positive), embed(t.negative),
                                     cfg.margin);
        total = i == start ? l : tape.add(total, l);
      }
      const double batch_total = tape.value(total)(0, 0);
      if (!std::isfinite(batch_total)) {
        throw std::runtime_error("training: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch starting at triplet " + std::to_string(start));
      }
      epoch_total += batch_total;
      Var loss = tape.scale(total, 1.0 / static_cast<double>(end - start));
      tape.backward(loss);
      std::vector<Matrix> grads;
      grads.reserve(vars.size());
      for (Var v : vars) grads.push_back(tape.grad(v));
      adam_step(params, grads, adam, cfg.learning_rate, cfg.adam);
    }

    EpochRecord rec{epoch, epoch_total / static_cast<double>(triplets.size()),
                    validation_eer(model, data), false};
    history.epochs.push_back(rec);
    if (monitored(rec) < best_value) {
      best_value = monitored(rec);
      history.best_epoch = epoch;
      best_params = snapshot(params);
    } else if (epoch - history.best_epoch >= cfg.patience) {
      break;
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) *params[i] = best_params[i];
  history.epochs[history.best_epoch].is_best = true;
  return history;
}

class LoraModel {
 public:
  LoraModel(const EncoderConfig& cfg, const EncoderWeights& base, std::vector<LoraAdapter> adapters)
      : cfg_(cfg), base_(base), adapters_(std::move(adapters)) {}

  std::vector<Matrix*> parameters() {
    std::vector<Matrix*> out;
    for (auto& ad : adapters_) {
      out.push_back(&ad.a_down);
      out.push_back(&ad.b_up);
    }
    return out;
  }

  std::vector<double> embed(std::span<const double> vec) const {
    return encode(cfg_, base_, adapters_, tokenize(vec, cfg_));
  }

  std::vector<Var> bind(Tape& tape) {
    enc_ = bind_encoder(tape, base_, false);
    ads_ = bind_adapters(tape, adapters_, true);
    std::vector<Var> vars;
    for (const auto& ad : ads_) {
      vars.push_back(ad.a_down);
      vars.push_back(ad.b_up);
    }
    return vars;
  }

  Var embed_on_tape(Tape& tape, std::span<const double> vec) const {
    return encode_on_tape(tape, cfg_, enc_, ads_, tape.constant(tokenize(vec, cfg_)));
  }

  std::vector<LoraAdapter> take_adapters() { return std::move(adapters_); }

 private:
  EncoderConfig cfg_;
  const EncoderWeights& base_;
  std::vector<LoraAdapter> adapters_;
  EncoderVars enc_;
  std::vector<AdapterVars> ads_;
};

class HeadModel {
 public:
  explicit HeadModel(HeadWeights head) : head_(std::move(head)) {}

  std::vector<Matrix*> parameters() {
    std::vector<Matrix*> out{&head_.w_head};
    if (head_.has_bias()) out.push_back(&head_.bias);
    return out;
  }

  std::vector<double> embed(std::span<const double> vec) const { return head_forward(head_, vec); }

  std::vector<Var> bind(Tape& tape) {
    vars_ = bind_head(tape, head_, true);
    std::vector<Var> out{vars_.w_head};
    if (vars_.has_bias) out.push_back(vars_.bias);
    return out;
  }

  Var embed_on_tape(Tape& tape, std::span<const double> vec) const {
    return head_on_tape(tape, vars_, tape.constant(Matrix::row_vector(vec)));
  }

  HeadWeights take_head() { return std::move(head_); }

 private:
  HeadWeights head_;
  HeadVars vars_;
};

}  // namespace

void validate(const TrainConfig& cfg) {
  if (!(cfg.margin > 0.0 && cfg.margin < 2.0)) throw ContractError("train: margin must lie in (0, 2)");
  if (cfg.batch_size < 1) throw ContractError("train: batch_size must be >= 1");
  if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw ContractError("train: learning_rate must be finite and >= 0");
  }
  if (cfg.patience < 1) throw ContractError("train: patience must be >= 1");
  if (cfg.triplets_per_anchor < 1) throw ContractError("train: triplets_per_anchor must be >= 1");
  if (!(cfg.mining.hard_fraction >= 0.0 && cfg.mining.hard_fraction <= 1.0)) {
    throw ContractError("mining: hard_fraction must lie in [0, 1]");
  }
  if (cfg.mining.top_pool < 1) throw ContractError("mining: top_pool must be >= 1");
  if (!(cfg.adam.beta1 >= 0.0 && cfg.adam.beta1 < 1.0 && cfg.adam.beta2 >= 0.0 &&
        cfg.adam.beta2 < 1.0 && cfg.adam.eps > 0.0)) {
    throw ContractError("adam: betas must lie in [0, 1) and eps > 0");
  }
}

double triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                    std::span<const double> negative, double margin) {
  require_unit(anchor, "anchor");
  require_unit(positive, "positive");
  require_unit(negative, "negative");
  const double d_ap = 1.0 - dot(anchor, positive);
  const double d_an = 1.0 - dot(anchor, negative);
  return std::max(0.0, d_ap - d_an + margin);
}

Var triplet_loss_on_tape(Tape& tape, Var anchor, Var positive, Var negative, double margin) {
  Var d_ap = tape.add_scalar(tape.scale(tape.dot(anchor, positive), -1.0), 1.0);
  Var d_an = tape.add_scalar(tape.scale(tape.dot(anchor, negative), -1.0), 1.0);
  return tape.hinge(tape.add_scalar(tape.sub(d_ap, d_an), margin));
}

MiningPools mining_pools(std::size_t n_candidates, const MiningConfig& cfg) {
  const std::size_t span = cfg.top_pool + cfg.next_pool;
  if (n_candidates >= span) return {cfg.top_pool, cfg.next_pool};
  const double share = static_cast<double>(cfg.top_pool) / static_cast<double>(span);
  auto top = static_cast<std::size_t>(std::llround(static_cast<double>(n_candidates) * share));
  top = std::clamp<std::size_t>(top, 1, n_candidates);
  return {top, n_candidates - top};
}

std::size_t hard_count(std::size_t n_select, double hard_fraction) {
  // The slack keeps 0.3·10 at 3 despite binary rounding.
  return static_cast<std::size_t>(
      std::ceil(hard_fraction * static_cast<double>(n_select) - 1e-9));
}

std::vector<std::size_t> rank_negatives(std::size_t anchor,
                                        std::span<const std::vector<double>> embeddings,
                                        std::span<const std::string> identities) {
  if (anchor >= embeddings.size() || identities.size() != embeddings.size()) {
    throw ContractError("rank_negatives: anchor or identity list out of range");
  }
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t j = 0; j < embeddings.size(); ++j) {
    if (identities[j] == identities[anchor]) continue;
    scored.emplace_back(dot(embeddings[anchor], embeddings[j]), j);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> ranked;
  ranked.reserve(scored.size());
  for (const auto& [sim, j] : scored) ranked.push_back(j);
  return ranked;
}

std::vector<std::size_t> mine_negatives(std::size_t anchor,
                                        std::span<const std::vector<double>> embeddings,
                                        std::span<const std::string> identities,
                                        const MiningConfig& cfg, std::size_t n_select,
                                        std::mt19937_64& rng) {
  const auto ranked = rank_negatives(anchor, embeddings, identities);
  if (ranked.empty()) throw ContractError("mine_negatives: no cross-identity candidates");
  n_select = std::min(n_select, ranked.size());

  std::vector<std::size_t> chosen;
  if (!cfg.enabled) {
    std::sample(ranked.begin(), ranked.end(), std::back_inserter(chosen), n_select, rng);
    return chosen;
  }

  const MiningPools pools = mining_pools(ranked.size(), cfg);
  const auto top_begin = ranked.begin();
  const auto top_end = top_begin + static_cast<std::ptrdiff_t>(pools.top);
  const auto next_end = top_end + static_cast<std::ptrdiff_t>(pools.next);

  const std::size_t hard = std::min(hard_count(n_select, cfg.hard_fraction), pools.top);
  const std::size_t random = std::min(n_select - hard, pools.next);
  std::vector<std::size_t> hard_pick;
  std::sample(top_begin, top_end, std::back_inserter(hard_pick), hard + (n_select - hard - random),
              rng);
  chosen = std::move(hard_pick);
  std::sample(top_end, next_end, std::back_inserter(chosen), random, rng);
  return chosen;
}

void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               double learning_rate, const AdamConfig& adam) {
  if (params.size() != grads.size()) throw ContractError("adam_step: params/grads count mismatch");
  if (state.first_moment.empty()) {
    for (const Matrix* p : params) {
      state.first_moment.emplace_back(p->rows(), p->cols());
      state.second_moment.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ContractError("adam_step: state does not match parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(state.first_moment[i])) {
      throw ContractError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(adam.beta1, t);
  const double c2 = 1.0 - std::pow(adam.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    auto g = grads[i].values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = adam.beta1 * m[k] + (1.0 - adam.beta1) * g[k];
      v[k] = adam.beta2 * v[k] + (1.0 - adam.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      p[k] -= learning_rate * m_hat / (std::sqrt(v_hat) + adam.eps);
    }
  }
}

std::string render_history_csv(const TrainHistory& history) {
  std::string out = "epoch,train_loss,val_eer,is_best\n";
  for (const auto& e : history.epochs) {
    out += std::to_string(e.epoch) + ',' + text::format_double(e.train_loss) + ',' +
           text::format_double(e.val_eer) + ',' + (e.is_best ? "1" : "0") + '\n';
  }
  return out;
}

LoraTrainResult train_lora(const Manifest& m, const std::string& source_tag,
                           const TrainConfig& cfg, const EncoderConfig& encoder_cfg,
                           const EncoderWeights& base, const LoraConfig& lora) {
  validate(cfg);
  validate(encoder_cfg, base);
  const Dataset data = make_dataset(m, source_tag, cfg);
  const double alpha = lora.alpha > 0.0 ? lora.alpha : static_cast<double>(lora.rank);
  LoraModel model(encoder_cfg, base, init_qv_adapters(encoder_cfg, lora.rank, alpha, cfg.seed));
  LoraTrainResult result;
  result.history = run_training(model, data, cfg);
  result.adapters = model.take_adapters();
  return result;
}

HeadTrainResult train_head(const Manifest& m, const std::string& source_tag,
                           const TrainConfig& cfg, std::size_t d_out, bool with_bias) {
  validate(cfg);
  auto dim = m.source_dims.find(source_tag);
  if (dim == m.source_dims.end()) {
    throw ContractError("train_head: source '" + source_tag + "' not in manifest");
  }
  const Dataset data = make_dataset(m, source_tag, cfg);
  HeadModel model(init_head(dim->second, d_out, with_bias));
  HeadTrainResult result;
  result.history = run_training(model, data, cfg);
  result.head = model.take_head();
  return result;
}

}  // namespace portraitid
