#pragma once

// Triplet-loss training with per-epoch hard negative mining, Adam updates and
// early stopping on a validation metric. Two trainers share the loop: LoRA
// adapters on a frozen encoder, and a linear head on frozen backbone vectors.

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "portraitid/corpus.hpp"
#include "portraitid/encoder.hpp"
#include "portraitid/lora.hpp"
#include "portraitid/numerics.hpp"

namespace portraitid {

struct MiningConfig {
  /// Share of each anchor's negatives drawn from the hardest pool.
  double hard_fraction = 0.30;
  std::size_t top_pool = 50;
  std::size_t next_pool = 450;
  /// When false, negatives are drawn uniformly from all other identities.
  bool enabled = true;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class Monitor { kValEer, kTrainLoss };

struct TrainConfig {
  double margin = 0.5;
  std::size_t batch_size = 48;
  double learning_rate = 1e-5;
  std::size_t patience = 10;
  std::size_t max_epochs = 200;
  /// Triplets formed per anchor each epoch; each gets its own mined negative.
  std::size_t triplets_per_anchor = 10;
  MiningConfig mining;
  AdamConfig adam;
  Monitor monitor = Monitor::kValEer;
  /// Impostor cap for the validation protocol (all pairs when unset).
  std::optional<std::size_t> val_impostor_cap;
  std::uint64_t seed = 7;
};

void validate(const TrainConfig& cfg);

struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

using TripletBatch = std::vector<Triplet>;

/// max(0, d(a,p) - d(a,n) + margin) with cosine distance d(x,y) = 1 - x·y.
/// Inputs must be unit vectors within 1e-9.
double triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                    std::span<const double> negative, double margin);

/// The same objective on 1×n unit rows recorded on a tape.
Var triplet_loss_on_tape(Tape& tape, Var anchor, Var positive, Var negative, double margin);

struct MiningPools {
  std::size_t top = 0;   // ranks 1..top
  std::size_t next = 0;  // ranks top+1..top+next
};

/// Pool sizes for a candidate count. With fewer candidates than
/// top_pool + next_pool the pools keep the configured proportion, top >= 1.
MiningPools mining_pools(std::size_t n_candidates, const MiningConfig& cfg);

/// ceil(hard_fraction · n_select).
std::size_t hard_count(std::size_t n_select, double hard_fraction);

/// Cross-identity candidates ordered hardest first (descending similarity to
/// the anchor; ties by index).
std::vector<std::size_t> rank_negatives(std::size_t anchor,
                                        std::span<const std::vector<double>> embeddings,
                                        std::span<const std::string> identities);

/// Hard picks come first in the result, then the randomly drawn remainder.
std::vector<std::size_t> mine_negatives(std::size_t anchor,
                                        std::span<const std::vector<double>> embeddings,
                                        std::span<const std::string> identities,
                                        const MiningConfig& cfg, std::size_t n_select,
                                        std::mt19937_64& rng);

struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::size_t step = 0;
};

/// Bias-corrected Adam update in place. Moments are created on first use.
void adam_step(std::span<Matrix* const> params, std::span<const Matrix> grads, AdamState& state,
               double learning_rate, const AdamConfig& adam);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_eer = 0.0;
  bool is_best = false;
};

/// Epoch 0 is evaluated before any update; the returned parameters are those
/// of best_epoch.
struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
};

/// `epoch,train_loss,val_eer,is_best`
std::string render_history_csv(const TrainHistory& history);

struct LoraConfig {
  std::size_t rank = 16;
  /// Scale numerator; 0 means alpha = rank.
  double alpha = 0.0;
};

struct LoraTrainResult {
  std::vector<LoraAdapter> adapters;
  TrainHistory history;
};

/// Fits Q/V adapters on a frozen encoder fed with tokenized `source_tag`
/// vectors of the train split; validates on the val split.
LoraTrainResult train_lora(const Manifest& m, const std::string& source_tag,
                           const TrainConfig& cfg, const EncoderConfig& encoder_cfg,
                           const EncoderWeights& base, const LoraConfig& lora = {});

struct HeadTrainResult {
  HeadWeights head;
  TrainHistory history;
};

/// Fits a linear head over fixed `source_tag` vectors, starting from the
/// identity-like initialization.
HeadTrainResult train_head(const Manifest& m, const std::string& source_tag,
                           const TrainConfig& cfg, std::size_t d_out, bool with_bias = true);

}  // namespace portraitid
