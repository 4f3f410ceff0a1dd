#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "resee/dataset_builder.hpp"
#include "resee/model/input.hpp"
#include "resee/model/model.hpp"
#include "resee/model/vocabulary.hpp"
#include "resee/rng.hpp"

namespace resee::train {

struct MaskingConfig {
  double ratio = 0.7;
  double mask_prob_within = 0.9;  // remainder becomes a random token
  bool exact_count = false;       // round(ratio * |R|) positions instead of per-token draws
};

/// Corrupts the response tokens. Random replacements are drawn uniformly
/// from the non-special ids other than the original token.
model::MaskedResponse mask_response(std::span<const int> r_tokens, const MaskingConfig& cfg,
                                    const model::SpecialTokens& special, std::size_t vocab_size, Rng& rng);

struct TrainSchedule {
  double peak_lr = 0.005;
  double warmup_fraction = 0.2;
  std::size_t total_steps = 1000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const;
  /// Piecewise linear: 0 at t=0, peak at warmup_fraction * total_steps, 0 at total_steps.
  double lr(std::size_t step) const;
};

/// Adam with decoupled weight decay. Decay skips 1 x n parameters (biases
/// and layer-norm gains).
class AdamW {
 public:
  AdamW(const model::ParameterSet& params, const TrainSchedule& schedule);
  void step(model::ParameterSet& params, const model::ParameterSet& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  TrainSchedule s_;
  model::ParameterSet m_;
  model::ParameterSet v_;
  std::vector<char> decay_;
  std::size_t t_ = 0;
};

struct CurvePoint {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;  // mean token loss of the step's batch
};

struct TrainOptions {
  MaskingConfig masking;
  std::size_t eval_every = 0;  // validation interval in steps; 0 disables early stopping
  std::size_t patience = 3;
  const std::atomic<bool>* stop = nullptr;  // checked between steps
  std::function<void(const CurvePoint&)> on_step;
};

struct TrainResult {
  std::vector<CurvePoint> curve;
  std::vector<double> validation;  // mean token loss per validation round
  std::size_t steps_run = 0;
  bool early_stopped = false;
  bool interrupted = false;
};

/// Mean token loss used for validation and reporting. Separate: teacher
/// forcing. Shared: every response position scored as generation sees it,
/// [X, BOS, r_<j, MASK].
double mean_token_loss(const model::Model& m, std::span<const model::InputBatch> batches);

/// Batches scored by mean_token_loss for one example.
std::vector<model::InputBatch> scoring_batches(const data::MultimodalExample& ex, const model::Tokenizer& tok,
                                               const model::ModelConfig& cfg);

TrainResult train(model::Model& m, std::span<const data::MultimodalExample> train_set,
                  std::span<const data::MultimodalExample> validation_set, const model::Tokenizer& tok,
                  const TrainSchedule& schedule, const TrainOptions& options = {});

void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve);

}  // namespace resee::train
