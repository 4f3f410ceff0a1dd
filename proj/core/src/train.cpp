#include "resee/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>

#include "resee/error.hpp"
#include "resee/log.hpp"

namespace resee::train {
namespace {

constexpr std::string_view kModule = "train_generate";

int random_token(int original, const model::SpecialTokens& special, std::size_t vocab_size, Rng& rng) {
  const auto first = static_cast<std::size_t>(model::SpecialTokens::count());
  if (vocab_size <= first) return -1;
  const bool skip = !special.is_special(original) && original >= 0 && static_cast<std::size_t>(original) < vocab_size;
  const auto n = vocab_size - first - (skip ? 1 : 0);
  if (n == 0) return -1;
  auto id = static_cast<int>(first + rng.below(n));
  if (skip && id >= original) ++id;
  return id;
}

}  // namespace

model::MaskedResponse mask_response(std::span<const int> r_tokens, const MaskingConfig& cfg,
                                    const model::SpecialTokens& special, std::size_t vocab_size, Rng& rng) {
  if (!(cfg.ratio >= 0.0 && cfg.ratio <= 1.0) || !(cfg.mask_prob_within >= 0.0 && cfg.mask_prob_within <= 1.0)) {
    throw ConfigError(std::string(kModule), "mask ratio and mask_prob_within must lie in [0, 1]");
  }
  model::MaskedResponse out;
  out.original.assign(r_tokens.begin(), r_tokens.end());
  out.corrupted = out.original;
  const auto n = r_tokens.size();

  std::vector<char> selected(n, 0);
  if (cfg.exact_count) {
    const auto k = static_cast<std::size_t>(std::llround(cfg.ratio * static_cast<double>(n)));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(idx[i], idx[i + rng.below(n - i)]);
      selected[idx[i]] = 1;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) selected[i] = rng.bernoulli(cfg.ratio) ? 1 : 0;
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!selected[i]) continue;
    out.masked_positions.push_back(i);
    int replacement = -1;
    if (!rng.bernoulli(cfg.mask_prob_within)) replacement = random_token(r_tokens[i], special, vocab_size, rng);
    if (replacement < 0) {
      out.corrupted[i] = special.mask;
      out.replacement_kinds.push_back(model::ReplacementKind::kMaskToken);
    } else {
      out.corrupted[i] = replacement;
      out.replacement_kinds.push_back(model::ReplacementKind::kRandomToken);
    }
  }
  return out;
}

void TrainSchedule::validate() const {
  if (!(warmup_fraction > 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError(std::string(kModule), "warmup_fraction must lie in (0, 1)");
  }
  if (total_steps == 0 || batch_size == 0) throw ConfigError(std::string(kModule), "total_steps and batch_size must be positive");
  if (!(peak_lr > 0.0)) throw ConfigError(std::string(kModule), "peak_lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0) || weight_decay < 0.0) {
    throw ConfigError(std::string(kModule), "invalid optimizer settings");
  }
}

double TrainSchedule::lr(std::size_t step) const {
  const auto T = static_cast<double>(total_steps);
  const auto t = static_cast<double>(step);
  const double w = warmup_fraction * T;
  if (t >= T) return 0.0;
  if (t <= w) return peak_lr * t / w;
  return peak_lr * (T - t) / (T - w);
}

AdamW::AdamW(const model::ParameterSet& params, const TrainSchedule& schedule)
    : s_(schedule), m_(params.zeros_like()), v_(params.zeros_like()) {
  for (std::size_t i = 0; i < params.size(); ++i) decay_.push_back(params[i].rows > 1 ? 1 : 0);
}

void AdamW::step(model::ParameterSet& params, const model::ParameterSet& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].data;
    const auto& g = grads[i].data;
    auto& m = m_[i].data;
    auto& v = v_[i].data;
    const double decay = decay_[i] ? lr * s_.weight_decay : 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = s_.beta1 * m[k] + (1.0 - s_.beta1) * g[k];
      v[k] = s_.beta2 * v[k] + (1.0 - s_.beta2) * g[k] * g[k];
      p[k] -= decay * p[k];
      p[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + s_.epsilon);
    }
  }
}

std::vector<model::InputBatch> scoring_batches(const data::MultimodalExample& ex, const model::Tokenizer& tok,
                                               const model::ModelConfig& cfg) {
  if (cfg.variant == model::Variant::kSeparate) return {model::assemble_input(ex, tok, cfg, true)};
  const auto x = model::encode_context(ex, tok, cfg);
  const auto r = model::response_tokens(ex, tok, cfg);
  const auto& sp = tok.special();
  std::vector<model::InputBatch> out;
  std::vector<int> inputs{sp.bos};
  for (std::size_t j = 0; j < r.size(); ++j) {
    inputs.push_back(sp.mask);
    std::vector<int> targets(inputs.size(), -1);
    targets.back() = r[j];
    out.push_back(model::make_batch(x, inputs, targets, cfg));
    inputs.back() = r[j];
  }
  return out;
}

double mean_token_loss(const model::Model& m, std::span<const model::InputBatch> batches) {
  double sum = 0.0;
  std::size_t tokens = 0;
  for (const auto& b : batches) {
    const auto v = m.loss(b);
    sum += v.sum;
    tokens += v.tokens;
  }
  return tokens ? sum / static_cast<double>(tokens) : 0.0;
}

TrainResult train(model::Model& m, std::span<const data::MultimodalExample> train_set,
                  std::span<const data::MultimodalExample> validation_set, const model::Tokenizer& tok,
                  const TrainSchedule& schedule, const TrainOptions& options) {
  schedule.validate();
  if (train_set.empty()) throw EmptyCorpusError(std::string(kModule), "training set is empty");
  const auto& cfg = m.config();
  if (tok.size() != cfg.vocab_size) throw ConfigError(std::string(kModule), "tokenizer size differs from vocab_size");
  const bool shared = cfg.variant == model::Variant::kShared;

  std::vector<model::InputBatch> base;
  std::vector<std::vector<int>> responses;
  for (const auto& ex : train_set) {
    base.push_back(model::assemble_input(ex, tok, cfg, true));
    responses.push_back(model::response_tokens(ex, tok, cfg));
  }
  std::vector<model::InputBatch> validation;
  for (const auto& ex : validation_set) {
    auto b = scoring_batches(ex, tok, cfg);
    validation.insert(validation.end(), std::make_move_iterator(b.begin()), std::make_move_iterator(b.end()));
  }

  Rng order_rng(schedule.seed);
  Rng mask_rng(mix64(schedule.seed ^ 0x6d61736bULL));
  std::vector<std::size_t> order(base.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  auto next_example = [&] {
    if (cursor == order.size()) {
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  AdamW opt(m.parameters(), schedule);
  auto grads = m.parameters().zeros_like();
  TrainResult result;
  std::optional<model::ParameterSet> best;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t bad_rounds = 0;

  for (std::size_t step = 1; step <= schedule.total_steps; ++step) {
    if (options.stop && options.stop->load()) {
      result.interrupted = true;
      log::info(kModule, "stop requested; ending after step " + std::to_string(step - 1));
      break;
    }
    grads.fill(0.0);
    double sum = 0.0;
    std::size_t tokens = 0;
    try {
      for (std::size_t k = 0; k < schedule.batch_size; ++k) {
        const auto i = next_example();
        model::LossValue v;
        if (shared) {
          auto batch = base[i];
          const auto masked = mask_response(responses[i], options.masking, tok.special(), cfg.vocab_size, mask_rng);
          if (masked.masked_positions.empty()) continue;
          model::apply_masking(batch, masked);
          v = m.loss(batch, &grads);
        } else {
          v = m.loss(base[i], &grads);
        }
        sum += v.sum;
        tokens += v.tokens;
      }
    } catch (const NumericError& e) {
      throw NumericError(std::string(kModule), "diverged at step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(sum)) {
      throw NumericError(std::string(kModule), "loss diverged at step " + std::to_string(step));
    }
    const double lr = schedule.lr(step);
    opt.step(m.parameters(), grads, lr);
    CurvePoint point{step, lr, tokens ? sum / static_cast<double>(tokens) : 0.0};
    result.curve.push_back(point);
    result.steps_run = step;
    if (options.on_step) options.on_step(point);

    const bool eval_now = options.eval_every > 0 && !validation.empty() &&
                          (step % options.eval_every == 0 || step == schedule.total_steps);
    if (eval_now) {
      const double vl = mean_token_loss(m, validation);
      result.validation.push_back(vl);
      if (vl < best_loss) {
        best_loss = vl;
        best = m.parameters();
        bad_rounds = 0;
      } else if (++bad_rounds >= options.patience) {
        result.early_stopped = true;
        log::info(kModule, "validation loss has not improved for " + std::to_string(bad_rounds) +
                               " rounds; stopping at step " + std::to_string(step));
        break;
      }
    }
  }
  if (best) m.parameters() = std::move(*best);
  return result;
}

void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError(std::string(kModule), "cannot write " + path.string());
  f << "step,lr,loss\n";
  char line[96];
  for (const auto& p : curve) {
    std::snprintf(line, sizeof line, "%zu,%.10g,%.10g\n", p.step, p.lr, p.loss);
    f << line;
  }
}

}  // namespace resee::train
