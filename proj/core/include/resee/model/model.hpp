#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "resee/model/config.hpp"
#include "resee/model/input.hpp"
#include "resee/model/matrix.hpp"

namespace resee::model {

/// Named tensors in a fixed order.
class ParameterSet {
 public:
  void add(std::string name, Matrix value);
  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Matrix& operator[](std::size_t i) { return values_[i]; }
  const Matrix& operator[](std::size_t i) const { return values_[i]; }
  std::optional<std::size_t> find(std::string_view name) const;
  Matrix& at(std::string_view name);
  const Matrix& at(std::string_view name) const;
  std::size_t scalar_count() const;

  /// Same names and shapes, all zero.
  ParameterSet zeros_like() const;
  void fill(double v);

  bool operator==(const ParameterSet&) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
};

struct LossValue {
  double sum = 0.0;
  double mean = 0.0;
  std::size_t tokens = 0;
};

/// Token NLL of logits (one row per target) against targets.
LossValue loss_separate(const Matrix& logits, std::span<const int> targets);

/// NLL over the masked positions only. `logits` has one row per response
/// position (masked.original.size() rows). An empty masked set is a zero loss.
LossValue loss_shared(const Matrix& logits, const MaskedResponse& masked);

class Model {
 public:
  /// Scaled-normal initialization from `seed`.
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const ModelConfig& cfg, ParameterSet params);

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// Token (or projected image) + position (+ segment) embeddings, L x d_model.
  Matrix embed(const InputBatch& batch) const;

  /// Logits at every position, L x vocab. For the separate variant the
  /// context rows come from the encoder output and the response rows from
  /// the decoder.
  Matrix forward(const InputBatch& batch) const;

  /// Logits at the supervised positions, in position order.
  Matrix supervised_logits(const InputBatch& batch) const;

  /// Logits at one position.
  std::vector<double> logits_at(const InputBatch& batch, std::size_t position) const;

  /// Summed NLL over supervised positions; when `grads` is non-null the
  /// gradient of the sum is added into it.
  LossValue loss(const InputBatch& batch, ParameterSet* grads = nullptr) const;

  VisualProjector projector() const;

 private:
  ModelConfig cfg_;
  ParameterSet params_;
};

/// Parameter names and shapes for a configuration, in checkpoint order.
ParameterSet make_parameters(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace resee::model
