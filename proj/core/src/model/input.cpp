#include "resee/model/input.hpp"

#include <cmath>
#include <string>

#include "resee/error.hpp"
#include "resee/rng.hpp"

namespace resee::model {
namespace {

constexpr std::string_view kModule = "model_core";

double gelu(double x) {
  constexpr double c = 0.7978845608028654;
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

struct ContextBuilder {
  EncodedContext out;

  void text(std::span<const int> ids, Segment seg) {
    for (int id : ids) {
      out.token_ids.push_back(id);
      out.image_slot.push_back(-1);
      out.segment_ids.push_back(static_cast<int>(seg));
    }
  }
  void image(std::vector<double> feature, Segment seg) {
    out.token_ids.push_back(-1);
    out.image_slot.push_back(static_cast<int>(out.image_features.size()));
    out.image_features.push_back(std::move(feature));
    out.segment_ids.push_back(static_cast<int>(seg));
  }
  void sep(int id, Segment seg) {
    const int one[] = {id};
    text(one, seg);
  }
};

}  // namespace

VisualProjector VisualProjector::zeros(std::size_t d_v, std::size_t d_model) {
  return {Matrix(d_v, d_model), Matrix(1, d_model), Matrix(d_model, d_model), Matrix(1, d_model)};
}

std::vector<std::vector<double>> project_image_features(std::span<const std::vector<double>> features,
                                                        const VisualProjector& proj) {
  const auto d_v = proj.w1.rows;
  const auto hidden = proj.w1.cols;
  const auto d = proj.w2.cols;
  std::vector<std::vector<double>> out;
  out.reserve(features.size());
  for (std::size_t n = 0; n < features.size(); ++n) {
    const auto& x = features[n];
    if (x.size() != d_v) {
      throw ShapeError(std::string(kModule), "image feature " + std::to_string(n) + " has dimension " +
                                                 std::to_string(x.size()) + ", expected " + std::to_string(d_v));
    }
    std::vector<double> h(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
      double s = proj.b1.data[j];
      for (std::size_t i = 0; i < d_v; ++i) s += x[i] * proj.w1(i, j);
      h[j] = gelu(s);
    }
    std::vector<double> y(d);
    for (std::size_t j = 0; j < d; ++j) {
      double s = proj.b2.data[j];
      for (std::size_t i = 0; i < hidden; ++i) s += h[i] * proj.w2(i, j);
      y[j] = s;
    }
    out.push_back(std::move(y));
  }
  return out;
}

std::vector<double> image_feature(const ImageRef& image, std::size_t d_v) {
  if (image.feature) {
    if (image.feature->size() != d_v) {
      throw ShapeError(std::string(kModule), "image '" + image.locator + "' has feature dimension " +
                                                 std::to_string(image.feature->size()) + ", expected " +
                                                 std::to_string(d_v));
    }
    return *image.feature;
  }
  Rng rng(fnv1a64(image.locator));
  std::vector<double> f(d_v);
  for (auto& v : f) v = rng.normal();
  return f;
}

EncodedContext encode_context(const data::MultimodalExample& example, const Tokenizer& tokenizer,
                              const ModelConfig& cfg) {
  auto ex = example;
  data::enforce_budgets(ex, cfg.context_budget, cfg.response_budget);
  const auto sep = tokenizer.special().sep;

  ContextBuilder b;
  auto open = [&](Segment s) { b.out.spans[static_cast<std::size_t>(s)].begin = b.out.size(); };
  auto close = [&](Segment s) { b.out.spans[static_cast<std::size_t>(s)].end = b.out.size(); };

  open(Segment::kTurnImages);
  for (const auto& img : ex.turn_images) b.image(image_feature(img, cfg.d_v), Segment::kTurnImages);
  if (!ex.turn_images.empty()) b.sep(sep, Segment::kTurnImages);
  close(Segment::kTurnImages);

  open(Segment::kEntityImages);
  for (const auto& img : ex.entity_images) b.image(image_feature(img, cfg.d_v), Segment::kEntityImages);
  if (!ex.entity_images.empty()) b.sep(sep, Segment::kEntityImages);
  close(Segment::kEntityImages);

  open(Segment::kEntities);
  for (const auto& e : ex.entities) b.text(tokenizer.encode(e), Segment::kEntities);
  if (b.out.size() > b.out.spans[2].begin) b.sep(sep, Segment::kEntities);
  close(Segment::kEntities);

  open(Segment::kContext);
  for (const auto& t : ex.context) {
    b.text(tokenizer.encode(t.text), Segment::kContext);
    b.sep(sep, Segment::kContext);
  }
  if (ex.knowledge) {
    const auto before = b.out.size();
    for (const auto& p : *ex.knowledge) b.text(tokenizer.encode(p), Segment::kContext);
    if (b.out.size() > before) b.sep(sep, Segment::kContext);
  }
  close(Segment::kContext);

  // A tokenizer that splits finer than the budget accounting can overflow;
  // drop the oldest context tokens in that case.
  auto& out = b.out;
  const auto limit = cfg.context_budget;
  if (out.size() > limit) {
    const auto excess = out.size() - limit;
    auto& c = out.spans[3];
    if (c.size() <= excess) throw ShapeError(std::string(kModule), "fixed blocks exceed the context budget");
    const auto first = static_cast<std::ptrdiff_t>(c.begin);
    const auto last = first + static_cast<std::ptrdiff_t>(excess);
    out.token_ids.erase(out.token_ids.begin() + first, out.token_ids.begin() + last);
    out.image_slot.erase(out.image_slot.begin() + first, out.image_slot.begin() + last);
    out.segment_ids.erase(out.segment_ids.begin() + first, out.segment_ids.begin() + last);
    c.end -= excess;
  }
  return b.out;
}

std::vector<int> response_tokens(const data::MultimodalExample& example, const Tokenizer& tokenizer,
                                 const ModelConfig& cfg) {
  auto ids = tokenizer.encode(example.response.text);
  if (ids.size() > cfg.response_budget) ids.resize(cfg.response_budget);
  ids.push_back(tokenizer.special().eos);
  return ids;
}

InputBatch make_batch(const EncodedContext& context, std::span<const int> r_inputs, std::span<const int> r_targets,
                      const ModelConfig& cfg) {
  if (r_inputs.size() != r_targets.size()) throw ShapeError(std::string(kModule), "response targets length mismatch");
  const auto c = context.size();
  const auto L = c + r_inputs.size();
  if (L > cfg.max_positions) {
    throw ShapeError(std::string(kModule),
                     "sequence length " + std::to_string(L) + " exceeds max_positions " + std::to_string(cfg.max_positions));
  }
  InputBatch b;
  b.token_ids = context.token_ids;
  b.image_slot = context.image_slot;
  b.image_features = context.image_features;
  b.segment_ids = context.segment_ids;
  for (std::size_t i = 0; i < 4; ++i) b.block_spans[i] = context.spans[i];
  b.block_spans[4] = {c, L};
  b.position_ids.resize(L);
  for (std::size_t i = 0; i < L; ++i) {
    const bool restart = cfg.variant == Variant::kSeparate && i >= c;
    b.position_ids[i] = static_cast<int>(restart ? i - c : i);
  }
  b.loss_mask.assign(L, 0);
  b.targets.assign(L, -1);
  for (std::size_t i = 0; i < r_inputs.size(); ++i) {
    b.token_ids.push_back(r_inputs[i]);
    b.image_slot.push_back(-1);
    b.segment_ids.push_back(static_cast<int>(Segment::kResponse));
    if (r_targets[i] >= 0) {
      b.loss_mask[c + i] = 1;
      b.targets[c + i] = r_targets[i];
    }
  }
  b.attention_mask = build_attention_mask(b, cfg.variant);
  return b;
}

InputBatch assemble_input(const data::MultimodalExample& example, const Tokenizer& tokenizer, const ModelConfig& cfg,
                          bool include_response) {
  const auto ctx = encode_context(example, tokenizer, cfg);
  if (!include_response) return make_batch(ctx, {}, {}, cfg);
  const auto r = response_tokens(example, tokenizer, cfg);
  std::vector<int> inputs{tokenizer.special().bos};
  std::vector<int> targets;
  if (cfg.variant == Variant::kShared) {
    inputs.insert(inputs.end(), r.begin(), r.end());
    targets.push_back(-1);
    targets.insert(targets.end(), r.begin(), r.end());
  } else {
    inputs.insert(inputs.end(), r.begin(), r.end() - 1);
    targets = r;
  }
  return make_batch(ctx, inputs, targets, cfg);
}

std::vector<char> build_attention_mask(const InputBatch& batch, Variant /*variant*/) {
  // Both variants share one contract; the separate model reads it through
  // split_attention_mask().
  const auto L = batch.length();
  const auto r0 = batch.response_span().begin;
  std::vector<char> m(L * L, 0);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < L; ++j) {
      const bool allowed = j < r0 || (i >= r0 && j <= i);
      m[i * L + j] = allowed ? 1 : 0;
    }
  }
  return m;
}

AttentionBlocks split_attention_mask(const InputBatch& batch) {
  AttentionBlocks a;
  a.context = batch.context_length();
  a.response = batch.length() - a.context;
  const auto c = a.context;
  const auto r = a.response;
  a.encoder_self.resize(c * c);
  a.decoder_self.resize(r * r);
  a.cross.resize(r * c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) a.encoder_self[i * c + j] = batch.attends(i, j) ? 1 : 0;
  }
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < r; ++j) a.decoder_self[i * r + j] = batch.attends(c + i, c + j) ? 1 : 0;
    for (std::size_t j = 0; j < c; ++j) a.cross[i * c + j] = batch.attends(c + i, j) ? 1 : 0;
  }
  return a;
}

void apply_masking(InputBatch& batch, const MaskedResponse& masked) {
  const auto& span = batch.response_span();
  if (masked.original.size() + 1 != span.size() || masked.corrupted.size() != masked.original.size()) {
    throw ShapeError(std::string(kModule), "masked response does not match the response block");
  }
  const auto base = span.begin + 1;
  for (std::size_t i = 0; i < masked.corrupted.size(); ++i) {
    batch.token_ids[base + i] = masked.corrupted[i];
    batch.loss_mask[base + i] = 0;
    batch.targets[base + i] = -1;
  }
  for (auto p : masked.masked_positions) {
    if (p >= masked.original.size()) throw ShapeError(std::string(kModule), "masked position outside the response");
    batch.loss_mask[base + p] = 1;
    batch.targets[base + p] = masked.original[p];
  }
}

}  // namespace resee::model
