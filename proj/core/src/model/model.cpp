#include "resee/model/model.hpp"

#include <cmath>
#include <string>
#include <unordered_map>

#include "resee/error.hpp"
#include "resee/log.hpp"
#include "resee/model/autograd.hpp"
#include "resee/rng.hpp"

namespace resee::model {
namespace {

constexpr std::string_view kModule = "model_core";

Matrix normal_matrix(std::size_t r, std::size_t c, double std, Rng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data) v = std * rng.normal();
  return m;
}

void add_layer(ParameterSet& p, const std::string& prefix, const ModelConfig& cfg, bool cross, double out_std,
               Rng& rng) {
  const auto d = cfg.d_model;
  const auto add_attention = [&](const std::string& ln, const std::string& at) {
    p.add(prefix + ln + ".g", Matrix(1, d, 1.0));
    p.add(prefix + ln + ".b", Matrix(1, d));
    for (const char* w : {"q", "k", "v"}) {
      p.add(prefix + at + ".w" + w, normal_matrix(d, d, cfg.init_std, rng));
      p.add(prefix + at + ".b" + w, Matrix(1, d));
    }
    p.add(prefix + at + ".wo", normal_matrix(d, d, out_std, rng));
    p.add(prefix + at + ".bo", Matrix(1, d));
  };
  add_attention("ln1", "attn");
  if (cross) add_attention("ln_cross", "cross");
  p.add(prefix + "ln2.g", Matrix(1, d, 1.0));
  p.add(prefix + "ln2.b", Matrix(1, d));
  p.add(prefix + "ffn.w1", normal_matrix(d, cfg.d_ff, cfg.init_std, rng));
  p.add(prefix + "ffn.b1", Matrix(1, cfg.d_ff));
  p.add(prefix + "ffn.w2", normal_matrix(cfg.d_ff, d, out_std, rng));
  p.add(prefix + "ffn.b2", Matrix(1, d));
}

void check_finite(const Matrix& m, std::size_t layer, std::string_view stack) {
  for (double v : m.data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(kModule),
                         "non-finite activation in " + std::string(stack) + " layer " + std::to_string(layer));
    }
  }
}

std::vector<std::size_t> range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> r;
  for (auto i = begin; i < end; ++i) r.push_back(i);
  return r;
}

// Builds the computation for one batch on a tape.
class Graph {
 public:
  Graph(Tape& tape, const ModelConfig& cfg, const ParameterSet& params, ParameterSet* grads)
      : t_(tape), cfg_(cfg), params_(params), grads_(grads) {}

  Var p(const std::string& name) {
    if (auto it = cache_.find(name); it != cache_.end()) return it->second;
    const auto idx = params_.find(name);
    if (!idx) throw ShapeError(std::string(kModule), "missing parameter '" + name + "'");
    auto v = t_.parameter(params_[*idx], grads_ ? &(*grads_)[*idx] : nullptr);
    cache_.emplace(name, v);
    return v;
  }

  Var embed(const InputBatch& b) {
    const auto L = b.length();
    Var x = t_.gather_rows(p("embed.token"), b.token_ids);
    if (!b.image_features.empty()) {
      Matrix f(b.image_features.size(), cfg_.d_v);
      for (std::size_t i = 0; i < b.image_features.size(); ++i) {
        const auto& row = b.image_features[i];
        if (row.size() != cfg_.d_v) {
          throw ShapeError(std::string(kModule), "image feature " + std::to_string(i) + " has dimension " +
                                                     std::to_string(row.size()) + ", expected " +
                                                     std::to_string(cfg_.d_v));
        }
        std::copy(row.begin(), row.end(), f.data.begin() + static_cast<std::ptrdiff_t>(i * cfg_.d_v));
      }
      Var h = t_.gelu(t_.add_row(t_.matmul(t_.constant(std::move(f)), p("visual.w1")), p("visual.b1")));
      Var proj = t_.add_row(t_.matmul(h, p("visual.w2")), p("visual.b2"));
      std::vector<std::size_t> rows(b.image_features.size(), L);
      for (std::size_t i = 0; i < L; ++i) {
        if (b.image_slot[i] >= 0) rows[static_cast<std::size_t>(b.image_slot[i])] = i;
      }
      for (auto r : rows) {
        if (r == L) throw ShapeError(std::string(kModule), "image feature without a slot");
      }
      x = t_.add(x, t_.place_rows(proj, rows, L));
    }
    for (int id : b.position_ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.max_positions) {
        throw ShapeError(std::string(kModule), "position id out of range");
      }
    }
    x = t_.add(x, t_.gather_rows(p("embed.position"), b.position_ids));
    if (cfg_.segment_embeddings) x = t_.add(x, t_.gather_rows(p("embed.segment"), b.segment_ids));
    return x;
  }

  Var attention(const std::string& prefix, Var q_in, Var kv_in, std::span<const char> allowed) {
    const auto d = cfg_.d_model;
    const auto dh = d / cfg_.n_heads;
    Var q = t_.add_row(t_.matmul(q_in, p(prefix + ".wq")), p(prefix + ".bq"));
    Var k = t_.add_row(t_.matmul(kv_in, p(prefix + ".wk")), p(prefix + ".bk"));
    Var v = t_.add_row(t_.matmul(kv_in, p(prefix + ".wv")), p(prefix + ".bv"));
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> heads;
    for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
      Var qh = t_.slice_cols(q, h * dh, (h + 1) * dh);
      Var kh = t_.slice_cols(k, h * dh, (h + 1) * dh);
      Var vh = t_.slice_cols(v, h * dh, (h + 1) * dh);
      Var probs = t_.masked_softmax(t_.scale(t_.matmul_bt(qh, kh), scale), allowed);
      heads.push_back(t_.matmul(probs, vh));
    }
    Var o = heads.size() == 1 ? heads[0] : t_.concat_cols(heads);
    return t_.add_row(t_.matmul(o, p(prefix + ".wo")), p(prefix + ".bo"));
  }

  Var ln(const std::string& prefix, Var x) { return t_.layer_norm(x, p(prefix + ".g"), p(prefix + ".b")); }

  Var layer(const std::string& prefix, Var x, std::span<const char> self_mask, const Var* memory,
            std::span<const char> cross_mask) {
    Var a = ln(prefix + "ln1", x);
    x = t_.add(x, attention(prefix + "attn", a, a, self_mask));
    if (memory) {
      Var c = ln(prefix + "ln_cross", x);
      x = t_.add(x, attention(prefix + "cross", c, *memory, cross_mask));
    }
    Var f = ln(prefix + "ln2", x);
    Var h = t_.gelu(t_.add_row(t_.matmul(f, p(prefix + "ffn.w1")), p(prefix + "ffn.b1")));
    return t_.add(x, t_.add_row(t_.matmul(h, p(prefix + "ffn.w2")), p(prefix + "ffn.b2")));
  }

  // Final hidden states for every position, L x d_model.
  Var hidden(const InputBatch& b) {
    Var x = embed(b);
    const auto L = b.length();
    if (cfg_.variant == Variant::kShared) {
      for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
        x = layer("layer." + std::to_string(l) + ".", x, b.attention_mask, nullptr, {});
        check_finite(t_.value(x), l, "shared");
      }
      return ln("ln_f", x);
    }
    const auto blocks = split_attention_mask(b);
    const auto c = blocks.context;
    Var enc = t_.select_rows(x, range(0, c));
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      enc = layer("encoder." + std::to_string(l) + ".", enc, blocks.encoder_self, nullptr, {});
      check_finite(t_.value(enc), l, "encoder");
    }
    Var memory = ln("encoder.ln_f", enc);
    const auto ctx_rows = range(0, c);
    Var out = t_.place_rows(memory, ctx_rows, L);
    if (blocks.response == 0) return out;
    Var dec = t_.select_rows(x, range(c, L));
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      dec = layer("decoder." + std::to_string(l) + ".", dec, blocks.decoder_self, &memory, blocks.cross);
      check_finite(t_.value(dec), l, "decoder");
    }
    dec = ln("ln_f", dec);
    return t_.add(out, t_.place_rows(dec, range(c, L), L));
  }

  Var head(Var h) { return t_.add_row(t_.matmul(h, p("head.w")), p("head.b")); }

 private:
  Tape& t_;
  const ModelConfig& cfg_;
  const ParameterSet& params_;
  ParameterSet* grads_;
  std::unordered_map<std::string, Var> cache_;
};

std::vector<std::size_t> supervised_rows(const InputBatch& b) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < b.length(); ++i) {
    if (b.loss_mask[i]) rows.push_back(i);
  }
  return rows;
}

double row_nll(const Matrix& logits, std::size_t r, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.cols) {
    throw ShapeError(std::string(kModule), "target id outside the vocabulary");
  }
  double mx = logits(r, 0);
  for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, logits(r, j));
  double z = 0.0;
  for (std::size_t j = 0; j < logits.cols; ++j) z += std::exp(logits(r, j) - mx);
  return -(logits(r, static_cast<std::size_t>(target)) - mx - std::log(z));
}

}  // namespace

void ParameterSet::add(std::string name, Matrix value) {
  if (find(name)) throw ShapeError(std::string(kModule), "duplicate parameter '" + name + "'");
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

Matrix& ParameterSet::at(std::string_view name) {
  auto i = find(name);
  if (!i) throw ShapeError(std::string(kModule), "missing parameter '" + std::string(name) + "'");
  return values_[*i];
}

const Matrix& ParameterSet::at(std::string_view name) const { return const_cast<ParameterSet*>(this)->at(name); }

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& m : values_) n += m.size();
  return n;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet z;
  z.names_ = names_;
  for (const auto& m : values_) z.values_.emplace_back(m.rows, m.cols);
  return z;
}

void ParameterSet::fill(double v) {
  for (auto& m : values_) std::fill(m.data.begin(), m.data.end(), v);
}

ParameterSet make_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const auto d = cfg.d_model;
  const std::size_t depth = cfg.variant == Variant::kShared ? cfg.n_layers : 2 * cfg.n_layers;
  const double out_std = cfg.init_std / std::sqrt(2.0 * static_cast<double>(std::max<std::size_t>(depth, 1)));
  ParameterSet p;
  p.add("embed.token", normal_matrix(cfg.vocab_size, d, cfg.init_std, rng));
  p.add("embed.position", normal_matrix(cfg.max_positions, d, cfg.init_std, rng));
  if (cfg.segment_embeddings) p.add("embed.segment", normal_matrix(cfg.n_segments, d, cfg.init_std, rng));
  p.add("visual.w1", normal_matrix(cfg.d_v, d, cfg.init_std, rng));
  p.add("visual.b1", Matrix(1, d));
  p.add("visual.w2", normal_matrix(d, d, cfg.init_std, rng));
  p.add("visual.b2", Matrix(1, d));
  if (cfg.variant == Variant::kShared) {
    for (std::size_t l = 0; l < cfg.n_layers; ++l) add_layer(p, "layer." + std::to_string(l) + ".", cfg, false, out_std, rng);
  } else {
    for (std::size_t l = 0; l < cfg.n_layers; ++l) add_layer(p, "encoder." + std::to_string(l) + ".", cfg, false, out_std, rng);
    p.add("encoder.ln_f.g", Matrix(1, d, 1.0));
    p.add("encoder.ln_f.b", Matrix(1, d));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) add_layer(p, "decoder." + std::to_string(l) + ".", cfg, true, out_std, rng);
  }
  p.add("ln_f.g", Matrix(1, d, 1.0));
  p.add("ln_f.b", Matrix(1, d));
  p.add("head.w", normal_matrix(d, cfg.vocab_size, cfg.init_std, rng));
  p.add("head.b", Matrix(1, cfg.vocab_size));
  return p;
}

LossValue loss_separate(const Matrix& logits, std::span<const int> targets) {
  if (logits.rows != targets.size()) throw ShapeError(std::string(kModule), "one logit row per target required");
  LossValue v;
  for (std::size_t r = 0; r < logits.rows; ++r) v.sum += row_nll(logits, r, targets[r]);
  v.tokens = targets.size();
  v.mean = v.tokens ? v.sum / static_cast<double>(v.tokens) : 0.0;
  return v;
}

LossValue loss_shared(const Matrix& logits, const MaskedResponse& masked) {
  if (logits.rows != masked.original.size()) {
    throw ShapeError(std::string(kModule), "one logit row per response position required");
  }
  LossValue v;
  if (masked.masked_positions.empty()) {
    log::warn(kModule, "masked response has no masked positions; loss is zero");
    return v;
  }
  for (auto pos : masked.masked_positions) v.sum += row_nll(logits, pos, masked.original.at(pos));
  v.tokens = masked.masked_positions.size();
  v.mean = v.sum / static_cast<double>(v.tokens);
  return v;
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), params_(make_parameters(cfg, seed)) {}

Model::Model(const ModelConfig& cfg, ParameterSet params) : cfg_(cfg), params_(std::move(params)) {
  const auto layout = make_parameters(cfg, 0);
  if (layout.size() != params_.size()) throw ShapeError(std::string(kModule), "parameter count does not match config");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout.name(i) != params_.name(i) || layout[i].rows != params_[i].rows || layout[i].cols != params_[i].cols) {
      throw ShapeError(std::string(kModule), "parameter '" + params_.name(i) + "' does not match config");
    }
  }
}

Matrix Model::embed(const InputBatch& batch) const {
  Tape t;
  Graph g(t, cfg_, params_, nullptr);
  return t.value(g.embed(batch));
}

Matrix Model::forward(const InputBatch& batch) const {
  Tape t;
  Graph g(t, cfg_, params_, nullptr);
  return t.value(g.head(g.hidden(batch)));
}

Matrix Model::supervised_logits(const InputBatch& batch) const {
  Tape t;
  Graph g(t, cfg_, params_, nullptr);
  return t.value(g.head(t.select_rows(g.hidden(batch), supervised_rows(batch))));
}

std::vector<double> Model::logits_at(const InputBatch& batch, std::size_t position) const {
  if (position >= batch.length()) throw ShapeError(std::string(kModule), "position outside the batch");
  Tape t;
  Graph g(t, cfg_, params_, nullptr);
  const std::size_t rows[] = {position};
  return t.value(g.head(t.select_rows(g.hidden(batch), rows))).data;
}

LossValue Model::loss(const InputBatch& batch, ParameterSet* grads) const {
  const auto rows = supervised_rows(batch);
  LossValue v;
  if (rows.empty()) return v;
  std::vector<int> targets;
  for (auto r : rows) targets.push_back(batch.targets[r]);
  Tape t;
  Graph g(t, cfg_, params_, grads);
  Var nll = t.nll_sum(g.head(t.select_rows(g.hidden(batch), rows)), targets);
  v.sum = t.value(nll).data[0];
  v.tokens = rows.size();
  v.mean = v.sum / static_cast<double>(v.tokens);
  if (grads) t.backward(nll);
  return v;
}

VisualProjector Model::projector() const {
  return {params_.at("visual.w1"), params_.at("visual.b1"), params_.at("visual.w2"), params_.at("visual.b2")};
}

}  // namespace resee::model
