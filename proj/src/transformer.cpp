// Copyright 2026 The mixce Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mixce/transformer.h"

#include <cmath>
#include <stdexcept>

namespace mixce {

namespace {

constexpr float kBlockedScore = -1e9f;

std::string layer_prefix(const char* side, int layer) {
  return std::string(side) + "." + std::to_string(layer) + ".";
}

// Concatenates b onto a along axis 1; both are (rows, t, d) without graph.
Tensor append_time(const Tensor& a, const Tensor& b) {
  if (!a.defined()) return b.detach();
  const int rows = a.dim(0), ta = a.dim(1), tb = b.dim(1), d = a.dim(2);
  std::vector<float> out(static_cast<size_t>(rows) * (ta + tb) * d);
  for (int r = 0; r < rows; ++r) {
    auto dst = out.begin() + static_cast<size_t>(r) * (ta + tb) * d;
    auto sa = a.data().begin() + static_cast<size_t>(r) * ta * d;
    auto sb = b.data().begin() + static_cast<size_t>(r) * tb * d;
    dst = std::copy(sa, sa + static_cast<ptrdiff_t>(ta) * d, dst);
    std::copy(sb, sb + static_cast<ptrdiff_t>(tb) * d, dst);
  }
  return Tensor::from({rows, ta + tb, d}, std::move(out));
}

Tensor gather_rows(const Tensor& t, std::span<const int> parents) {
  const size_t row_size = t.numel() / t.dim(0);
  std::vector<float> out(parents.size() * row_size);
  for (size_t i = 0; i < parents.size(); ++i) {
    auto src = t.data().begin() + static_cast<size_t>(parents[i]) * row_size;
    std::copy(src, src + static_cast<ptrdiff_t>(row_size), out.begin() + i * row_size);
  }
  Shape shape = t.shape();
  shape[0] = static_cast<int>(parents.size());
  return Tensor::from(std::move(shape), std::move(out));
}

std::vector<std::uint8_t> key_padding_block(const Mask& src_mask, int tq) {
  const int b = src_mask.rows, s = src_mask.cols;
  std::vector<std::uint8_t> blocked(static_cast<size_t>(b) * tq * s);
  for (int r = 0; r < b; ++r)
    for (int i = 0; i < tq; ++i)
      for (int j = 0; j < s; ++j)
        blocked[(static_cast<size_t>(r) * tq + i) * s + j] = src_mask(r, j) ? 0 : 1;
  return blocked;
}

}  // namespace

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw std::invalid_argument(std::string("ModelConfig: ") + name + " must be positive");
  };
  positive(vocab_size_src, "vocab_size_src");
  positive(vocab_size_tgt, "vocab_size_tgt");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(n_layers_enc, "n_layers_enc");
  positive(n_layers_dec, "n_layers_dec");
  positive(d_ff, "d_ff");
  positive(max_len, "max_len");
  if (d_model % n_heads != 0) throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
  if (dropout < 0.0f || dropout >= 1.0f) throw std::invalid_argument("ModelConfig: dropout must lie in [0, 1)");
}

// ---- TransformerParams ----------------------------------------------------

Tensor& TransformerParams::add(const std::string& name, Tensor t) {
  auto [it, inserted] = tensors_.emplace(name, std::move(t));
  if (!inserted) throw std::invalid_argument("duplicate parameter name " + name);
  return it->second;
}

Tensor& TransformerParams::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

const Tensor& TransformerParams::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

size_t TransformerParams::total_elements() const {
  size_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.numel();
  return n;
}

void TransformerParams::zero_grad() {
  for (auto& [name, t] : tensors_) t.zero_grad();
}

TransformerParams TransformerParams::clone() const {
  TransformerParams out;
  for (const auto& [name, t] : tensors_) {
    out.add(name, Tensor::from(t.shape(), std::vector<float>(t.data().begin(), t.data().end()),
                               t.requires_grad()));
  }
  return out;
}

// ---- construction ---------------------------------------------------------

namespace {

std::map<std::string, Shape> expected_shapes(const ModelConfig& c) {
  std::map<std::string, Shape> shapes;
  const int d = c.d_model;
  auto linear = [&](const std::string& p, int in, int out) {
    shapes[p + ".w"] = {in, out};
    shapes[p + ".b"] = {out};
  };
  auto norm = [&](const std::string& p) {
    shapes[p + ".g"] = {d};
    shapes[p + ".b"] = {d};
  };
  auto attention = [&](const std::string& p) {
    for (const char* m : {"q", "k", "v", "o"}) linear(p + "." + m, d, d);
  };
  shapes["src_embed"] = {c.vocab_size_src, d};
  shapes["tgt_embed"] = {c.vocab_size_tgt, d};
  for (int l = 0; l < c.n_layers_enc; ++l) {
    const auto p = layer_prefix("enc", l);
    attention(p + "self");
    norm(p + "ln1");
    linear(p + "ffn1", d, c.d_ff);
    linear(p + "ffn2", c.d_ff, d);
    norm(p + "ln2");
  }
  for (int l = 0; l < c.n_layers_dec; ++l) {
    const auto p = layer_prefix("dec", l);
    attention(p + "self");
    norm(p + "ln1");
    attention(p + "cross");
    norm(p + "ln2");
    linear(p + "ffn1", d, c.d_ff);
    linear(p + "ffn2", c.d_ff, d);
    norm(p + "ln3");
  }
  if (!c.share_embeddings) shapes["out.w"] = {d, c.vocab_size_tgt};
  shapes["out.b"] = {c.vocab_size_tgt};
  return shapes;
}

std::vector<float> sinusoid_table(int max_len, int d) {
  std::vector<float> table(static_cast<size_t>(max_len) * d);
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / d);
      table[static_cast<size_t>(pos) * d + i] = static_cast<float>(std::sin(pos * freq));
      if (i + 1 < d) table[static_cast<size_t>(pos) * d + i + 1] = static_cast<float>(std::cos(pos * freq));
    }
  }
  return table;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Transformer::Transformer(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(init_seed);
  for (const auto& [name, shape] : expected_shapes(config_)) {
    const size_t n = shape_numel(shape);
    std::vector<float> values(n, 0.0f);
    if (ends_with(name, ".g")) {
      std::fill(values.begin(), values.end(), 1.0f);
    } else if (shape.size() == 2) {
      // Embedding tables are (vocab, d) and scaled by sqrt(d) on lookup, so
      // their fan-in is taken as d.
      const int fan_in = ends_with(name, "_embed") ? shape[1] : shape[0];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (float& v : values) v = static_cast<float>((2.0 * uniform01(rng) - 1.0) * bound);
    }
    params_.add(name, Tensor::from(shape, std::move(values), true));
  }
  positions_ = sinusoid_table(config_.max_len, config_.d_model);
}

Transformer::Transformer(ModelConfig config, TransformerParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  check_shapes();
  positions_ = sinusoid_table(config_.max_len, config_.d_model);
}

void Transformer::check_shapes() const {
  const auto shapes = expected_shapes(config_);
  if (shapes.size() != params_.size()) {
    throw std::invalid_argument("Transformer: expected " + std::to_string(shapes.size()) +
                                " parameters, got " + std::to_string(params_.size()));
  }
  for (const auto& [name, shape] : shapes) {
    if (!params_.contains(name)) throw std::invalid_argument("Transformer: missing parameter " + name);
    if (params_.at(name).shape() != shape) {
      throw std::invalid_argument("Transformer: parameter " + name + " has shape " +
                                  shape_str(params_.at(name).shape()) + ", expected " +
                                  shape_str(shape));
    }
  }
}

// ---- building blocks ------------------------------------------------------

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, int n_heads,
                            const std::vector<std::uint8_t>* blocked) {
  const int b = q.dim(0), tq = q.dim(1), tk = k.dim(1), d = q.dim(2);
  const int dh = d / n_heads;
  auto split = [&](const Tensor& x, int t) {
    return reshape(permute(reshape(x, {b, t, n_heads, dh}), {0, 2, 1, 3}), {b * n_heads, t, dh});
  };
  Tensor scores = scale(batch_matmul(split(q, tq), split(k, tk), true),
                        1.0f / std::sqrt(static_cast<float>(dh)));
  if (blocked != nullptr) {
    const size_t per_row = static_cast<size_t>(tq) * tk;
    std::vector<std::uint8_t> expanded(static_cast<size_t>(b) * n_heads * per_row);
    for (int r = 0; r < b; ++r)
      for (int h = 0; h < n_heads; ++h)
        std::copy_n(blocked->begin() + static_cast<ptrdiff_t>(r * per_row), per_row,
                    expanded.begin() + static_cast<ptrdiff_t>((r * n_heads + h) * per_row));
    scores = masked_fill(scores, expanded, kBlockedScore);
  }
  Tensor context = batch_matmul(softmax(scores, 2), split(v, tk));
  return reshape(permute(reshape(context, {b, n_heads, tq, dh}), {0, 2, 1, 3}), {b, tq, d});
}

Tensor Transformer::linear(const Tensor& x, const std::string& prefix) const {
  return add_bias(matmul(x, params_.at(prefix + ".w")), params_.at(prefix + ".b"));
}

Tensor Transformer::feed_forward(const Tensor& x, const std::string& prefix, Rng* rng) const {
  Tensor h = relu(linear(x, prefix + "ffn1"));
  return dropout(linear(dropout(h, config_.dropout, rng), prefix + "ffn2"), config_.dropout, rng);
}

Tensor Transformer::embed(const std::string& table, std::span<const int> ids, int batch, int len,
                          int first_position) const {
  if (first_position + len > config_.max_len) {
    throw std::invalid_argument("sequence length " + std::to_string(first_position + len) +
                                " exceeds max_len " + std::to_string(config_.max_len));
  }
  const int d = config_.d_model;
  Tensor x = scale(embedding(params_.at(table), ids, {batch, len}), std::sqrt(static_cast<float>(d)));
  std::vector<float> pe(static_cast<size_t>(batch) * len * d);
  for (int r = 0; r < batch; ++r)
    std::copy_n(positions_.begin() + static_cast<ptrdiff_t>(first_position) * d,
                static_cast<size_t>(len) * d,
                pe.begin() + static_cast<ptrdiff_t>(r) * len * d);
  return add(x, Tensor::from({batch, len, d}, std::move(pe)));
}

Tensor Transformer::output_logits(const Tensor& x) const {
  if (config_.share_embeddings) {
    return add_bias(matmul(x, params_.at("tgt_embed"), true), params_.at("out.b"));
  }
  return linear(x, "out");
}

// ---- full forward ---------------------------------------------------------

Tensor Transformer::encode(const TokenMatrix& src_tokens, const Mask& src_mask,
                           const ForwardOptions& opts) const {
  if (!src_tokens.same_shape(src_mask)) throw std::invalid_argument("encode: token/mask shape mismatch");
  const int b = src_tokens.rows, s = src_tokens.cols;
  Rng* rng = opts.dropout_rng;
  Tensor x = dropout(embed("src_embed", src_tokens.data, b, s, 0), config_.dropout, rng);
  const auto blocked = key_padding_block(src_mask, s);
  for (int l = 0; l < config_.n_layers_enc; ++l) {
    const auto p = layer_prefix("enc", l);
    Tensor a = multi_head_attention(linear(x, p + "self.q"), linear(x, p + "self.k"),
                                    linear(x, p + "self.v"), config_.n_heads, &blocked);
    a = dropout(linear(a, p + "self.o"), config_.dropout, rng);
    x = layer_norm(add(x, a), params_.at(p + "ln1.g"), params_.at(p + "ln1.b"));
    x = layer_norm(add(x, feed_forward(x, p, rng)), params_.at(p + "ln2.g"), params_.at(p + "ln2.b"));
  }
  return x;
}

Tensor Transformer::decode_logits(const Tensor& memory, const Mask& src_mask,
                                  const TokenMatrix& decoder_input, const ForwardOptions& opts) const {
  const int b = decoder_input.rows, t = decoder_input.cols;
  if (memory.dim(0) != b || src_mask.rows != b || memory.dim(1) != src_mask.cols) {
    throw std::invalid_argument("decode_logits: memory/mask/decoder batch mismatch");
  }
  Rng* rng = opts.dropout_rng;
  Tensor x = dropout(embed("tgt_embed", decoder_input.data, b, t, 0), config_.dropout, rng);
  std::vector<std::uint8_t> causal(static_cast<size_t>(b) * t * t, 0);
  for (int r = 0; r < b; ++r)
    for (int i = 0; i < t; ++i)
      for (int j = i + 1; j < t; ++j) causal[(static_cast<size_t>(r) * t + i) * t + j] = 1;
  const auto cross_blocked = key_padding_block(src_mask, t);
  for (int l = 0; l < config_.n_layers_dec; ++l) {
    const auto p = layer_prefix("dec", l);
    Tensor a = multi_head_attention(linear(x, p + "self.q"), linear(x, p + "self.k"),
                                    linear(x, p + "self.v"), config_.n_heads, &causal);
    a = dropout(linear(a, p + "self.o"), config_.dropout, rng);
    x = layer_norm(add(x, a), params_.at(p + "ln1.g"), params_.at(p + "ln1.b"));
    Tensor c = multi_head_attention(linear(x, p + "cross.q"), linear(memory, p + "cross.k"),
                                    linear(memory, p + "cross.v"), config_.n_heads, &cross_blocked);
    c = dropout(linear(c, p + "cross.o"), config_.dropout, rng);
    x = layer_norm(add(x, c), params_.at(p + "ln2.g"), params_.at(p + "ln2.b"));
    x = layer_norm(add(x, feed_forward(x, p, rng)), params_.at(p + "ln3.g"), params_.at(p + "ln3.b"));
  }
  return output_logits(x);
}

Tensor Transformer::forward_logp(const TokenMatrix& src_tokens, const Mask& src_mask,
                                 const TokenMatrix& decoder_input, const ForwardOptions& opts) const {
  Tensor memory = encode(src_tokens, src_mask, opts);
  return log_softmax(decode_logits(memory, src_mask, decoder_input, opts), -1);
}

// ---- incremental decoding -------------------------------------------------

class TransformerSession : public DecodeSession {
 public:
  TransformerSession(const Transformer& model, const std::vector<Sentence>& sources)
      : model_(model) {
    NoGradGuard no_grad;
    TokenMatrix src;
    make_source_matrix(sources, src, src_mask_);
    rows_ = src.rows;
    Tensor memory = model_.encode(src, src_mask_);
    const int layers = model_.config_.n_layers_dec;
    self_k_.resize(layers);
    self_v_.resize(layers);
    for (int l = 0; l < layers; ++l) {
      const auto p = layer_prefix("dec", l);
      cross_k_.push_back(model_.linear(memory, p + "cross.k"));
      cross_v_.push_back(model_.linear(memory, p + "cross.v"));
    }
  }

  int rows() const override { return rows_; }

  std::vector<float> step(std::span<const int> tokens) override {
    if (static_cast<int>(tokens.size()) != rows_) throw std::invalid_argument("step: one token per row required");
    NoGradGuard no_grad;
    const auto& params = model_.params_;
    const int heads = model_.config_.n_heads;
    Tensor x = model_.embed("tgt_embed", tokens, rows_, 1, position_);
    const auto cross_blocked = key_padding_block(src_mask_, 1);
    for (size_t l = 0; l < self_k_.size(); ++l) {
      const auto p = layer_prefix("dec", static_cast<int>(l));
      self_k_[l] = append_time(self_k_[l], model_.linear(x, p + "self.k"));
      self_v_[l] = append_time(self_v_[l], model_.linear(x, p + "self.v"));
      Tensor a = multi_head_attention(model_.linear(x, p + "self.q"), self_k_[l], self_v_[l], heads, nullptr);
      x = layer_norm(add(x, model_.linear(a, p + "self.o")), params.at(p + "ln1.g"), params.at(p + "ln1.b"));
      Tensor c = multi_head_attention(model_.linear(x, p + "cross.q"), cross_k_[l], cross_v_[l], heads,
                                      &cross_blocked);
      x = layer_norm(add(x, model_.linear(c, p + "cross.o")), params.at(p + "ln2.g"), params.at(p + "ln2.b"));
      x = layer_norm(add(x, model_.feed_forward(x, p, nullptr)), params.at(p + "ln3.g"),
                     params.at(p + "ln3.b"));
    }
    ++position_;
    Tensor logp = log_softmax(model_.output_logits(x), -1);
    return {logp.data().begin(), logp.data().end()};
  }

  void reorder(std::span<const int> parents) override {
    for (int p : parents)
      if (p < 0 || p >= rows_) throw std::out_of_range("reorder: parent row out of range");
    for (auto* caches : {&self_k_, &self_v_, &cross_k_, &cross_v_})
      for (auto& t : *caches)
        if (t.defined()) t = gather_rows(t, parents);
    Mask mask(static_cast<int>(parents.size()), src_mask_.cols);
    for (size_t i = 0; i < parents.size(); ++i)
      for (int j = 0; j < mask.cols; ++j) mask(static_cast<int>(i), j) = src_mask_(parents[i], j);
    src_mask_ = std::move(mask);
    rows_ = static_cast<int>(parents.size());
  }

 private:
  const Transformer& model_;
  int rows_ = 0;
  int position_ = 0;
  Mask src_mask_;
  std::vector<Tensor> self_k_, self_v_, cross_k_, cross_v_;
};

std::unique_ptr<DecodeSession> Transformer::start(const std::vector<Sentence>& sources) const {
  return std::make_unique<TransformerSession>(*this, sources);
}

std::vector<float> Transformer::token_logp(const Sentence& source, const Sentence& tokens) const {
  if (tokens.empty()) return {};
  NoGradGuard no_grad;
  TokenMatrix src;
  Mask src_mask;
  make_source_matrix({source}, src, src_mask);
  const int n = static_cast<int>(tokens.size());
  TokenMatrix dec(1, n);
  dec(0, 0) = kBos;
  for (int t = 1; t < n; ++t) dec(0, t) = tokens[t - 1];
  Tensor logp = forward_logp(src, src_mask, dec);
  const int v = config_.vocab_size_tgt;
  std::vector<float> out(n);
  for (int t = 0; t < n; ++t) out[t] = logp.at(static_cast<size_t>(t) * v + tokens[t]);
  return out;
}

// ---- SequenceModel default ------------------------------------------------

std::vector<float> SequenceModel::token_logp(const Sentence& source, const Sentence& tokens) const {
  auto session = start({source});
  std::vector<float> out;
  int input = kBos;
  for (int token : tokens) {
    auto logp = session->step(std::span<const int>(&input, 1));
    out.push_back(logp[static_cast<size_t>(token)]);
    input = token;
  }
  return out;
}

}  // namespace mixce
