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

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mixce/batch.h"
#include "mixce/sequence_model.h"
#include "mixce/tensor.h"

namespace mixce {

struct ModelConfig {
  int vocab_size_src = 0;
  int vocab_size_tgt = 0;
  int d_model = 64;
  int n_heads = 4;
  int n_layers_enc = 2;
  int n_layers_dec = 2;
  int d_ff = 256;
  float dropout = 0.1f;
  int max_len = 256;
  bool share_embeddings = false;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Named learnable arrays. Iteration order is the name order, which fixes the
// layout of checkpoints and optimizer state.
class TransformerParams {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  size_t size() const { return tensors_.size(); }
  size_t total_elements() const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  void zero_grad();
  // Deep copy detached from any graph.
  TransformerParams clone() const;

 private:
  std::map<std::string, Tensor> tensors_;
};

// Dropout is active only when a generator is supplied.
struct ForwardOptions {
  Rng* dropout_rng = nullptr;
};

class Transformer : public SequenceModel {
 public:
  Transformer(ModelConfig config, std::uint64_t init_seed);
  Transformer(ModelConfig config, TransformerParams params);

  const ModelConfig& config() const { return config_; }
  TransformerParams& params() { return params_; }
  const TransformerParams& params() const { return params_; }

  // (batch, src_len, d_model); padded source positions are never attended to.
  Tensor encode(const TokenMatrix& src_tokens, const Mask& src_mask,
                const ForwardOptions& opts = {}) const;
  // (batch, tgt_len, vocab) logits under a causal self-attention mask.
  Tensor decode_logits(const Tensor& memory, const Mask& src_mask,
                       const TokenMatrix& decoder_input,
                       const ForwardOptions& opts = {}) const;
  // log_softmax(decode_logits(encode(src), decoder_input)).
  Tensor forward_logp(const TokenMatrix& src_tokens, const Mask& src_mask,
                      const TokenMatrix& decoder_input,
                      const ForwardOptions& opts = {}) const;

  int target_vocab_size() const override { return config_.vocab_size_tgt; }
  int max_decoder_len() const override { return config_.max_len; }
  std::unique_ptr<DecodeSession> start(const std::vector<Sentence>& sources) const override;
  std::vector<float> token_logp(const Sentence& source, const Sentence& tokens) const override;

 private:
  friend class TransformerSession;

  void check_shapes() const;
  Tensor embed(const std::string& table, std::span<const int> ids, int batch, int len,
               int first_position) const;
  Tensor linear(const Tensor& x, const std::string& prefix) const;
  Tensor output_logits(const Tensor& x) const;
  Tensor feed_forward(const Tensor& x, const std::string& prefix, Rng* rng) const;

  ModelConfig config_;
  TransformerParams params_;
  std::vector<float> positions_;  // (max_len, d_model) sinusoidal table
};

// Scaled dot-product attention over projected inputs q (B,Tq,d), k and v
// (B,Tk,d). `blocked` has B*Tq*Tk entries; nonzero means "may not attend".
Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            int n_heads, const std::vector<std::uint8_t>* blocked);

}  // namespace mixce
