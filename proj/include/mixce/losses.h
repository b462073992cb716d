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

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixce/tensor.h"
#include "mixce/types.h"

namespace mixce {

enum class LossVariant {
  kCE,
  kMixedTF,
  kMixedSS,
  kSoftMixedSS,
  kDoubleMixedSS,
  kMixedSS2nd,
  kTop2MixedSS,
  kRandomMixedSS,
  kSelfDistill,
};

LossVariant parse_loss_variant(std::string_view name);
std::string variant_name(LossVariant variant);
// True for every variant that is defined on the second (mixed-input) pass.
bool requires_second_pass(LossVariant variant);

enum class PassKind { kFirstPassGoldInput, kSecondPassMixedInput, kSinglePass };

// (batch, tgt_len, vocab) log-probabilities tagged with the decoder input
// they were computed from.
struct TokenLogLik {
  Tensor logp;
  PassKind pass = PassKind::kSinglePass;
};

struct Smoothing {
  float gamma = 0.0f;
  // Whether the model-derived (oracle) term is smoothed like the gold term.
  bool smooth_oracle_term = true;
};

// One cross-entropy term: either against index targets or against a dense
// (batch, tgt_len, vocab) distribution.
struct LossTerm {
  float weight = 1.0f;
  const TokenMatrix* targets = nullptr;
  std::span<const float> distribution;
  bool oracle = false;
};

// sum_j weight_j * CE_j where each CE_j is the mean over non-pad positions of
// the cross entropy against the (smoothed) target of that term.
Tensor apply_smoothing_to_loss(const Tensor& logp, std::span<const LossTerm> terms,
                               const Mask& mask, const Smoothing& smoothing);

std::vector<float> label_smoothed_target(int gold, float gamma, int vocab_size);

// Per-position argmax over the vocabulary; lowest index wins ties.
TokenMatrix argmax_tokens(const Tensor& logp);

Tensor ce_loss(const TokenLogLik& logp, const TokenMatrix& gold, const Mask& mask,
               float gamma = 0.0f);

// (1 - alpha) CE(gold) + alpha CE(argmax of the same pass).
Tensor mixed_ce_tf(const TokenLogLik& logp, const TokenMatrix& gold, double alpha,
                   const Mask& mask, const Smoothing& smoothing = {});

// (1 - alpha) CE(gold | y_mix) + alpha CE(oracle | y_mix); oracle tokens come
// from the gradient-free first pass.
Tensor mixed_ce_ss(const TokenLogLik& logp2, const TokenMatrix& gold, const TokenMatrix& oracle,
                   double alpha, const Mask& mask, const Smoothing& smoothing = {});

// Second term is the full cross entropy against the first-pass distribution q.
Tensor soft_mixed_ce_ss(const TokenLogLik& logp2, const TokenMatrix& gold,
                        std::span<const float> q_first_pass, double alpha, const Mask& mask,
                        const Smoothing& smoothing = {});

// (1 - alpha) CE(gold) + alpha/2 [CE(first-pass argmax) + CE(second-pass argmax)].
Tensor double_mixed_ce(const TokenLogLik& logp2, const TokenMatrix& gold,
                       const TokenMatrix& oracle_first, double alpha, const Mask& mask,
                       const Smoothing& smoothing = {});

// mixed_ce_tf with the argmax taken from the second pass.
Tensor mixed_ce_2nd_pass(const TokenLogLik& logp2, const TokenMatrix& gold, double alpha,
                         const Mask& mask, const Smoothing& smoothing = {});

// Teacher-forcing mixed CE whose model term uses regenerated targets.
Tensor self_distill_ce(const TokenLogLik& logp, const TokenMatrix& gold,
                       const TokenMatrix& distilled, double alpha, const Mask& mask,
                       const Smoothing& smoothing = {});

}  // namespace mixce
