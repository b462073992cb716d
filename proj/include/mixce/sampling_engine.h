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

#include "mixce/batch.h"
#include "mixce/losses.h"
#include "mixce/schedules.h"
#include "mixce/transformer.h"

namespace mixce {

struct FirstPassOutput {
  TokenLogLik logp;  // detached, kFirstPassGoldInput
  TokenMatrix argmax_tokens;
  std::vector<float> full_probs;  // exp(logp); filled only on request
};

// Gold-input forward with graph recording off. Dropout follows `dropout_rng`.
FirstPassOutput first_pass(const Transformer& model, const Batch& batch, Rng* dropout_rng,
                           bool keep_probs = false);

enum class OracleKind { kArgmax, kTop2Random, kRandomOnMismatch };

OracleKind parse_oracle_kind(std::string_view name);

// -log(-log(u)) for u in (0, 1).
double gumbel_from_uniform(double u);
// One Gumbel(0, 1) draw; u is redrawn while it is exactly 0 or 1.
double sample_gumbel(Rng& rng);

std::vector<float> gumbel_perturb(std::span<const float> logp_row, Rng& rng, double scale = 1.0);
// Same with the uniforms supplied by the caller.
std::vector<float> gumbel_perturb(std::span<const float> logp_row, std::span<const double> uniforms);

// Per-position argmax of logp + scale * Gumbel noise. Padded positions keep
// the plain argmax and consume no draws.
TokenMatrix perturbed_argmax(const Tensor& logp, const Mask& mask, Rng& rng, double scale = 1.0);

// Loss-side oracle tokens built from the first pass.
TokenMatrix select_oracle_tokens(const FirstPassOutput& first, const TokenMatrix& gold,
                                 OracleKind kind, Rng& rng);

// Decoder-input view of per-position predictions: [bos, pred_0, pred_1, ...].
TokenMatrix predictions_to_inputs(const TokenMatrix& predicted_out);

// Keeps each gold decoder input with probability epsilon, otherwise takes
// the predicted one. Position 0 and padded positions stay gold.
TokenMatrix mix_sequences(const TokenMatrix& gold_input, const TokenMatrix& predicted_input,
                          const Mask& mask, double epsilon, Rng& rng);

struct StepSpec {
  LossVariant variant = LossVariant::kCE;
  bool scheduled_sampling = false;  // implied by the SS-only variants
  bool word_oracle = false;
  double gumbel_scale = 1.0;
  Smoothing smoothing;
};

// Independent streams so that, e.g., first-pass dropout never shifts the
// mixing draws. Null dropout pointers disable dropout for that pass.
struct StepRngs {
  Rng* dropout = nullptr;
  Rng* first_pass_dropout = nullptr;
  Rng* mixing = nullptr;
  Rng* oracle = nullptr;
  Rng* gumbel = nullptr;
};

struct StepResult {
  Tensor loss;
  TokenMatrix decoder_input;  // what the graded pass was fed
  TokenMatrix loss_oracle;    // model-derived loss targets, empty for CE
  long replaced = 0;          // decoder inputs taken from predictions
  long mixable = 0;
};

// Full composition for one minibatch: teacher forcing or first pass, mixing
// and the graded second pass, followed by the configured loss.
StepResult training_step(const Transformer& model, const Batch& batch, const ScheduleValues& sched,
                         const StepSpec& spec, StepRngs& rngs);

}  // namespace mixce
