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

#include "mixce/sampling_engine.h"

#include <cmath>
#include <map>
#include <stdexcept>

namespace mixce {
namespace {

Rng& need(Rng* rng, const char* what) {
  if (rng == nullptr) throw std::invalid_argument(std::string("missing generator: ") + what);
  return *rng;
}

int row_argmax(std::span<const float> row) {
  int best = 0;
  for (int k = 1; k < static_cast<int>(row.size()); ++k)
    if (row[k] > row[best]) best = k;
  return best;
}

}  // namespace

FirstPassOutput first_pass(const Transformer& model, const Batch& batch, Rng* dropout_rng,
                           bool keep_probs) {
  NoGradGuard guard;
  FirstPassOutput out;
  Tensor lp = model.forward_logp(batch.src_tokens, batch.src_mask, batch.tgt_tokens, {dropout_rng});
  out.logp = {lp.detach(), PassKind::kFirstPassGoldInput};
  out.argmax_tokens = argmax_tokens(out.logp.logp);
  if (keep_probs) {
    auto d = out.logp.logp.data();
    out.full_probs.resize(d.size());
    for (size_t i = 0; i < d.size(); ++i) out.full_probs[i] = std::exp(d[i]);
  }
  return out;
}

OracleKind parse_oracle_kind(std::string_view name) {
  static const std::map<std::string_view, OracleKind> kNames = {
      {"argmax", OracleKind::kArgmax},
      {"top2_random", OracleKind::kTop2Random},
      {"random_on_mismatch", OracleKind::kRandomOnMismatch},
  };
  auto it = kNames.find(name);
  if (it == kNames.end()) throw std::invalid_argument("unknown oracle policy '" + std::string(name) + "'");
  return it->second;
}

double gumbel_from_uniform(double u) {
  if (!(u > 0.0 && u < 1.0)) throw std::domain_error("gumbel uniform must lie in (0, 1)");
  return -std::log(-std::log(u));
}

double sample_gumbel(Rng& rng) {
  double u = uniform01(rng);
  while (u <= 0.0 || u >= 1.0) u = uniform01(rng);
  return gumbel_from_uniform(u);
}

std::vector<float> gumbel_perturb(std::span<const float> logp_row, Rng& rng, double scale) {
  std::vector<float> s(logp_row.size());
  for (size_t k = 0; k < s.size(); ++k) {
    if (!std::isfinite(logp_row[k])) throw std::domain_error("non-finite log-probability");
    s[k] = static_cast<float>(logp_row[k] + scale * sample_gumbel(rng));
  }
  return s;
}

std::vector<float> gumbel_perturb(std::span<const float> logp_row, std::span<const double> uniforms) {
  if (uniforms.size() != logp_row.size()) throw std::invalid_argument("one uniform per coordinate");
  std::vector<float> s(logp_row.size());
  for (size_t k = 0; k < s.size(); ++k) s[k] = static_cast<float>(logp_row[k] + gumbel_from_uniform(uniforms[k]));
  return s;
}

TokenMatrix perturbed_argmax(const Tensor& logp, const Mask& mask, Rng& rng, double scale) {
  const int rows = logp.dim(0), cols = logp.dim(1), vocab = logp.dim(2);
  if (mask.rows != rows || mask.cols != cols) throw std::invalid_argument("mask shape mismatch");
  TokenMatrix out(rows, cols);
  auto d = logp.data();
  for (int r = 0; r < rows; ++r) {
    for (int t = 0; t < cols; ++t) {
      auto row = d.subspan((static_cast<size_t>(r) * cols + t) * vocab, vocab);
      out(r, t) = mask(r, t) ? row_argmax(gumbel_perturb(row, rng, scale)) : row_argmax(row);
    }
  }
  return out;
}

TokenMatrix select_oracle_tokens(const FirstPassOutput& first, const TokenMatrix& gold,
                                 OracleKind kind, Rng& rng) {
  const TokenMatrix& hat = first.argmax_tokens;
  if (!gold.same_shape(hat)) throw std::invalid_argument("gold and first-pass shapes differ");
  const int vocab = first.logp.logp.dim(2);
  switch (kind) {
    case OracleKind::kArgmax:
      return hat;
    case OracleKind::kTop2Random: {
      TokenMatrix out(hat.rows, hat.cols);
      auto d = first.logp.logp.data();
      for (size_t i = 0; i < hat.size(); ++i) {
        auto row = d.subspan(i * vocab, vocab);
        int second = hat.data[i] == 0 ? 1 : 0;
        for (int k = 0; k < vocab; ++k)
          if (k != hat.data[i] && row[k] > row[second]) second = k;
        out.data[i] = (rng() >> 63) ? second : hat.data[i];
      }
      return out;
    }
    case OracleKind::kRandomOnMismatch: {
      TokenMatrix out(hat.rows, hat.cols);
      for (size_t i = 0; i < hat.size(); ++i)
        out.data[i] = hat.data[i] == gold.data[i] ? gold.data[i] : uniform_int(rng, vocab);
      return out;
    }
  }
  throw std::invalid_argument("unknown oracle policy");
}

TokenMatrix predictions_to_inputs(const TokenMatrix& predicted_out) {
  TokenMatrix in(predicted_out.rows, predicted_out.cols);
  for (int r = 0; r < in.rows; ++r) {
    in(r, 0) = kBos;
    for (int t = 1; t < in.cols; ++t) in(r, t) = predicted_out(r, t - 1);
  }
  return in;
}

TokenMatrix mix_sequences(const TokenMatrix& gold_input, const TokenMatrix& predicted_input,
                          const Mask& mask, double epsilon, Rng& rng) {
  if (!gold_input.same_shape(predicted_input) || !gold_input.same_shape(mask))
    throw std::invalid_argument("mix_sequences: shape mismatch");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("epsilon must lie in [0, 1]");
  TokenMatrix mixed = gold_input;
  for (int r = 0; r < mixed.rows; ++r)
    for (int t = 1; t < mixed.cols; ++t)
      if (mask(r, t) && uniform01(rng) >= epsilon) mixed(r, t) = predicted_input(r, t);
  return mixed;
}

StepResult training_step(const Transformer& model, const Batch& batch, const ScheduleValues& sched,
                         const StepSpec& spec, StepRngs& rngs) {
  const LossVariant v = spec.variant;
  const bool ss = spec.scheduled_sampling || requires_second_pass(v);
  const double alpha = sched.alpha;
  StepResult res;

  if (!ss) {
    Tensor lp = model.forward_logp(batch.src_tokens, batch.src_mask, batch.tgt_tokens, {rngs.dropout});
    const TokenLogLik single{lp, PassKind::kSinglePass};
    res.decoder_input = batch.tgt_tokens;
    switch (v) {
      case LossVariant::kCE:
        res.loss = ce_loss(single, batch.tgt_out, batch.tgt_mask, spec.smoothing.gamma);
        break;
      case LossVariant::kMixedTF:
        res.loss_oracle = argmax_tokens(lp);
        res.loss = mixed_ce_tf(single, batch.tgt_out, alpha, batch.tgt_mask, spec.smoothing);
        break;
      case LossVariant::kSelfDistill:
        if (!batch.distilled_out) throw std::invalid_argument("self_distill needs regenerated targets");
        res.loss_oracle = *batch.distilled_out;
        res.loss = self_distill_ce(single, batch.tgt_out, *batch.distilled_out, alpha, batch.tgt_mask,
                                   spec.smoothing);
        break;
      default:
        throw std::logic_error("unreachable");
    }
    return res;
  }

  if (v == LossVariant::kMixedTF || v == LossVariant::kSelfDistill)
    throw std::invalid_argument(variant_name(v) + " is a teacher-forcing loss");

  const FirstPassOutput first = first_pass(model, batch, rngs.first_pass_dropout, v == LossVariant::kSoftMixedSS);
  const TokenMatrix mixing_tokens =
      spec.word_oracle
          ? perturbed_argmax(first.logp.logp, batch.tgt_mask, need(rngs.gumbel, "gumbel"), spec.gumbel_scale)
          : first.argmax_tokens;
  res.decoder_input = mix_sequences(batch.tgt_tokens, predictions_to_inputs(mixing_tokens), batch.tgt_mask,
                                    sched.epsilon, need(rngs.mixing, "mixing"));
  for (size_t i = 0; i < res.decoder_input.size(); ++i) {
    if (i % res.decoder_input.cols == 0 || !batch.tgt_mask.data[i]) continue;
    ++res.mixable;
    if (res.decoder_input.data[i] != batch.tgt_tokens.data[i]) ++res.replaced;
  }

  Tensor lp2 = model.forward_logp(batch.src_tokens, batch.src_mask, res.decoder_input, {rngs.dropout});
  const TokenLogLik second{lp2, PassKind::kSecondPassMixedInput};
  const TokenMatrix& gold = batch.tgt_out;
  const Mask& mask = batch.tgt_mask;
  switch (v) {
    case LossVariant::kCE:
      res.loss = ce_loss(second, gold, mask, spec.smoothing.gamma);
      break;
    case LossVariant::kMixedSS:
      res.loss_oracle = first.argmax_tokens;
      res.loss = mixed_ce_ss(second, gold, res.loss_oracle, alpha, mask, spec.smoothing);
      break;
    case LossVariant::kTop2MixedSS:
      res.loss_oracle = select_oracle_tokens(first, gold, OracleKind::kTop2Random, need(rngs.oracle, "oracle"));
      res.loss = mixed_ce_ss(second, gold, res.loss_oracle, alpha, mask, spec.smoothing);
      break;
    case LossVariant::kRandomMixedSS:
      res.loss_oracle =
          select_oracle_tokens(first, gold, OracleKind::kRandomOnMismatch, need(rngs.oracle, "oracle"));
      res.loss = mixed_ce_ss(second, gold, res.loss_oracle, alpha, mask, spec.smoothing);
      break;
    case LossVariant::kSoftMixedSS:
      res.loss = soft_mixed_ce_ss(second, gold, first.full_probs, alpha, mask, spec.smoothing);
      break;
    case LossVariant::kDoubleMixedSS:
      res.loss_oracle = first.argmax_tokens;
      res.loss = double_mixed_ce(second, gold, res.loss_oracle, alpha, mask, spec.smoothing);
      break;
    case LossVariant::kMixedSS2nd:
      res.loss_oracle = argmax_tokens(lp2);
      res.loss = mixed_ce_2nd_pass(second, gold, alpha, mask, spec.smoothing);
      break;
    default:
      throw std::logic_error("unreachable");
  }
  return res;
}

}  // namespace mixce
