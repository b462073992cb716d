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

#include "mixce/losses.h"

#include <cmath>
#include <map>
#include <stdexcept>

namespace mixce {

namespace {

void check_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
}

void check_pass(const TokenLogLik& logp, PassKind expected, const char* what) {
  if (logp.pass != expected) {
    throw std::invalid_argument(std::string(what) + ": log-likelihoods come from the wrong forward pass");
  }
}

void check_same_shape(const TokenMatrix& a, const TokenMatrix& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": token matrix shape " + std::to_string(a.rows) +
                                "x" + std::to_string(a.cols) + " does not match gold " +
                                std::to_string(b.rows) + "x" + std::to_string(b.cols));
  }
}

}  // namespace

LossVariant parse_loss_variant(std::string_view name) {
  static const std::map<std::string_view, LossVariant> kNames = {
      {"ce", LossVariant::kCE},
      {"mixed_tf", LossVariant::kMixedTF},
      {"mixed_ss", LossVariant::kMixedSS},
      {"soft_mixed_ss", LossVariant::kSoftMixedSS},
      {"double_mixed_ss", LossVariant::kDoubleMixedSS},
      {"mixed_ss_2nd", LossVariant::kMixedSS2nd},
      {"top2_mixed_ss", LossVariant::kTop2MixedSS},
      {"random_mixed_ss", LossVariant::kRandomMixedSS},
      {"self_distill", LossVariant::kSelfDistill},
  };
  auto it = kNames.find(name);
  if (it == kNames.end()) throw std::invalid_argument("unknown loss variant '" + std::string(name) + "'");
  return it->second;
}

std::string variant_name(LossVariant variant) {
  switch (variant) {
    case LossVariant::kCE: return "ce";
    case LossVariant::kMixedTF: return "mixed_tf";
    case LossVariant::kMixedSS: return "mixed_ss";
    case LossVariant::kSoftMixedSS: return "soft_mixed_ss";
    case LossVariant::kDoubleMixedSS: return "double_mixed_ss";
    case LossVariant::kMixedSS2nd: return "mixed_ss_2nd";
    case LossVariant::kTop2MixedSS: return "top2_mixed_ss";
    case LossVariant::kRandomMixedSS: return "random_mixed_ss";
    case LossVariant::kSelfDistill: return "self_distill";
  }
  return "?";
}

bool requires_second_pass(LossVariant variant) {
  switch (variant) {
    case LossVariant::kMixedSS:
    case LossVariant::kSoftMixedSS:
    case LossVariant::kDoubleMixedSS:
    case LossVariant::kMixedSS2nd:
    case LossVariant::kTop2MixedSS:
    case LossVariant::kRandomMixedSS:
      return true;
    default:
      return false;
  }
}

std::vector<float> label_smoothed_target(int gold, float gamma, int vocab_size) {
  if (!(gamma >= 0.0f && gamma < 1.0f)) throw std::invalid_argument("smoothing gamma must lie in [0, 1)");
  if (gold < 0 || gold >= vocab_size) throw std::out_of_range("gold index outside vocabulary");
  std::vector<float> dist(vocab_size, gamma / vocab_size);
  dist[gold] += 1.0f - gamma;
  return dist;
}

TokenMatrix argmax_tokens(const Tensor& logp) {
  if (logp.rank() != 3) throw std::invalid_argument("argmax_tokens: expected (batch, len, vocab)");
  const int b = logp.dim(0), t = logp.dim(1), v = logp.dim(2);
  TokenMatrix out(b, t);
  const auto data = logp.data();
  for (int r = 0; r < b; ++r) {
    for (int c = 0; c < t; ++c) {
      const size_t base = (static_cast<size_t>(r) * t + c) * v;
      int best = 0;
      for (int k = 1; k < v; ++k)
        if (data[base + k] > data[base + best]) best = k;
      out(r, c) = best;
    }
  }
  return out;
}

Tensor apply_smoothing_to_loss(const Tensor& logp, std::span<const LossTerm> terms, const Mask& mask,
                               const Smoothing& smoothing) {
  if (logp.rank() != 3) throw std::invalid_argument("loss: expected (batch, len, vocab) log-probabilities");
  if (!(smoothing.gamma >= 0.0f && smoothing.gamma < 1.0f)) {
    throw std::invalid_argument("smoothing gamma must lie in [0, 1)");
  }
  if (terms.empty()) throw std::invalid_argument("loss: no terms");
  const int b = logp.dim(0), t = logp.dim(1), v = logp.dim(2);
  if (mask.rows != b || mask.cols != t) throw std::invalid_argument("loss: mask shape does not match log-probabilities");
  size_t count = 0;
  for (auto m : mask.data) count += m != 0;
  if (count == 0) throw std::invalid_argument("loss: every position is padding");
  const double inv_count = 1.0 / static_cast<double>(count);

  Tensor total;
  for (const LossTerm& term : terms) {
    const float gamma = (term.oracle && !smoothing.smooth_oracle_term) ? 0.0f : smoothing.gamma;
    std::vector<float> weights(logp.numel(), 0.0f);
    if (term.targets != nullptr) {
      if (term.targets->rows != b || term.targets->cols != t) {
        throw std::invalid_argument("loss: target matrix shape does not match log-probabilities");
      }
    } else if (term.distribution.size() != logp.numel()) {
      throw std::invalid_argument("loss: target distribution size does not match log-probabilities");
    }
    for (int r = 0; r < b; ++r) {
      for (int c = 0; c < t; ++c) {
        if (!mask(r, c)) continue;
        const size_t base = (static_cast<size_t>(r) * t + c) * v;
        if (term.targets != nullptr) {
          const int target = (*term.targets)(r, c);
          if (target < 0 || target >= v) {
            throw std::out_of_range("loss: target id " + std::to_string(target) + " at (" +
                                    std::to_string(r) + "," + std::to_string(c) + ") outside vocabulary");
          }
          weights[base + target] -= static_cast<float>((1.0 - gamma) * inv_count);
          if (gamma > 0.0f) {
            const float spread = static_cast<float>(gamma / v * inv_count);
            for (int k = 0; k < v; ++k) weights[base + k] -= spread;
          }
        } else {
          for (int k = 0; k < v; ++k) {
            const double target = (1.0 - gamma) * term.distribution[base + k] + double{gamma} / v;
            weights[base + k] -= static_cast<float>(target * inv_count);
          }
        }
      }
    }
    Tensor ce = scale(weighted_sum(logp, weights), term.weight);
    total = total.defined() ? add(total, ce) : ce;
  }
  return total;
}

Tensor ce_loss(const TokenLogLik& logp, const TokenMatrix& gold, const Mask& mask, float gamma) {
  const LossTerm term{1.0f, &gold, {}, false};
  return apply_smoothing_to_loss(logp.logp, std::span(&term, 1), mask, Smoothing{gamma, true});
}

namespace {

Tensor two_term(const Tensor& logp, const TokenMatrix& gold, const TokenMatrix& model_tokens, double alpha,
                const Mask& mask, const Smoothing& smoothing) {
  const LossTerm terms[] = {
      {static_cast<float>(1.0 - alpha), &gold, {}, false},
      {static_cast<float>(alpha), &model_tokens, {}, true},
  };
  return apply_smoothing_to_loss(logp, terms, mask, smoothing);
}

}  // namespace

Tensor mixed_ce_tf(const TokenLogLik& logp, const TokenMatrix& gold, double alpha, const Mask& mask,
                   const Smoothing& smoothing) {
  check_alpha(alpha);
  check_pass(logp, PassKind::kSinglePass, "mixed_ce_tf");
  const TokenMatrix predicted = argmax_tokens(logp.logp);
  return two_term(logp.logp, gold, predicted, alpha, mask, smoothing);
}

Tensor mixed_ce_ss(const TokenLogLik& logp2, const TokenMatrix& gold, const TokenMatrix& oracle, double alpha,
                   const Mask& mask, const Smoothing& smoothing) {
  check_alpha(alpha);
  check_pass(logp2, PassKind::kSecondPassMixedInput, "mixed_ce_ss");
  check_same_shape(oracle, gold, "mixed_ce_ss");
  return two_term(logp2.logp, gold, oracle, alpha, mask, smoothing);
}

Tensor soft_mixed_ce_ss(const TokenLogLik& logp2, const TokenMatrix& gold, std::span<const float> q_first_pass,
                        double alpha, const Mask& mask, const Smoothing& smoothing) {
  check_alpha(alpha);
  check_pass(logp2, PassKind::kSecondPassMixedInput, "soft_mixed_ce_ss");
  const Tensor& logp = logp2.logp;
  if (q_first_pass.size() != logp.numel()) throw std::invalid_argument("soft_mixed_ce_ss: q has the wrong size");
  const int b = logp.dim(0), t = logp.dim(1), v = logp.dim(2);
  for (int r = 0; r < b; ++r) {
    for (int c = 0; c < t; ++c) {
      if (r >= mask.rows || c >= mask.cols || !mask(r, c)) continue;
      double total = 0.0;
      for (int k = 0; k < v; ++k) total += q_first_pass[(static_cast<size_t>(r) * t + c) * v + k];
      if (std::abs(total - 1.0) > 1e-4) {
        throw std::invalid_argument("soft_mixed_ce_ss: first-pass distribution at (" + std::to_string(r) + "," +
                                    std::to_string(c) + ") sums to " + std::to_string(total));
      }
    }
  }
  const LossTerm terms[] = {
      {static_cast<float>(1.0 - alpha), &gold, {}, false},
      {static_cast<float>(alpha), nullptr, q_first_pass, true},
  };
  return apply_smoothing_to_loss(logp, terms, mask, smoothing);
}

Tensor double_mixed_ce(const TokenLogLik& logp2, const TokenMatrix& gold, const TokenMatrix& oracle_first,
                       double alpha, const Mask& mask, const Smoothing& smoothing) {
  check_alpha(alpha);
  check_pass(logp2, PassKind::kSecondPassMixedInput, "double_mixed_ce");
  check_same_shape(oracle_first, gold, "double_mixed_ce");
  const TokenMatrix second = argmax_tokens(logp2.logp);
  const LossTerm terms[] = {
      {static_cast<float>(1.0 - alpha), &gold, {}, false},
      {static_cast<float>(alpha / 2.0), &oracle_first, {}, true},
      {static_cast<float>(alpha / 2.0), &second, {}, true},
  };
  return apply_smoothing_to_loss(logp2.logp, terms, mask, smoothing);
}

Tensor mixed_ce_2nd_pass(const TokenLogLik& logp2, const TokenMatrix& gold, double alpha, const Mask& mask,
                         const Smoothing& smoothing) {
  check_alpha(alpha);
  check_pass(logp2, PassKind::kSecondPassMixedInput, "mixed_ce_2nd_pass");
  const TokenMatrix second = argmax_tokens(logp2.logp);
  return two_term(logp2.logp, gold, second, alpha, mask, smoothing);
}

Tensor self_distill_ce(const TokenLogLik& logp, const TokenMatrix& gold, const TokenMatrix& distilled,
                       double alpha, const Mask& mask, const Smoothing& smoothing) {
  check_alpha(alpha);
  check_pass(logp, PassKind::kSinglePass, "self_distill_ce");
  check_same_shape(distilled, gold, "self_distill_ce");
  return two_term(logp.logp, gold, distilled, alpha, mask, smoothing);
}

}  // namespace mixce
