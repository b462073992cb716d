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

#include "mixce/schedules.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mixce {
namespace {

void check_step(long i, long total_iter) {
  if (total_iter < 1) throw std::invalid_argument("total_iter must be positive");
  if (i < 1 || i > total_iter)
    throw std::out_of_range("iteration " + std::to_string(i) + " outside [1, " +
                            std::to_string(total_iter) + "]");
}

}  // namespace

double alpha_at(long i, long total_iter, double m) {
  check_step(i, total_iter);
  if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("m must lie in [0, 1]");
  return m * static_cast<double>(i) / static_cast<double>(total_iter);
}

double epsilon_at(long i, long total_iter, double d) {
  check_step(i, total_iter);
  if (!(d > 0.0 && d < 1.0)) throw std::invalid_argument("d must lie in (0, 1)");
  return std::pow(d, static_cast<double>(i) / static_cast<double>(total_iter));
}

void ScheduleParams::validate() const {
  if (!(m >= 0.0 && m <= 1.0)) throw std::invalid_argument("m must lie in [0, 1]");
  if (!(d > 0.0 && d < 1.0)) throw std::invalid_argument("d must lie in (0, 1)");
  if (fixed_alpha && !(*fixed_alpha >= 0.0 && *fixed_alpha <= 1.0))
    throw std::invalid_argument("fixed alpha must lie in [0, 1]");
}

ScheduleValues schedule_values(const ScheduleParams& params, long i, long total_iter,
                               bool pretraining) {
  params.validate();
  if (pretraining) return {};
  ScheduleValues v;
  v.alpha = params.fixed_alpha ? (check_step(i, total_iter), *params.fixed_alpha)
                               : alpha_at(i, total_iter, params.m);
  v.epsilon = epsilon_at(i, total_iter, params.d);
  return v;
}

double lr_on_plateau(std::span<const double> bleu_history, double current_lr, int patience,
                     double factor) {
  if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  const size_t n = bleu_history.size();
  if (n <= static_cast<size_t>(patience)) return current_lr;
  const auto split = bleu_history.end() - patience;
  const double before = *std::max_element(bleu_history.begin(), split);
  const double recent = *std::max_element(split, bleu_history.end());
  return recent <= before ? current_lr * factor : current_lr;
}

PlateauScheduler::PlateauScheduler(double initial_lr, int patience, double factor)
    : lr_(initial_lr), patience_(patience), factor_(factor) {
  if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("factor must lie in (0, 1)");
}

double PlateauScheduler::observe(double bleu) {
  history_.push_back(bleu);
  if (reductions_ > 0 && history_.size() - last_reduction_ < static_cast<size_t>(patience_))
    return lr_;
  const double next = lr_on_plateau(history_, lr_, patience_, factor_);
  if (next != lr_) {
    lr_ = next;
    ++reductions_;
    last_reduction_ = history_.size();
  }
  return lr_;
}

}  // namespace mixce
