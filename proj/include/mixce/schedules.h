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

#include <optional>
#include <span>
#include <vector>

namespace mixce {

// m * i / total_iter for 1 <= i <= total_iter.
double alpha_at(long i, long total_iter, double m);
// d^(i / total_iter); the probability of keeping a gold decoder input.
double epsilon_at(long i, long total_iter, double d);

struct ScheduleParams {
  double m = 0.5;
  double d = 0.8;
  std::optional<double> fixed_alpha;

  void validate() const;
};

struct ScheduleValues {
  double alpha = 0.0;
  double epsilon = 1.0;
};

// Values for phase-two step i. While pretraining, alpha is 0 and epsilon 1.
ScheduleValues schedule_values(const ScheduleParams& params, long i, long total_iter,
                               bool pretraining = false);

// Returns current_lr * factor when the best of the last `patience` entries
// does not beat the best entry before them, else current_lr.
double lr_on_plateau(std::span<const double> bleu_history, double current_lr,
                     int patience = 4, double factor = 0.5);

// Epoch-by-epoch driver around lr_on_plateau. After a reduction the next
// check waits until `patience` further epochs have been seen.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, int patience = 4, double factor = 0.5);

  // Records one validation score and returns the learning rate to use next.
  double observe(double bleu);

  double lr() const { return lr_; }
  int reductions() const { return reductions_; }
  const std::vector<double>& history() const { return history_; }

 private:
  double lr_;
  int patience_;
  double factor_;
  int reductions_ = 0;
  size_t last_reduction_ = 0;  // history size at the last reduction
  std::vector<double> history_;
};

}  // namespace mixce
