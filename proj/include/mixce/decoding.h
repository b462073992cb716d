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

#include <string_view>
#include <vector>

#include "mixce/sequence_model.h"
#include "mixce/types.h"

namespace mixce {

struct Hypothesis {
  Sentence tokens;  // ends with eos unless truncated
  std::vector<float> positional_logp;
  double total_logp = 0.0;
  double avg_logp = 0.0;
  bool truncated = false;

  // Recomputes total and average from positional_logp.
  void finalize();
  // Tokens without the trailing eos.
  Sentence words() const;
};

enum class LengthNorm { kNone, kAvg };

LengthNorm parse_length_norm(std::string_view name);
double normalized_score(const Hypothesis& h, LengthNorm norm);

// Generation budget for a source: 2 * |src| + 10 tokens, capped by the model.
int default_max_len(const SequenceModel& model, const Sentence& src);

Hypothesis greedy_decode(const SequenceModel& model, const Sentence& src, int max_len);
// Row-parallel greedy decoding of many sources.
std::vector<Hypothesis> greedy_decode_batch(const SequenceModel& model,
                                            const std::vector<Sentence>& sources, int max_len);

// Exactly target_len non-eos tokens followed by eos.
Hypothesis forced_length_greedy(const SequenceModel& model, const Sentence& src, int target_len);
std::vector<Hypothesis> forced_length_greedy_batch(const SequenceModel& model,
                                                   const std::vector<Sentence>& sources,
                                                   const std::vector<int>& target_lens);

// Sorted best first under `norm`; at most beam_size entries.
std::vector<Hypothesis> beam_search(const SequenceModel& model, const Sentence& src, int beam_size,
                                    int max_len, LengthNorm norm = LengthNorm::kAvg);

// k ancestral samples at temperature 1.
std::vector<Hypothesis> sample_k(const SequenceModel& model, const Sentence& src, int k, Rng& rng,
                                 int max_len);
// Best of n samples by average log-likelihood; earliest sample wins ties.
Hypothesis sample_decode_best(const SequenceModel& model, const Sentence& src, int n_samples, Rng& rng,
                              int max_len);

}  // namespace mixce
