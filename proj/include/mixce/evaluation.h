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

#include <array>
#include <iosfwd>
#include <optional>
#include <vector>

#include "mixce/sequence_model.h"
#include "mixce/types.h"

namespace mixce {

struct BleuStats {
  std::array<long, 4> matches{};  // clipped n-gram matches, n = 1..4
  std::array<long, 4> totals{};   // hypothesis n-grams
  long hyp_len = 0;
  long ref_len = 0;

  BleuStats& operator+=(const BleuStats& o);
  // 0..100; zero as soon as any precision is zero.
  double score() const;
};

BleuStats sentence_stats(const Sentence& hyp, const Sentence& ref);
BleuStats corpus_stats(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs);
double corpus_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs);

struct ReferenceScore {
  double avg = 0.0;
  double top = 0.0;
};

// hyp_sets[s][k] is the k-th hypothesis for source s; reference_sets[j][s]
// is reference j for source s.
std::vector<ReferenceScore> multi_reference_eval(const std::vector<std::vector<Sentence>>& hyp_sets,
                                                 const std::vector<std::vector<Sentence>>& reference_sets);

// Mean corpus BLEU over ordered pairs (a, b), a != b, of sample indices.
double pairwise_bleu(const std::vector<std::vector<Sentence>>& hyp_sets);

// curve[k-1] = mean over sources of the probability mass of the k best
// unnormalized beam hypotheses.
std::vector<double> cumulative_sequence_probability(const SequenceModel& model,
                                                    const std::vector<Sentence>& sources,
                                                    int beam_size, int max_len);

struct ProbeItem {
  Sentence source;
  Sentence prefix;  // target words before the probed position
  int gold = 0;
  std::vector<int> synonyms;  // includes gold
};

// Mean over items of the next-token mass on the synonym set.
double synonym_mass_probe(const SequenceModel& model, const std::vector<ProbeItem>& items);

struct EvalReport {
  std::optional<double> corpus_bleu;
  std::vector<ReferenceScore> per_reference;
  std::optional<double> pairwise_bleu;
  std::vector<double> cumprob_curve;
  std::optional<double> synonym_mass;
};

void write_report(std::ostream& out, const EvalReport& report);
void write_curve(std::ostream& out, const std::vector<double>& curve);

}  // namespace mixce
