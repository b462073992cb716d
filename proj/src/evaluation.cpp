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

#include "mixce/evaluation.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <stdexcept>

#include "mixce/decoding.h"

namespace mixce {
namespace {

std::map<std::vector<int>, int> ngram_counts(const Sentence& s, int n) {
  std::map<std::vector<int>, int> counts;
  for (size_t i = 0; i + n <= s.size(); ++i) ++counts[std::vector<int>(s.begin() + i, s.begin() + i + n)];
  return counts;
}

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (int n = 0; n < 4; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

double BleuStats::score() const {
  if (hyp_len == 0) return 0.0;
  double log_p = 0.0;
  for (int n = 0; n < 4; ++n) {
    if (matches[n] == 0) return 0.0;
    log_p += std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n]));
  }
  const double bp = hyp_len >= ref_len ? 0.0 : 1.0 - static_cast<double>(ref_len) / hyp_len;
  return 100.0 * std::exp(bp + log_p / 4.0);
}

BleuStats sentence_stats(const Sentence& hyp, const Sentence& ref) {
  BleuStats s;
  s.hyp_len = static_cast<long>(hyp.size());
  s.ref_len = static_cast<long>(ref.size());
  for (int n = 1; n <= 4; ++n) {
    const auto h = ngram_counts(hyp, n);
    const auto r = ngram_counts(ref, n);
    for (const auto& [gram, count] : h) {
      auto it = r.find(gram);
      if (it != r.end()) s.matches[n - 1] += std::min(count, it->second);
    }
    s.totals[n - 1] = std::max<long>(0, s.hyp_len - n + 1);
  }
  return s;
}

BleuStats corpus_stats(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs) {
  if (hyps.empty()) throw std::invalid_argument("BLEU of an empty corpus");
  if (hyps.size() != refs.size())
    throw std::invalid_argument("hypothesis and reference counts differ (" + std::to_string(hyps.size()) +
                                " vs " + std::to_string(refs.size()) + ")");
  BleuStats total;
  for (size_t i = 0; i < hyps.size(); ++i) total += sentence_stats(hyps[i], refs[i]);
  return total;
}

double corpus_bleu(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs) {
  return corpus_stats(hyps, refs).score();
}

std::vector<ReferenceScore> multi_reference_eval(const std::vector<std::vector<Sentence>>& hyp_sets,
                                                 const std::vector<std::vector<Sentence>>& reference_sets) {
  if (hyp_sets.empty()) throw std::invalid_argument("no hypotheses");
  const size_t k = hyp_sets.front().size();
  if (k == 0) throw std::invalid_argument("empty hypothesis list");
  for (const auto& h : hyp_sets)
    if (h.size() != k) throw std::invalid_argument("ragged hypothesis sets");
  std::vector<std::vector<Sentence>> by_rank(k);
  for (size_t r = 0; r < k; ++r)
    for (const auto& h : hyp_sets) by_rank[r].push_back(h[r]);
  std::vector<ReferenceScore> out;
  for (const auto& refs : reference_sets) {
    ReferenceScore s;
    for (const auto& hyps : by_rank) {
      const double b = corpus_bleu(hyps, refs);
      s.avg += b / static_cast<double>(k);
      s.top = std::max(s.top, b);
    }
    out.push_back(s);
  }
  return out;
}

double pairwise_bleu(const std::vector<std::vector<Sentence>>& hyp_sets) {
  if (hyp_sets.empty()) throw std::invalid_argument("no hypotheses");
  const size_t k = hyp_sets.front().size();
  if (k < 2) throw std::invalid_argument("pairwise BLEU needs at least two samples per source");
  for (const auto& h : hyp_sets)
    if (h.size() != k) throw std::invalid_argument("ragged hypothesis sets");
  std::vector<std::vector<Sentence>> by_sample(k);
  for (size_t r = 0; r < k; ++r)
    for (const auto& h : hyp_sets) by_sample[r].push_back(h[r]);
  double total = 0.0;
  for (size_t a = 0; a < k; ++a)
    for (size_t b = 0; b < k; ++b)
      if (a != b) total += corpus_bleu(by_sample[a], by_sample[b]);
  return total / static_cast<double>(k * (k - 1));
}

std::vector<double> cumulative_sequence_probability(const SequenceModel& model,
                                                    const std::vector<Sentence>& sources,
                                                    int beam_size, int max_len) {
  if (beam_size < 1) throw std::invalid_argument("beam_size must be at least 1");
  if (sources.empty()) throw std::invalid_argument("no sources");
  std::vector<double> curve(beam_size, 0.0);
  for (const Sentence& src : sources) {
    const auto hyps = beam_search(model, src, beam_size, max_len, LengthNorm::kNone);
    double acc = 0.0;
    for (int k = 0; k < beam_size; ++k) {
      if (k < static_cast<int>(hyps.size())) acc += std::exp(hyps[k].total_logp);
      curve[k] += acc / static_cast<double>(sources.size());
    }
  }
  return curve;
}

double synonym_mass_probe(const SequenceModel& model, const std::vector<ProbeItem>& items) {
  if (items.empty()) throw std::invalid_argument("empty probe set");
  const int vocab = model.target_vocab_size();
  double total = 0.0;
  for (const ProbeItem& item : items) {
    for (int w : item.synonyms)
      if (w < 0 || w >= vocab) throw std::out_of_range("synonym id " + std::to_string(w) + " outside vocabulary");
    auto session = model.start({item.source});
    std::vector<float> lp = session->step(std::vector<int>{kBos});
    for (int w : item.prefix) lp = session->step(std::vector<int>{w});
    double mass = 0.0;
    for (int w : item.synonyms) mass += std::exp(static_cast<double>(lp[w]));
    total += mass;
  }
  return total / static_cast<double>(items.size());
}

void write_report(std::ostream& out, const EvalReport& report) {
  out.precision(6);
  out << std::fixed;
  if (report.corpus_bleu) out << "bleu = " << *report.corpus_bleu << "\n";
  for (size_t j = 0; j < report.per_reference.size(); ++j) {
    out << "ref" << j << ".avg = " << report.per_reference[j].avg << "\n";
    out << "ref" << j << ".top = " << report.per_reference[j].top << "\n";
  }
  if (report.pairwise_bleu) out << "pairwise_bleu = " << *report.pairwise_bleu << "\n";
  if (!report.cumprob_curve.empty()) {
    out << "cumprob.k1 = " << report.cumprob_curve.front() << "\n";
    out << "cumprob.k" << report.cumprob_curve.size() << " = " << report.cumprob_curve.back() << "\n";
  }
  if (report.synonym_mass) out << "synonym_mass = " << *report.synonym_mass << "\n";
}

void write_curve(std::ostream& out, const std::vector<double>& curve) {
  out.precision(8);
  for (size_t k = 0; k < curve.size(); ++k) out << k + 1 << "\t" << curve[k] << "\n";
}

}  // namespace mixce
