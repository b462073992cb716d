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

#include "mixce/decoding.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mixce {
namespace {

int clamp_len(const SequenceModel& model, int max_len) {
  if (max_len < 1) throw std::invalid_argument("max_len must be at least 1");
  return std::min(max_len, model.max_decoder_len());
}

int argmax_row(const float* row, int vocab, int skip = -1) {
  int best = -1;
  for (int k = 0; k < vocab; ++k) {
    if (k == skip) continue;
    if (best < 0 || row[k] > row[best]) best = k;
  }
  return best;
}

// Runs one session over `rows` rows, choosing the next token per row with
// `pick(row, t, logp_row)`; a row stops once it emits eos.
template <typename Pick>
std::vector<Hypothesis> decode_rows(const SequenceModel& model, const std::vector<Sentence>& sources,
                                    int steps, Pick pick) {
  const int n = static_cast<int>(sources.size());
  const int vocab = model.target_vocab_size();
  std::vector<Hypothesis> out(n);
  if (n == 0) return out;
  auto session = model.start(sources);
  std::vector<int> live(n);
  std::iota(live.begin(), live.end(), 0);
  std::vector<int> input(n, kBos);
  for (int t = 0; t < steps && !live.empty(); ++t) {
    const std::vector<float> lp = session->step(input);
    std::vector<int> keep, next;
    for (size_t j = 0; j < live.size(); ++j) {
      const int r = live[j];
      const float* row = lp.data() + j * vocab;
      const int tok = pick(r, t, row);
      out[r].tokens.push_back(tok);
      out[r].positional_logp.push_back(row[tok]);
      if (tok != kEos) {
        keep.push_back(static_cast<int>(j));
        next.push_back(tok);
      }
    }
    if (keep.size() != live.size()) {
      std::vector<int> still;
      for (int j : keep) still.push_back(live[j]);
      live = std::move(still);
      if (!live.empty()) session->reorder(keep);
    }
    input = std::move(next);
  }
  for (int r : live) out[r].truncated = true;
  for (auto& h : out) h.finalize();
  return out;
}

}  // namespace

void Hypothesis::finalize() {
  double s = 0.0;
  for (float v : positional_logp) s += v;
  total_logp = s;
  avg_logp = positional_logp.empty() ? 0.0 : s / static_cast<double>(positional_logp.size());
}

Sentence Hypothesis::words() const {
  Sentence w = tokens;
  if (!w.empty() && w.back() == kEos) w.pop_back();
  return w;
}

LengthNorm parse_length_norm(std::string_view name) {
  if (name == "none") return LengthNorm::kNone;
  if (name == "avg") return LengthNorm::kAvg;
  throw std::invalid_argument("unknown length normalization '" + std::string(name) + "'");
}

double normalized_score(const Hypothesis& h, LengthNorm norm) {
  return norm == LengthNorm::kAvg ? h.avg_logp : h.total_logp;
}

int default_max_len(const SequenceModel& model, const Sentence& src) {
  return std::min(model.max_decoder_len(), 2 * static_cast<int>(src.size()) + 10);
}

Hypothesis greedy_decode(const SequenceModel& model, const Sentence& src, int max_len) {
  return greedy_decode_batch(model, {src}, max_len).front();
}

std::vector<Hypothesis> greedy_decode_batch(const SequenceModel& model,
                                            const std::vector<Sentence>& sources, int max_len) {
  const int vocab = model.target_vocab_size();
  return decode_rows(model, sources, clamp_len(model, max_len),
                     [vocab](int, int, const float* row) { return argmax_row(row, vocab); });
}

Hypothesis forced_length_greedy(const SequenceModel& model, const Sentence& src, int target_len) {
  return forced_length_greedy_batch(model, {src}, {target_len}).front();
}

std::vector<Hypothesis> forced_length_greedy_batch(const SequenceModel& model,
                                                   const std::vector<Sentence>& sources,
                                                   const std::vector<int>& target_lens) {
  if (target_lens.size() != sources.size()) throw std::invalid_argument("one target length per source");
  int longest = 0;
  for (int len : target_lens) {
    if (len < 1) throw std::invalid_argument("target_len must be at least 1");
    longest = std::max(longest, len);
  }
  if (longest + 1 > model.max_decoder_len())
    throw std::invalid_argument("forced length " + std::to_string(longest) + " exceeds the model limit");
  const int vocab = model.target_vocab_size();
  return decode_rows(model, sources, longest + 1, [&](int r, int t, const float* row) {
    return t == target_lens[r] ? kEos : argmax_row(row, vocab, kEos);
  });
}

std::vector<Hypothesis> beam_search(const SequenceModel& model, const Sentence& src, int beam_size,
                                    int max_len, LengthNorm norm) {
  if (beam_size < 1) throw std::invalid_argument("beam_size must be at least 1");
  const int steps = clamp_len(model, max_len);
  const int vocab = model.target_vocab_size();
  auto session = model.start({src});
  std::vector<Hypothesis> alive(1), finished;
  std::vector<int> input = {kBos};

  struct Candidate {
    double score;
    int parent;
    int token;
  };
  for (int t = 0; t < steps; ++t) {
    const std::vector<float> lp = session->step(input);
    std::vector<Candidate> cands;
    cands.reserve(alive.size() * vocab);
    for (size_t p = 0; p < alive.size(); ++p)
      for (int k = 0; k < vocab; ++k)
        cands.push_back({alive[p].total_logp + lp[p * vocab + k], static_cast<int>(p), k});
    std::stable_sort(cands.begin(), cands.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });

    std::vector<Hypothesis> next;
    std::vector<int> parents;
    input.clear();
    for (const Candidate& c : cands) {
      if (static_cast<int>(next.size()) == beam_size) break;
      if (!std::isfinite(c.score)) break;
      Hypothesis h = alive[c.parent];
      h.tokens.push_back(c.token);
      h.positional_logp.push_back(lp[static_cast<size_t>(c.parent) * vocab + c.token]);
      h.finalize();
      if (c.token == kEos) {
        finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
        parents.push_back(c.parent);
        input.push_back(c.token);
      }
    }
    alive = std::move(next);
    if (static_cast<int>(finished.size()) >= beam_size || alive.empty()) break;
    session->reorder(parents);
  }
  if (static_cast<int>(finished.size()) < beam_size) {
    for (auto& h : alive) {
      h.truncated = true;
      finished.push_back(std::move(h));
    }
  }
  std::stable_sort(finished.begin(), finished.end(), [norm](const Hypothesis& a, const Hypothesis& b) {
    return normalized_score(a, norm) > normalized_score(b, norm);
  });
  if (static_cast<int>(finished.size()) > beam_size) finished.resize(beam_size);
  return finished;
}

std::vector<Hypothesis> sample_k(const SequenceModel& model, const Sentence& src, int k, Rng& rng,
                                 int max_len) {
  if (k < 1) throw std::invalid_argument("need at least one sample");
  const int vocab = model.target_vocab_size();
  return decode_rows(model, std::vector<Sentence>(k, src), clamp_len(model, max_len),
                     [&](int, int, const float* row) {
                       double u = uniform01(rng), acc = 0.0;
                       int last = 0;
                       for (int w = 0; w < vocab; ++w) {
                         const double p = std::exp(static_cast<double>(row[w]));
                         if (p <= 0.0) continue;
                         last = w;
                         acc += p;
                         if (u < acc) return w;
                       }
                       return last;
                     });
}

Hypothesis sample_decode_best(const SequenceModel& model, const Sentence& src, int n_samples, Rng& rng,
                              int max_len) {
  std::vector<Hypothesis> all = sample_k(model, src, n_samples, rng, max_len);
  size_t best = 0;
  for (size_t i = 1; i < all.size(); ++i)
    if (all[i].avg_logp > all[best].avg_logp) best = i;
  return all[best];
}

}  // namespace mixce
