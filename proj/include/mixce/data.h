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

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mixce/batch.h"
#include "mixce/evaluation.h"
#include "mixce/types.h"

namespace mixce {

using Words = std::vector<std::string>;

class Vocab {
 public:
  // Starts with the four reserved entries.
  Vocab();

  int add(const std::string& token);
  // Unknown tokens map to kUnk.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }

  Sentence encode(const Words& words) const;
  // Stops at eos; skips pad and bos.
  Words decode(const Sentence& ids) const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Keeps the max_size - 4 most frequent tokens; equal counts go in
// lexicographic order.
Vocab build_vocab(const std::vector<Words>& side, int max_size);
// Fraction of tokens on a side that the vocabulary maps to unk.
double unk_rate(const Vocab& vocab, const std::vector<Words>& side);

struct TextPair {
  Words src;
  Words tgt;
  bool operator==(const TextPair&) const = default;
};

Words split_words(const std::string& line);
std::string join_words(const Words& words);

std::vector<Words> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<Words>& lines);

std::vector<TextPair> load_parallel(const std::string& src_path, const std::string& tgt_path);
void write_parallel(const std::string& src_path, const std::string& tgt_path,
                    const std::vector<TextPair>& pairs);

struct EncodedPair {
  Sentence src;
  Sentence tgt;
};

std::vector<EncodedPair> encode_corpus(const std::vector<TextPair>& pairs, const Vocab& src_vocab,
                                       const Vocab& tgt_vocab);

// Padded cost of one pair: max(|src|, |tgt|) + 1.
int pair_width(const EncodedPair& pair);

// Length-sorted batches with rows * width <= max_tokens. With a generator,
// equal-length pairs and the batch order are shuffled.
std::vector<Batch> make_batches(const std::vector<EncodedPair>& pairs, int max_tokens, Rng* shuffle = nullptr);

// ---- synthetic one-to-many task --------------------------------------------

struct SynonymTask {
  int src_vocab_size = 16;
  int synonyms = 3;
  std::vector<double> weights = {0.36, 0.33, 0.31};
  int min_len = 3;
  int max_len = 8;
  // Probability that a target token is replaced by a uniformly drawn target word.
  double noise = 0.0;
  int probes = 200;
  std::uint64_t seed = 1;

  void validate() const;
  int tgt_vocab_size() const { return src_vocab_size * synonyms; }
  static std::string src_word(int i);
  static std::string tgt_word(int i);
  // Target word indices for source index i.
  std::vector<int> synonym_set(int i) const;
};

SynonymTask parse_task_spec(const std::map<std::string, std::string>& kv);

struct ProbeRecord {
  Words source;
  Words prefix;
  std::string gold;
  Words synonyms;
  bool operator==(const ProbeRecord&) const = default;
};

struct SyntheticCorpus {
  std::vector<TextPair> pairs;
  std::vector<ProbeRecord> probes;
};

// Probes are drawn from sentences that are not part of `pairs`.
SyntheticCorpus generate_synonym_corpus(const SynonymTask& task, int n_pairs);

void write_probes(const std::string& path, const std::vector<ProbeRecord>& probes);
std::vector<ProbeRecord> read_probes(const std::string& path);
std::vector<ProbeItem> encode_probes(const std::vector<ProbeRecord>& probes, const Vocab& src_vocab,
                                     const Vocab& tgt_vocab);

// Flat "key = value" text; '#' starts a comment.
std::map<std::string, std::string> read_key_values(const std::string& path);
std::map<std::string, std::string> parse_key_values(const std::string& text);

}  // namespace mixce
