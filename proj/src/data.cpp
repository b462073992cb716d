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

#include "mixce/data.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace mixce {
namespace {

const char* const kReserved[] = {"<pad>", "<s>", "</s>", "<unk>"};

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

double to_double(const std::map<std::string, std::string>& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : std::stod(it->second);
}

}  // namespace

Vocab::Vocab() {
  for (const char* t : kReserved) add(t);
}

int Vocab::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[id];
}

Sentence Vocab::encode(const Words& words) const {
  Sentence ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

Words Vocab::decode(const Sentence& ids) const {
  Words words;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    words.push_back(token(id));
  }
  return words;
}

void Vocab::save(const std::string& path) const {
  auto out = open_out(path);
  for (const auto& t : tokens_) out << t << "\n";
}

Vocab Vocab::load(const std::string& path) {
  auto in = open_in(path);
  Vocab v;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    if (n < kNumReserved) {
      if (line != kReserved[n]) throw std::runtime_error(path + ": line " + std::to_string(n + 1) +
                                                         " should be the reserved token " + kReserved[n]);
    } else if (v.add(line) != n) {
      throw std::runtime_error(path + ": duplicate token '" + line + "'");
    }
    ++n;
  }
  return v;
}

Vocab build_vocab(const std::vector<Words>& side, int max_size) {
  if (max_size <= kNumReserved) throw std::invalid_argument("vocabulary size must exceed the reserved entries");
  std::map<std::string, long> counts;
  for (const auto& s : side)
    for (const auto& w : s) ++counts[w];
  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (const auto& [w, c] : ranked) {
    if (v.size() >= max_size) break;
    v.add(w);
  }
  return v;
}

double unk_rate(const Vocab& vocab, const std::vector<Words>& side) {
  long total = 0, unk = 0;
  for (const auto& s : side)
    for (const auto& w : s) {
      ++total;
      unk += !vocab.contains(w);
    }
  return total == 0 ? 0.0 : static_cast<double>(unk) / static_cast<double>(total);
}

Words split_words(const std::string& line) {
  Words w;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) w.push_back(tok);
  return w;
}

std::string join_words(const Words& words) {
  std::string out;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::vector<Words> read_lines(const std::string& path) {
  auto in = open_in(path);
  std::vector<Words> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(split_words(line));
  return lines;
}

void write_lines(const std::string& path, const std::vector<Words>& lines) {
  auto out = open_out(path);
  for (const auto& l : lines) out << join_words(l) << "\n";
}

std::vector<TextPair> load_parallel(const std::string& src_path, const std::string& tgt_path) {
  auto src = read_lines(src_path);
  auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size())
    throw std::runtime_error("line counts differ: " + src_path + " has " + std::to_string(src.size()) + ", " +
                             tgt_path + " has " + std::to_string(tgt.size()));
  std::vector<TextPair> pairs(src.size());
  for (size_t i = 0; i < src.size(); ++i) pairs[i] = {std::move(src[i]), std::move(tgt[i])};
  return pairs;
}

void write_parallel(const std::string& src_path, const std::string& tgt_path, const std::vector<TextPair>& pairs) {
  std::vector<Words> src, tgt;
  for (const auto& p : pairs) {
    src.push_back(p.src);
    tgt.push_back(p.tgt);
  }
  write_lines(src_path, src);
  write_lines(tgt_path, tgt);
}

std::vector<EncodedPair> encode_corpus(const std::vector<TextPair>& pairs, const Vocab& src_vocab,
                                       const Vocab& tgt_vocab) {
  std::vector<EncodedPair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back({src_vocab.encode(p.src), tgt_vocab.encode(p.tgt)});
  return out;
}

int pair_width(const EncodedPair& pair) {
  return static_cast<int>(std::max(pair.src.size(), pair.tgt.size())) + 1;
}

std::vector<Batch> make_batches(const std::vector<EncodedPair>& pairs, int max_tokens, Rng* shuffle) {
  for (size_t i = 0; i < pairs.size(); ++i)
    if (pair_width(pairs[i]) > max_tokens)
      throw std::invalid_argument("pair " + std::to_string(i) + " needs " + std::to_string(pair_width(pairs[i])) +
                                  " tokens, more than max_tokens " + std::to_string(max_tokens));
  std::vector<int> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) std::shuffle(order.begin(), order.end(), *shuffle);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return pair_width(pairs[a]) < pair_width(pairs[b]); });

  std::vector<std::vector<int>> groups;
  std::vector<int> cur;
  int width = 0;
  for (int idx : order) {
    const int w = std::max(width, pair_width(pairs[idx]));
    if (!cur.empty() && w * static_cast<int>(cur.size() + 1) > max_tokens) {
      groups.push_back(std::move(cur));
      cur.clear();
      width = 0;
    }
    cur.push_back(idx);
    width = std::max(width, pair_width(pairs[idx]));
  }
  if (!cur.empty()) groups.push_back(std::move(cur));
  if (shuffle) std::shuffle(groups.begin(), groups.end(), *shuffle);

  std::vector<Batch> batches;
  batches.reserve(groups.size());
  for (const auto& g : groups) {
    std::vector<Sentence> src, tgt;
    for (int idx : g) {
      src.push_back(pairs[idx].src);
      tgt.push_back(pairs[idx].tgt);
    }
    Batch b = make_batch(src, tgt);
    b.pair_index = g;
    batches.push_back(std::move(b));
  }
  return batches;
}

void SynonymTask::validate() const {
  if (src_vocab_size < 1 || synonyms < 1) throw std::invalid_argument("task needs source words and synonyms");
  if (static_cast<int>(weights.size()) != synonyms)
    throw std::invalid_argument("expected " + std::to_string(synonyms) + " synonym weights, got " +
                                std::to_string(weights.size()));
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("negative synonym weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("synonym weights must sum to 1");
  if (min_len < 1 || max_len < min_len) throw std::invalid_argument("bad length range");
  if (!(noise >= 0.0 && noise < 1.0)) throw std::invalid_argument("noise must lie in [0, 1)");
  if (probes < 0) throw std::invalid_argument("negative probe count");
}

std::string SynonymTask::src_word(int i) { return "s" + std::to_string(i); }
std::string SynonymTask::tgt_word(int i) { return "t" + std::to_string(i); }

std::vector<int> SynonymTask::synonym_set(int i) const {
  std::vector<int> out(synonyms);
  for (int k = 0; k < synonyms; ++k) out[k] = i * synonyms + k;
  return out;
}

SynonymTask parse_task_spec(const std::map<std::string, std::string>& kv) {
  static const char* const kKeys[] = {"src_vocab", "synonyms", "weights", "min_len", "max_len",
                                      "noise",     "probes",   "seed"};
  for (const auto& [k, v] : kv)
    if (std::find(std::begin(kKeys), std::end(kKeys), k) == std::end(kKeys))
      throw std::invalid_argument("unknown task key '" + k + "'");
  SynonymTask t;
  t.src_vocab_size = static_cast<int>(to_double(kv, "src_vocab", t.src_vocab_size));
  t.synonyms = static_cast<int>(to_double(kv, "synonyms", t.synonyms));
  if (auto it = kv.find("weights"); it != kv.end()) {
    t.weights.clear();
    for (const auto& w : split_on(it->second, ',')) t.weights.push_back(std::stod(w));
  } else if (t.synonyms != 3) {
    t.weights.assign(t.synonyms, 1.0 / t.synonyms);
  }
  t.min_len = static_cast<int>(to_double(kv, "min_len", t.min_len));
  t.max_len = static_cast<int>(to_double(kv, "max_len", t.max_len));
  t.noise = to_double(kv, "noise", t.noise);
  t.probes = static_cast<int>(to_double(kv, "probes", t.probes));
  if (auto it = kv.find("seed"); it != kv.end()) t.seed = std::stoull(it->second);
  t.validate();
  return t;
}

SyntheticCorpus generate_synonym_corpus(const SynonymTask& task, int n_pairs) {
  task.validate();
  if (n_pairs < 0) throw std::invalid_argument("negative pair count");
  Rng rng(task.seed);
  std::discrete_distribution<int> pick(task.weights.begin(), task.weights.end());
  const int tgt_vocab = task.tgt_vocab_size();

  auto sentence = [&](bool noisy) {
    const int len = task.min_len + uniform_int(rng, task.max_len - task.min_len + 1);
    std::vector<int> src(len), tgt(len);
    for (int j = 0; j < len; ++j) {
      src[j] = uniform_int(rng, task.src_vocab_size);
      tgt[j] = src[j] * task.synonyms + pick(rng);
      if (noisy && task.noise > 0.0 && uniform01(rng) < task.noise) tgt[j] = uniform_int(rng, tgt_vocab);
    }
    return std::make_pair(src, tgt);
  };

  SyntheticCorpus out;
  out.pairs.reserve(n_pairs);
  for (int i = 0; i < n_pairs; ++i) {
    auto [s, t] = sentence(true);
    TextPair p;
    for (int v : s) p.src.push_back(SynonymTask::src_word(v));
    for (int v : t) p.tgt.push_back(SynonymTask::tgt_word(v));
    out.pairs.push_back(std::move(p));
  }
  for (int i = 0; i < task.probes; ++i) {
    auto [s, t] = sentence(false);
    const int pos = uniform_int(rng, static_cast<int>(s.size()));
    ProbeRecord r;
    for (int v : s) r.source.push_back(SynonymTask::src_word(v));
    for (int j = 0; j < pos; ++j) r.prefix.push_back(SynonymTask::tgt_word(t[j]));
    r.gold = SynonymTask::tgt_word(t[pos]);
    for (int v : task.synonym_set(s[pos])) r.synonyms.push_back(SynonymTask::tgt_word(v));
    out.probes.push_back(std::move(r));
  }
  return out;
}

void write_probes(const std::string& path, const std::vector<ProbeRecord>& probes) {
  auto out = open_out(path);
  for (const auto& p : probes) {
    out << join_words(p.source) << " |||";
    if (!p.prefix.empty()) out << " " << join_words(p.prefix);
    out << "\t" << p.gold << "\t";
    for (size_t i = 0; i < p.synonyms.size(); ++i) out << (i ? "," : "") << p.synonyms[i];
    out << "\n";
  }
}

std::vector<ProbeRecord> read_probes(const std::string& path) {
  auto in = open_in(path);
  std::vector<ProbeRecord> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    const auto fields = split_on(line, '\t');
    if (fields.size() != 3) throw std::runtime_error(path + ":" + std::to_string(n) + ": expected 3 tab-separated fields");
    ProbeRecord r;
    const auto context = split_words(fields[0]);
    auto bar = std::find(context.begin(), context.end(), "|||");
    if (bar == context.end()) throw std::runtime_error(path + ":" + std::to_string(n) + ": context lacks '|||'");
    r.source.assign(context.begin(), bar);
    r.prefix.assign(bar + 1, context.end());
    r.gold = trim(fields[1]);
    for (const auto& s : split_on(fields[2], ',')) r.synonyms.push_back(trim(s));
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ProbeItem> encode_probes(const std::vector<ProbeRecord>& probes, const Vocab& src_vocab,
                                     const Vocab& tgt_vocab) {
  std::vector<ProbeItem> out;
  for (const auto& p : probes) {
    ProbeItem item;
    item.source = src_vocab.encode(p.source);
    item.prefix = tgt_vocab.encode(p.prefix);
    item.gold = tgt_vocab.id(p.gold);
    for (const auto& s : p.synonyms) {
      if (!tgt_vocab.contains(s)) throw std::out_of_range("synonym '" + s + "' is not in the target vocabulary");
      item.synonyms.push_back(tgt_vocab.id(s));
    }
    out.push_back(std::move(item));
  }
  return out;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("line " + std::to_string(n) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("line " + std::to_string(n) + ": empty key");
    if (!kv.emplace(key, trim(line.substr(eq + 1))).second)
      throw std::invalid_argument("line " + std::to_string(n) + ": duplicate key '" + key + "'");
  }
  return kv;
}

std::map<std::string, std::string> read_key_values(const std::string& path) {
  auto in = open_in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_key_values(ss.str());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

}  // namespace mixce
