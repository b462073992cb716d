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

#include "mixce/harness.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "mixce/decoding.h"
#include "mixce/evaluation.h"

namespace mixce {
namespace {

constexpr char kMagic[] = "MIXCE1";
constexpr const char* kConfigRecord = "meta.config";

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument(key + ": expected a boolean, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  return out;
}

long parse_long(const std::string& key, const std::string& v) {
  const double d = parse_double(key, v);
  if (d != std::floor(d)) throw std::invalid_argument(key + ": expected an integer, got '" + v + "'");
  return static_cast<long>(d);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

std::vector<float> config_values(const ModelConfig& c) {
  return {static_cast<float>(c.vocab_size_src), static_cast<float>(c.vocab_size_tgt),
          static_cast<float>(c.d_model),        static_cast<float>(c.n_heads),
          static_cast<float>(c.n_layers_enc),   static_cast<float>(c.n_layers_dec),
          static_cast<float>(c.d_ff),           c.dropout,
          static_cast<float>(c.max_len),        c.share_embeddings ? 1.0f : 0.0f};
}

ModelConfig config_from_values(std::span<const float> v) {
  if (v.size() != 10) throw std::runtime_error("checkpoint config record has " + std::to_string(v.size()) + " values");
  ModelConfig c;
  c.vocab_size_src = static_cast<int>(v[0]);
  c.vocab_size_tgt = static_cast<int>(v[1]);
  c.d_model = static_cast<int>(v[2]);
  c.n_heads = static_cast<int>(v[3]);
  c.n_layers_enc = static_cast<int>(v[4]);
  c.n_layers_dec = static_cast<int>(v[5]);
  c.d_ff = static_cast<int>(v[6]);
  c.dropout = v[7];
  c.max_len = static_cast<int>(v[8]);
  c.share_embeddings = v[9] != 0.0f;
  return c;
}

void put_record(std::string& out, const std::string& name, const Shape& shape, std::span<const float> data) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (float f : data) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(9) << v;
  return s.str();
}

Batch with_distilled(Batch b, const std::vector<Sentence>& distilled) {
  TokenMatrix d(b.tgt_out.rows, b.tgt_out.cols, kPad);
  for (int r = 0; r < d.rows; ++r) {
    const Sentence& s = distilled[b.pair_index[r]];
    if (static_cast<int>(s.size()) + 1 > d.cols)
      throw std::invalid_argument("distilled target " + std::to_string(b.pair_index[r]) + " is longer than its gold");
    for (size_t j = 0; j < s.size(); ++j) d(r, static_cast<int>(j)) = s[j];
    d(r, static_cast<int>(s.size())) = kEos;
  }
  b.distilled_out = std::move(d);
  return b;
}

}  // namespace

// ---- configuration ------------------------------------------------------------

void RunConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw std::invalid_argument("adam_eps must be positive");
  if (max_tokens < 2) throw std::invalid_argument("max_tokens too small");
  if (pretrain_epochs < 0) throw std::invalid_argument("pretrain_epochs must be non-negative");
  if (total_iter < 1) throw std::invalid_argument("total_iter must be positive");
  if (!(step.smoothing.gamma >= 0.0f && step.smoothing.gamma < 1.0f))
    throw std::invalid_argument("smoothing must lie in [0, 1)");
  if (step.gumbel_scale < 0.0) throw std::invalid_argument("gumbel_scale must be non-negative");
  const LossVariant v = step.variant;
  const bool tf_only = v == LossVariant::kMixedTF || v == LossVariant::kSelfDistill;
  if (tf_only && step.scheduled_sampling)
    throw std::invalid_argument(variant_name(v) + " cannot run with scheduled sampling");
  if (step.word_oracle && !(step.scheduled_sampling || requires_second_pass(v)))
    throw std::invalid_argument("word_oracle needs scheduled sampling");
  schedule.validate();
}

RunConfig parse_run_config(const std::map<std::string, std::string>& kv) {
  RunConfig c;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"d_model", [&](auto& k, auto& v) { c.model.d_model = static_cast<int>(parse_long(k, v)); }},
      {"n_heads", [&](auto& k, auto& v) { c.model.n_heads = static_cast<int>(parse_long(k, v)); }},
      {"n_layers_enc", [&](auto& k, auto& v) { c.model.n_layers_enc = static_cast<int>(parse_long(k, v)); }},
      {"n_layers_dec", [&](auto& k, auto& v) { c.model.n_layers_dec = static_cast<int>(parse_long(k, v)); }},
      {"d_ff", [&](auto& k, auto& v) { c.model.d_ff = static_cast<int>(parse_long(k, v)); }},
      {"dropout", [&](auto& k, auto& v) { c.model.dropout = static_cast<float>(parse_double(k, v)); }},
      {"max_len", [&](auto& k, auto& v) { c.model.max_len = static_cast<int>(parse_long(k, v)); }},
      {"share_embeddings", [&](auto& k, auto& v) { c.model.share_embeddings = parse_bool(k, v); }},
      {"src_vocab_max", [&](auto& k, auto& v) { c.src_vocab_max = static_cast<int>(parse_long(k, v)); }},
      {"tgt_vocab_max", [&](auto& k, auto& v) { c.tgt_vocab_max = static_cast<int>(parse_long(k, v)); }},
      {"loss", [&](auto&, auto& v) { c.step.variant = parse_loss_variant(v); }},
      {"smoothing", [&](auto& k, auto& v) { c.step.smoothing.gamma = static_cast<float>(parse_double(k, v)); }},
      {"smooth_oracle", [&](auto& k, auto& v) { c.step.smoothing.smooth_oracle_term = parse_bool(k, v); }},
      {"scheduled_sampling", [&](auto& k, auto& v) { c.step.scheduled_sampling = parse_bool(k, v); }},
      {"word_oracle", [&](auto& k, auto& v) { c.step.word_oracle = parse_bool(k, v); }},
      {"gumbel_scale", [&](auto& k, auto& v) { c.step.gumbel_scale = parse_double(k, v); }},
      {"m", [&](auto& k, auto& v) { c.schedule.m = parse_double(k, v); }},
      {"d", [&](auto& k, auto& v) { c.schedule.d = parse_double(k, v); }},
      {"fixed_alpha", [&](auto& k, auto& v) { c.schedule.fixed_alpha = parse_double(k, v); }},
      {"lr", [&](auto& k, auto& v) { c.lr = parse_double(k, v); }},
      {"beta1", [&](auto& k, auto& v) { c.beta1 = parse_double(k, v); }},
      {"beta2", [&](auto& k, auto& v) { c.beta2 = parse_double(k, v); }},
      {"adam_eps", [&](auto& k, auto& v) { c.adam_eps = parse_double(k, v); }},
      {"patience", [&](auto& k, auto& v) { c.patience = static_cast<int>(parse_long(k, v)); }},
      {"lr_factor", [&](auto& k, auto& v) { c.lr_factor = parse_double(k, v); }},
      {"max_tokens", [&](auto& k, auto& v) { c.max_tokens = static_cast<int>(parse_long(k, v)); }},
      {"pretrain_epochs", [&](auto& k, auto& v) { c.pretrain_epochs = static_cast<int>(parse_long(k, v)); }},
      {"total_iter", [&](auto& k, auto& v) { c.total_iter = parse_long(k, v); }},
      {"seed", [&](auto& k, auto& v) { c.seed = static_cast<std::uint64_t>(parse_long(k, v)); }},
      {"train_src", [&](auto&, auto& v) { c.train_src = v; }},
      {"train_tgt", [&](auto&, auto& v) { c.train_tgt = v; }},
      {"valid_src", [&](auto&, auto& v) { c.valid_src = v; }},
      {"valid_tgt", [&](auto&, auto& v) { c.valid_tgt = v; }},
      {"distill_tgt", [&](auto&, auto& v) { c.distill_tgt = v; }},
      {"output_dir", [&](auto&, auto& v) { c.output_dir = v; }},
  };
  for (const auto& [key, value] : kv) {
    auto it = setters.find(key);
    if (it == setters.end()) throw std::invalid_argument("unknown config key '" + key + "'");
    it->second(key, value);
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  RunConfig c = parse_run_config(read_key_values(path));
  const auto base = std::filesystem::path(path).parent_path();
  for (std::string* p : {&c.train_src, &c.train_tgt, &c.valid_src, &c.valid_tgt, &c.distill_tgt, &c.output_dir})
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).string();
  return c;
}

void write_run_config(std::ostream& out, const RunConfig& c) {
  out << "d_model = " << c.model.d_model << "\n"
      << "n_heads = " << c.model.n_heads << "\n"
      << "n_layers_enc = " << c.model.n_layers_enc << "\n"
      << "n_layers_dec = " << c.model.n_layers_dec << "\n"
      << "d_ff = " << c.model.d_ff << "\n"
      << "dropout = " << fmt(c.model.dropout) << "\n"
      << "max_len = " << c.model.max_len << "\n"
      << "share_embeddings = " << (c.model.share_embeddings ? "true" : "false") << "\n"
      << "src_vocab_max = " << c.src_vocab_max << "\n"
      << "tgt_vocab_max = " << c.tgt_vocab_max << "\n"
      << "loss = " << variant_name(c.step.variant) << "\n"
      << "smoothing = " << fmt(c.step.smoothing.gamma) << "\n"
      << "smooth_oracle = " << (c.step.smoothing.smooth_oracle_term ? "true" : "false") << "\n"
      << "scheduled_sampling = " << (c.step.scheduled_sampling ? "true" : "false") << "\n"
      << "word_oracle = " << (c.step.word_oracle ? "true" : "false") << "\n"
      << "gumbel_scale = " << fmt(c.step.gumbel_scale) << "\n"
      << "m = " << fmt(c.schedule.m) << "\n"
      << "d = " << fmt(c.schedule.d) << "\n";
  if (c.schedule.fixed_alpha) out << "fixed_alpha = " << fmt(*c.schedule.fixed_alpha) << "\n";
  out << "lr = " << fmt(c.lr) << "\n"
      << "beta1 = " << fmt(c.beta1) << "\n"
      << "beta2 = " << fmt(c.beta2) << "\n"
      << "adam_eps = " << fmt(c.adam_eps) << "\n"
      << "patience = " << c.patience << "\n"
      << "lr_factor = " << fmt(c.lr_factor) << "\n"
      << "max_tokens = " << c.max_tokens << "\n"
      << "pretrain_epochs = " << c.pretrain_epochs << "\n"
      << "total_iter = " << c.total_iter << "\n"
      << "seed = " << c.seed << "\n";
  for (const auto& [k, v] : {std::pair{"train_src", &c.train_src}, {"train_tgt", &c.train_tgt},
                             {"valid_src", &c.valid_src}, {"valid_tgt", &c.valid_tgt},
                             {"distill_tgt", &c.distill_tgt}, {"output_dir", &c.output_dir}})
    if (!v->empty()) out << k << " = " << *v << "\n";
}

Rng stream_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

// ---- optimizer ----------------------------------------------------------------

bool adam_step(TransformerParams& params, AdamState& state, double lr) {
  for (auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    for (float g : t.grad())
      if (!std::isfinite(g)) return false;
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (auto& [name, t] : params) {
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) {
      m.assign(t.numel(), 0.0);
      v.assign(t.numel(), 0.0);
    }
    const bool has = t.has_grad();
    auto g = t.grad();
    auto p = t.mutable_data();
    for (size_t i = 0; i < p.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double update = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
      p[i] = static_cast<float>(p[i] - update);
    }
  }
  return true;
}

// ---- checkpoints ----------------------------------------------------------------

std::string serialize_checkpoint(const ModelConfig& config, const TransformerParams& params) {
  if (params.contains(kConfigRecord)) throw std::invalid_argument("parameter name collides with the config record");
  std::map<std::string, std::pair<Shape, std::vector<float>>> records;
  for (const auto& [name, t] : params) records[name] = {t.shape(), {t.data().begin(), t.data().end()}};
  auto cv = config_values(config);
  records[kConfigRecord] = {Shape{static_cast<int>(cv.size())}, cv};
  std::string out(kMagic, 6);
  put_u32(out, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, rec] : records) put_record(out, name, rec.first, rec.second);
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 10 || bytes.compare(0, 6, kMagic) != 0) throw std::runtime_error("not a MIXCE1 checkpoint");
  size_t pos = 6;
  const std::uint32_t count = get_u32(bytes, pos);
  Checkpoint ck;
  bool have_config = false;
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::uint32_t len = get_u32(bytes, pos);
    if (pos + len > bytes.size()) throw std::runtime_error("checkpoint truncated");
    std::string name = bytes.substr(pos, len);
    pos += len;
    const std::uint32_t rank = get_u32(bytes, pos);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(get_u32(bytes, pos));
    std::vector<float> data(shape_numel(shape));
    for (auto& f : data) f = std::bit_cast<float>(get_u32(bytes, pos));
    if (name == kConfigRecord) {
      ck.config = config_from_values(data);
      have_config = true;
    } else {
      ck.params.add(name, Tensor::from(shape, std::move(data), true));
    }
  }
  if (pos != bytes.size()) throw std::runtime_error("trailing bytes after checkpoint records");
  if (!have_config) throw std::runtime_error("checkpoint lacks its model config");
  return ck;
}

void save_checkpoint(const std::string& path, const ModelConfig& config, const TransformerParams& params) {
  const std::string bytes = serialize_checkpoint(config, params);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  try {
    return deserialize_checkpoint(bytes);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

// ---- selection and averaging ------------------------------------------------------

int select_single(const std::vector<double>& scores) {
  if (scores.empty()) throw std::invalid_argument("no checkpoints to select from");
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

AverageMode parse_average_mode(const std::string& name) {
  if (name == "last5") return AverageMode::kLast5;
  if (name == "top5") return AverageMode::kTop5;
  throw std::invalid_argument("unknown averaging mode '" + name + "'");
}

std::vector<int> averaging_indices(const std::vector<double>& scores, AverageMode mode) {
  const int n = static_cast<int>(scores.size());
  if (n == 0) throw std::invalid_argument("no checkpoints to average");
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (mode == AverageMode::kTop5)
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  else
    std::reverse(idx.begin(), idx.end());
  idx.resize(std::min(n, 5));
  std::sort(idx.begin(), idx.end());
  return idx;
}

TransformerParams average_params(const std::vector<const TransformerParams*>& params) {
  if (params.empty()) throw std::invalid_argument("no checkpoints to average");
  const TransformerParams& first = *params.front();
  for (const auto* p : params) {
    if (p->size() != first.size()) throw std::invalid_argument("checkpoints hold different parameter sets");
    for (const auto& [name, t] : first) {
      if (!p->contains(name)) throw std::invalid_argument("checkpoint lacks parameter " + name);
      if (p->at(name).shape() != t.shape())
        throw std::invalid_argument("shape mismatch for " + name + ": " + shape_str(t.shape()) + " vs " +
                                    shape_str(p->at(name).shape()));
    }
  }
  TransformerParams out;
  for (const auto& [name, t] : first) {
    std::vector<double> acc(t.numel(), 0.0);
    for (const auto* p : params) {
      auto d = p->at(name).data();
      for (size_t i = 0; i < acc.size(); ++i) acc[i] += d[i];
    }
    std::vector<float> mean(acc.size());
    for (size_t i = 0; i < acc.size(); ++i) mean[i] = static_cast<float>(acc[i] / static_cast<double>(params.size()));
    out.add(name, Tensor::from(t.shape(), std::move(mean), true));
  }
  return out;
}

AverageChoice choose_average(const std::vector<const TransformerParams*>& checkpoints,
                             const std::vector<double>& scores,
                             const std::function<double(const TransformerParams&)>& score) {
  if (checkpoints.size() != scores.size()) throw std::invalid_argument("one score per checkpoint");
  AverageChoice best;
  bool have = false;
  std::vector<int> seen;
  for (AverageMode mode : {AverageMode::kLast5, AverageMode::kTop5}) {
    auto idx = averaging_indices(scores, mode);
    if (have && idx == seen) continue;
    std::vector<const TransformerParams*> chosen;
    for (int i : idx) chosen.push_back(checkpoints[i]);
    TransformerParams avg = average_params(chosen);
    const double s = score(avg);
    if (!have || s > best.score) {
      best.mode = mode;
      best.indices = idx;
      best.fewer_than_five = checkpoints.size() < 5;
      best.score = s;
      best.params = std::move(avg);
      have = true;
    }
    seen = idx;
  }
  return best;
}

// ---- training -------------------------------------------------------------------

TrainingData make_training_data(const std::vector<TextPair>& train, const std::vector<TextPair>& valid,
                                int src_vocab_max, int tgt_vocab_max) {
  TrainingData data;
  std::vector<Words> src_side, tgt_side;
  for (const auto& p : train) {
    src_side.push_back(p.src);
    tgt_side.push_back(p.tgt);
  }
  data.src_vocab = build_vocab(src_side, src_vocab_max);
  data.tgt_vocab = build_vocab(tgt_side, tgt_vocab_max);
  data.train = encode_corpus(train, data.src_vocab, data.tgt_vocab);
  data.valid = encode_corpus(valid, data.src_vocab, data.tgt_vocab);
  return data;
}

TrainingData load_training_data(const RunConfig& config) {
  const auto train = load_parallel(config.train_src, config.train_tgt);
  TrainingData data = make_training_data(train, load_parallel(config.valid_src, config.valid_tgt),
                                         config.src_vocab_max, config.tgt_vocab_max);
  if (!config.distill_tgt.empty()) {
    const auto lines = read_lines(config.distill_tgt);
    if (lines.size() != train.size())
      throw std::runtime_error(config.distill_tgt + " has " + std::to_string(lines.size()) +
                               " lines, the training corpus " + std::to_string(train.size()));
    std::vector<Sentence> d;
    for (const auto& l : lines) d.push_back(data.tgt_vocab.encode(l));
    data.distilled = std::move(d);
  }
  return data;
}

double validation_bleu(const SequenceModel& model, const std::vector<EncodedPair>& pairs, int limit) {
  const size_t n = limit > 0 ? std::min(pairs.size(), static_cast<size_t>(limit)) : pairs.size();
  if (n == 0) throw std::invalid_argument("empty validation set");
  std::vector<Sentence> hyps, refs;
  constexpr size_t kChunk = 64;
  for (size_t start = 0; start < n; start += kChunk) {
    std::vector<Sentence> src;
    int longest = 0;
    for (size_t i = start; i < std::min(n, start + kChunk); ++i) {
      src.push_back(pairs[i].src);
      refs.push_back(pairs[i].tgt);
      longest = std::max(longest, static_cast<int>(pairs[i].src.size()));
    }
    const int max_len = std::min(model.max_decoder_len(), 2 * longest + 10);
    for (const auto& h : greedy_decode_batch(model, src, max_len)) hyps.push_back(h.words());
  }
  return corpus_bleu(hyps, refs);
}

std::vector<Sentence> distill_corpus(const SequenceModel& model, const std::vector<EncodedPair>& pairs) {
  std::vector<Sentence> out(pairs.size());
  constexpr size_t kChunk = 64;
  for (size_t start = 0; start < pairs.size(); start += kChunk) {
    std::vector<Sentence> src;
    std::vector<int> lens;
    std::vector<size_t> rows;
    for (size_t i = start; i < std::min(pairs.size(), start + kChunk); ++i) {
      if (pairs[i].tgt.empty()) continue;
      src.push_back(pairs[i].src);
      lens.push_back(static_cast<int>(pairs[i].tgt.size()));
      rows.push_back(i);
    }
    if (src.empty()) continue;
    const auto hyps = forced_length_greedy_batch(model, src, lens);
    for (size_t j = 0; j < rows.size(); ++j) out[rows[j]] = hyps[j].words();
  }
  return out;
}

TrainResult train_model(const RunConfig& config, const TrainingData& data, const TrainOptions& options) {
  config.validate();
  if (data.train.empty()) throw std::invalid_argument("empty training corpus");
  if (data.valid.empty()) throw std::invalid_argument("empty validation corpus");
  ModelConfig mc = config.model;
  mc.vocab_size_src = data.src_vocab.size();
  mc.vocab_size_tgt = data.tgt_vocab.size();
  for (const auto* set : {&data.train, &data.valid})
    for (size_t i = 0; i < set->size(); ++i)
      if (pair_width((*set)[i]) > mc.max_len)
        throw std::invalid_argument("pair " + std::to_string(i) + " is longer than max_len " +
                                    std::to_string(mc.max_len));
  const bool distilling = config.step.variant == LossVariant::kSelfDistill;
  if (distilling && (!data.distilled || data.distilled->size() != data.train.size()))
    throw std::invalid_argument("self_distill needs one regenerated target per training pair");

  Rng init = stream_rng(config.seed, Stream::kInit);
  Transformer model(mc, init());
  Rng data_rng = stream_rng(config.seed, Stream::kData);
  Rng dropout = stream_rng(config.seed, Stream::kDropout);
  Rng first_dropout = stream_rng(config.seed, Stream::kFirstPassDropout);
  Rng mixing = stream_rng(config.seed, Stream::kMixing);
  Rng oracle = stream_rng(config.seed, Stream::kOracle);
  Rng gumbel = stream_rng(config.seed, Stream::kGumbel);
  StepRngs rngs{&dropout, &first_dropout, &mixing, &oracle, &gumbel};

  AdamState adam;
  adam.beta1 = config.beta1;
  adam.beta2 = config.beta2;
  adam.eps = config.adam_eps;
  PlateauScheduler plateau(config.lr, config.patience, config.lr_factor);
  double lr = config.lr;
  const StepSpec pretrain_spec{LossVariant::kCE, false, false, 1.0, config.step.smoothing};

  TrainResult result;
  result.config = mc;
  std::ostream* log = options.log;
  if (log) *log << std::setprecision(9);
  long iter = 0, i = 0;
  int epoch = 0;
  while (epoch < config.pretrain_epochs || i < config.total_iter) {
    const bool pre = epoch < config.pretrain_epochs;
    ++epoch;
    for (Batch& batch : make_batches(data.train, config.max_tokens, &data_rng)) {
      if (!pre && i >= config.total_iter) break;
      const Batch& b = distilling ? (batch = with_distilled(std::move(batch), *data.distilled)) : batch;
      ScheduleValues sv = pre ? ScheduleValues{} : schedule_values(config.schedule, ++i, config.total_iter);
      if (config.step.variant == LossVariant::kCE) sv.alpha = 0.0;
      model.params().zero_grad();
      ++iter;
      std::optional<StepResult> r;
      double loss = std::numeric_limits<double>::quiet_NaN();
      try {
        r = training_step(model, b, sv, pre ? pretrain_spec : config.step, rngs);
        loss = r->loss.item();
      } catch (const std::domain_error&) {
        // non-finite activations
      }
      if (!std::isfinite(loss)) {
        result.diverged = true;
        result.error = "non-finite loss at iteration " + std::to_string(iter);
        if (log) *log << "abort\t" << iter << "\t" << result.error << "\n";
        result.final_params = model.params().clone();
        return result;
      }
      backward(r->loss);
      if (!adam_step(model.params(), adam, lr)) {
        ++result.skipped_steps;
        if (log) *log << "skip\t" << iter << "\tnon-finite gradient\n";
      }
      result.trace.push_back({iter, pre ? 0 : i, loss, sv.alpha, sv.epsilon, lr});
      if (log) *log << "iter\t" << iter << "\t" << (pre ? 0 : i) << "\t" << loss << "\t" << sv.alpha << "\t"
                    << sv.epsilon << "\t" << lr << "\n";
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.pretraining = pre;
    rec.bleu = validation_bleu(model, data.valid, options.valid_limit);
    rec.lr = lr;
    if (!options.checkpoint_dir.empty()) {
      rec.path = (std::filesystem::path(options.checkpoint_dir) / ("epoch" + std::to_string(epoch) + ".ckpt")).string();
      save_checkpoint(rec.path, mc, model.params());
    }
    if (options.keep_params) rec.params = model.params().clone();
    if (log) *log << "epoch\t" << epoch << "\t" << rec.bleu << "\n";
    result.epochs.push_back(std::move(rec));
    lr = plateau.observe(result.epochs.back().bleu);
    if (log) log->flush();
  }
  result.final_params = model.params().clone();
  return result;
}

TrainResult train(const RunConfig& config) {
  if (config.output_dir.empty()) throw std::invalid_argument("output_dir is required");
  namespace fs = std::filesystem;
  const fs::path dir(config.output_dir);
  fs::create_directories(dir);
  const TrainingData data = load_training_data(config);
  data.src_vocab.save((dir / "src.vocab").string());
  data.tgt_vocab.save((dir / "tgt.vocab").string());
  {
    std::ofstream cfg(dir / "config.txt");
    write_run_config(cfg, config);
  }
  std::ofstream log(dir / "train.log");
  TrainOptions opts;
  opts.log = &log;
  opts.checkpoint_dir = dir.string();
  TrainResult result = train_model(config, data, opts);

  std::ofstream scores(dir / "scores.tsv");
  std::vector<double> bleu;
  for (const auto& e : result.epochs) {
    scores << e.epoch << "\t" << fmt(e.bleu) << "\t" << e.path << "\n";
    bleu.push_back(e.bleu);
  }
  if (!bleu.empty()) fs::copy_file(result.epochs[select_single(bleu)].path, dir / "single.ckpt",
                                   fs::copy_options::overwrite_existing);
  if (result.diverged) throw std::runtime_error(result.error + "; last good checkpoint kept in " + dir.string());
  return result;
}

}  // namespace mixce
