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

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mixce/data.h"
#include "mixce/sampling_engine.h"
#include "mixce/schedules.h"
#include "mixce/transformer.h"

namespace mixce {

struct RunConfig {
  ModelConfig model;  // vocabulary sizes are filled from the data
  int src_vocab_max = 32000;
  int tgt_vocab_max = 32000;

  StepSpec step{LossVariant::kCE, false, false, 1.0, Smoothing{0.1f, true}};
  ScheduleParams schedule;

  double lr = 7e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  int patience = 4;
  double lr_factor = 0.5;

  int max_tokens = 2048;
  int pretrain_epochs = 5;
  long total_iter = 3000;
  std::uint64_t seed = 1;

  std::string train_src, train_tgt, valid_src, valid_tgt;
  std::string distill_tgt;  // regenerated targets for self_distill
  std::string output_dir;

  void validate() const;
};

RunConfig parse_run_config(const std::map<std::string, std::string>& kv);
RunConfig load_run_config(const std::string& path);
void write_run_config(std::ostream& out, const RunConfig& config);

// Generator for one named stream of a run.
enum class Stream { kInit, kData, kDropout, kFirstPassDropout, kMixing, kOracle, kGumbel };
Rng stream_rng(std::uint64_t seed, Stream stream);

// ---- optimizer ------------------------------------------------------------

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  long t = 0;
  std::map<std::string, std::vector<double>> m, v;
};

// One bias-corrected Adam update from the gradients stored on `params`.
// Parameters without a gradient count as zero-gradient. Returns false and
// leaves everything untouched when any gradient is non-finite.
bool adam_step(TransformerParams& params, AdamState& state, double lr);

// ---- checkpoints ------------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  TransformerParams params;
};

std::string serialize_checkpoint(const ModelConfig& config, const TransformerParams& params);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const ModelConfig& config, const TransformerParams& params);
Checkpoint load_checkpoint(const std::string& path);

// ---- selection and averaging -------------------------------------------------

// Best validation score; the earliest index wins ties.
int select_single(const std::vector<double>& scores);

enum class AverageMode { kLast5, kTop5 };
AverageMode parse_average_mode(const std::string& name);

// Indices (ascending) of the checkpoints a mode averages. Fewer than five
// checkpoints means all of them.
std::vector<int> averaging_indices(const std::vector<double>& scores, AverageMode mode);

TransformerParams average_params(const std::vector<const TransformerParams*>& params);

// ---- training ---------------------------------------------------------------

struct TrainingData {
  Vocab src_vocab, tgt_vocab;
  std::vector<EncodedPair> train, valid;
  std::optional<std::vector<Sentence>> distilled;  // aligned with train
};

// Vocabularies come from the training side only.
TrainingData make_training_data(const std::vector<TextPair>& train, const std::vector<TextPair>& valid,
                                int src_vocab_max, int tgt_vocab_max);
TrainingData load_training_data(const RunConfig& config);

struct TraceLine {
  long iter = 0;  // optimizer steps so far, both phases
  long step = 0;  // schedule index i; 0 while pretraining
  double loss = 0.0, alpha = 0.0, epsilon = 1.0, lr = 0.0;
  bool operator==(const TraceLine&) const = default;
};

struct EpochRecord {
  int epoch = 0;
  bool pretraining = false;
  double bleu = 0.0;
  double lr = 0.0;
  std::string path;
  std::optional<TransformerParams> params;
};

struct TrainOptions {
  bool keep_params = false;        // store each epoch's parameters in memory
  std::ostream* log = nullptr;     // per-iteration and per-epoch lines
  std::string checkpoint_dir;      // epoch checkpoints written when set
  int valid_limit = 0;             // validate on a prefix; 0 means all
};

struct TrainResult {
  ModelConfig config;
  TransformerParams final_params;
  std::vector<EpochRecord> epochs;
  std::vector<TraceLine> trace;
  long skipped_steps = 0;
  bool diverged = false;
  std::string error;
};

TrainResult train_model(const RunConfig& config, const TrainingData& data, const TrainOptions& options = {});

// File-driven run: loads data, writes vocabularies, the resolved config,
// train.log, epoch checkpoints, scores.tsv and single.ckpt to output_dir.
TrainResult train(const RunConfig& config);

// Greedy-decoding corpus BLEU of `model` on pairs.
double validation_bleu(const SequenceModel& model, const std::vector<EncodedPair>& pairs, int limit = 0);

// Forced-length greedy regeneration of every target (lengths preserved).
std::vector<Sentence> distill_corpus(const SequenceModel& model, const std::vector<EncodedPair>& pairs);

struct AverageChoice {
  AverageMode mode = AverageMode::kLast5;
  std::vector<int> indices;
  bool fewer_than_five = false;
  double score = 0.0;
  TransformerParams params;
};

// Builds both averages and keeps the one `score` rates higher (LAST5 on ties).
AverageChoice choose_average(const std::vector<const TransformerParams*>& checkpoints,
                             const std::vector<double>& scores,
                             const std::function<double(const TransformerParams&)>& score);

}  // namespace mixce
