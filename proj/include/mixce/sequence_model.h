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

#include <memory>
#include <span>
#include <vector>

#include "mixce/types.h"

namespace mixce {

// Incremental decoding state for a set of rows. Each call to step() feeds one
// input token per row (bos first) and returns rows x vocab log-probabilities
// for the next position.
class DecodeSession {
 public:
  virtual ~DecodeSession() = default;
  virtual int rows() const = 0;
  virtual std::vector<float> step(std::span<const int> tokens) = 0;
  // Keeps row parents[i] as new row i; rows may be duplicated or dropped.
  virtual void reorder(std::span<const int> parents) = 0;
};

// Anything decoding can run against: the Transformer, or a hand-built table
// model in tests.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  virtual int target_vocab_size() const = 0;
  // Maximum number of decoder steps (including the bos step).
  virtual int max_decoder_len() const = 0;
  virtual std::unique_ptr<DecodeSession> start(const std::vector<Sentence>& sources) const = 0;
  // log p(tokens[t] | src, bos, tokens[<t]) for every t. The default walks a
  // session step by step.
  virtual std::vector<float> token_logp(const Sentence& source, const Sentence& tokens) const;
};

}  // namespace mixce
