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

#include "mixce/batch.h"

#include <algorithm>
#include <stdexcept>

namespace mixce {

void make_source_matrix(const std::vector<Sentence>& sources, TokenMatrix& tokens, Mask& mask) {
  if (sources.empty()) throw std::invalid_argument("make_source_matrix: no sources");
  size_t width = 0;
  for (const auto& s : sources) width = std::max(width, s.size() + 1);
  const int rows = static_cast<int>(sources.size());
  tokens = TokenMatrix(rows, static_cast<int>(width), kPad);
  mask = Mask(rows, static_cast<int>(width), 0);
  for (int r = 0; r < rows; ++r) {
    const auto& s = sources[r];
    for (size_t j = 0; j < s.size(); ++j) {
      tokens(r, static_cast<int>(j)) = s[j];
      mask(r, static_cast<int>(j)) = 1;
    }
    tokens(r, static_cast<int>(s.size())) = kEos;
    mask(r, static_cast<int>(s.size())) = 1;
  }
}

Batch make_batch(const std::vector<Sentence>& sources, const std::vector<Sentence>& targets) {
  if (sources.size() != targets.size()) throw std::invalid_argument("make_batch: side count mismatch");
  Batch batch;
  make_source_matrix(sources, batch.src_tokens, batch.src_mask);
  size_t width = 0;
  for (const auto& t : targets) width = std::max(width, t.size() + 1);
  const int rows = static_cast<int>(targets.size());
  batch.tgt_out = TokenMatrix(rows, static_cast<int>(width), kPad);
  batch.tgt_mask = Mask(rows, static_cast<int>(width), 0);
  for (int r = 0; r < rows; ++r) {
    const auto& t = targets[r];
    for (size_t j = 0; j < t.size(); ++j) {
      batch.tgt_out(r, static_cast<int>(j)) = t[j];
      batch.tgt_mask(r, static_cast<int>(j)) = 1;
    }
    batch.tgt_out(r, static_cast<int>(t.size())) = kEos;
    batch.tgt_mask(r, static_cast<int>(t.size())) = 1;
  }
  batch.tgt_tokens = outputs_to_inputs(batch.tgt_out);
  batch.pair_index.resize(rows);
  for (int r = 0; r < rows; ++r) batch.pair_index[r] = r;
  return batch;
}

TokenMatrix outputs_to_inputs(const TokenMatrix& outputs) {
  TokenMatrix inputs(outputs.rows, outputs.cols, kPad);
  for (int r = 0; r < outputs.rows; ++r) {
    inputs(r, 0) = kBos;
    for (int t = 1; t < outputs.cols; ++t) {
      const int prev = outputs(r, t - 1);
      // Positions after eos stay padding.
      inputs(r, t) = (prev == kEos || prev == kPad) ? kPad : prev;
    }
  }
  return inputs;
}

}  // namespace mixce
