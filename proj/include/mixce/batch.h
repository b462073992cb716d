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

#include <optional>
#include <vector>

#include "mixce/types.h"

namespace mixce {

// One padded minibatch. Sources carry a trailing eos; the decoder input
// starts with bos and tgt_out is the same sequence shifted left with eos.
struct Batch {
  TokenMatrix src_tokens;
  Mask src_mask;
  TokenMatrix tgt_tokens;
  TokenMatrix tgt_out;
  Mask tgt_mask;
  std::vector<int> pair_index;
  // Regenerated targets aligned with tgt_out (self-distillation only).
  std::optional<TokenMatrix> distilled_out;

  int size() const { return src_tokens.rows; }
};

// Appends eos to every source and right-pads with kPad.
void make_source_matrix(const std::vector<Sentence>& sources, TokenMatrix& tokens,
                        Mask& mask);

Batch make_batch(const std::vector<Sentence>& sources,
                 const std::vector<Sentence>& targets);

// Shifted decoder-input / output views of a target-side token matrix.
TokenMatrix outputs_to_inputs(const TokenMatrix& outputs);

}  // namespace mixce
