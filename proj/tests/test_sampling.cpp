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

#include <cmath>
#include <algorithm>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "mixce/sampling_engine.h"

using namespace mixce;

namespace {

ModelConfig small_config(float dropout = 0.0f) {
  ModelConfig c;
  c.vocab_size_src = 10;
  c.vocab_size_tgt = 10;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers_enc = 1;
  c.n_layers_dec = 1;
  c.d_ff = 32;
  c.dropout = dropout;
  c.max_len = 16;
  return c;
}

Batch sample_batch() {
  return make_batch({{4, 5, 6}, {7, 8}, {9}}, {{5, 6, 7, 8}, {4, 9}, {6, 6, 6}});
}

void sgd_step(Transformer& model, const Tensor& loss, float lr) {
  model.params().zero_grad();
  backward(loss);
  for (auto& [name, t] : model.params()) {
    auto d = t.mutable_data();
    auto g = t.grad();
    for (size_t i = 0; i < d.size(); ++i) d[i] -= lr * g[i];
  }
}

}  // namespace

TEST_CASE("first pass is gradient-free and repeatable") {
  Transformer model(small_config(), 3);
  Batch b = sample_batch();
  FirstPassOutput a = first_pass(model, b, nullptr, true);
  FirstPassOutput c = first_pass(model, b, nullptr, true);
  CHECK(a.logp.pass == PassKind::kFirstPassGoldInput);
  CHECK(a.logp.logp.node() == nullptr);
  CHECK_FALSE(a.logp.logp.requires_grad());
  CHECK(std::ranges::equal(a.logp.logp.data(), c.logp.logp.data()));
  CHECK(a.argmax_tokens == c.argmax_tokens);
  for (const auto& [name, t] : model.params()) CHECK_FALSE(t.has_grad());

  // Brute scan.
  const int v = 10;
  auto d = a.logp.logp.data();
  for (size_t i = 0; i < a.argmax_tokens.size(); ++i) {
    int best = 0;
    for (int k = 0; k < v; ++k)
      if (d[i * v + k] > d[i * v + best]) best = k;
    CHECK(a.argmax_tokens.data[i] == best);
    double total = 0;
    for (int k = 0; k < v; ++k) total += a.full_probs[i * v + k];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("first pass reproduces gold after memorization") {
  Transformer model(small_config(), 5);
  Batch b = sample_batch();
  for (int it = 0; it < 400; ++it) {
    Tensor lp = model.forward_logp(b.src_tokens, b.src_mask, b.tgt_tokens);
    sgd_step(model, ce_loss({lp, PassKind::kSinglePass}, b.tgt_out, b.tgt_mask), 0.3f);
  }
  FirstPassOutput f = first_pass(model, b, nullptr);
  for (size_t i = 0; i < b.tgt_out.size(); ++i)
    if (b.tgt_mask.data[i]) CHECK(f.argmax_tokens.data[i] == b.tgt_out.data[i]);
}

TEST_CASE("gumbel noise") {
  CHECK(std::abs(gumbel_from_uniform(1.0 / std::numbers::e)) < 1e-12);
  CHECK(gumbel_from_uniform(std::exp(-std::numbers::e)) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK_THROWS(gumbel_from_uniform(0.0));
  CHECK_THROWS(gumbel_from_uniform(1.0));

  const std::vector<float> row = {-0.5f, -1.5f, -2.0f};
  const std::vector<double> u(3, 1.0 / std::numbers::e);
  const auto s = gumbel_perturb(row, u);
  for (int k = 0; k < 3; ++k) CHECK(std::abs(s[k] - row[k]) < 1e-6f);

  Rng rng(17);
  double total = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) total += sample_gumbel(rng);
  CHECK(std::abs(total / n - 0.5772156649) < 0.02);

  Rng a(3), b(3);
  CHECK(gumbel_perturb(row, a) == gumbel_perturb(row, b));
  Rng z(3);
  CHECK(gumbel_perturb(row, z, 0.0) == row);
}

TEST_CASE("oracle selection policies") {
  Transformer model(small_config(), 8);
  Batch b = sample_batch();
  FirstPassOutput f = first_pass(model, b, nullptr);
  Rng rng(2);
  CHECK(select_oracle_tokens(f, b.tgt_out, OracleKind::kArgmax, rng) == f.argmax_tokens);
  CHECK(select_oracle_tokens(f, f.argmax_tokens, OracleKind::kRandomOnMismatch, rng) == f.argmax_tokens);
  CHECK_THROWS_AS(select_oracle_tokens(f, TokenMatrix(1, 1), OracleKind::kArgmax, rng), std::invalid_argument);
  CHECK(parse_oracle_kind("top2_random") == OracleKind::kTop2Random);
  CHECK_THROWS_AS(parse_oracle_kind("top3"), std::invalid_argument);

  // Top-2: brute-force the second-best index and count picks.
  const int v = 10;
  auto d = f.logp.logp.data();
  std::vector<int> second(f.argmax_tokens.size());
  for (size_t i = 0; i < second.size(); ++i) {
    std::vector<int> idx(v);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) { return d[i * v + x] > d[i * v + y]; });
    REQUIRE(idx[0] == f.argmax_tokens.data[i]);
    second[i] = idx[1];
  }
  long top1 = 0, top2 = 0;
  for (std::uint64_t seed = 0; seed < 4000; ++seed) {
    Rng r(seed);
    TokenMatrix o = select_oracle_tokens(f, b.tgt_out, OracleKind::kTop2Random, r);
    for (size_t i = 0; i < o.size(); ++i) {
      if (o.data[i] == f.argmax_tokens.data[i]) ++top1;
      else if (o.data[i] == second[i]) ++top2;
      else FAIL("token outside the top two");
    }
  }
  CHECK(std::abs(static_cast<double>(top1) / top2 - 1.0) < 0.05);

  // Random-on-mismatch keeps gold on agreement and is uniform otherwise.
  TokenMatrix gold = f.argmax_tokens;
  gold.data[0] = (gold.data[0] + 1) % v;
  std::vector<long> hist(v, 0);
  for (std::uint64_t seed = 0; seed < 20000; ++seed) {
    Rng r(seed);
    TokenMatrix o = select_oracle_tokens(f, gold, OracleKind::kRandomOnMismatch, r);
    for (size_t i = 1; i < o.size(); ++i) CHECK(o.data[i] == gold.data[i]);
    ++hist[o.data[0]];
  }
  for (long h : hist) CHECK(std::abs(h / 20000.0 - 0.1) < 0.01);
}

TEST_CASE("mixing") {
  TokenMatrix gold(2, 5), pred(2, 5, 9);
  gold.data = {kBos, 4, 5, 6, 7, kBos, 4, 5, kPad, kPad};
  Mask mask(2, 5, 1);
  mask(1, 3) = mask(1, 4) = 0;
  Rng rng(1);
  CHECK(mix_sequences(gold, pred, mask, 1.0, rng) == gold);
  TokenMatrix all = mix_sequences(gold, pred, mask, 0.0, rng);
  TokenMatrix expect(2, 5);
  expect.data = {kBos, 9, 9, 9, 9, kBos, 9, 9, kPad, kPad};
  CHECK(all == expect);
  CHECK_THROWS_AS(mix_sequences(gold, pred, mask, 1.5, rng), std::invalid_argument);

  TokenMatrix big_gold(1000, 101, 4), big_pred(1000, 101, 5);
  Mask big_mask(1000, 101, 1);
  TokenMatrix mixed = mix_sequences(big_gold, big_pred, big_mask, 0.8, rng);
  long kept = 0;
  for (int r = 0; r < 1000; ++r) {
    CHECK(mixed(r, 0) == 4);
    for (int t = 1; t < 101; ++t) kept += mixed(r, t) == 4;
  }
  CHECK(std::abs(kept / 100000.0 - 0.8) < 0.01);

  TokenMatrix shifted_src(1, 4);
  shifted_src.data = {4, 5, kEos, 6};
  TokenMatrix shifted = predictions_to_inputs(shifted_src);
  CHECK(shifted.data == std::vector<int>{kBos, 4, 5, kEos});
}

TEST_CASE("training step cross-path equivalences") {
  Transformer model(small_config(), 12);
  Batch b = sample_batch();
  Rng mix(1), orc(2), gum(3);
  StepRngs rngs{nullptr, nullptr, &mix, &orc, &gum};
  const ScheduleValues sched{0.3, 1.0};

  StepSpec tf{LossVariant::kMixedTF};
  const float tf_loss = training_step(model, b, sched, tf, rngs).loss.item();
  StepSpec ss{LossVariant::kMixedSS};
  StepResult ss_res = training_step(model, b, sched, ss, rngs);
  CHECK(ss_res.decoder_input == b.tgt_tokens);
  CHECK(ss_res.replaced == 0);
  CHECK(ss_res.loss.item() == doctest::Approx(tf_loss).epsilon(1e-6));

  StepSpec ce_tf{LossVariant::kCE};
  StepSpec ce_ss{LossVariant::kCE, true};
  CHECK(training_step(model, b, sched, ce_ss, rngs).loss.item() ==
        doctest::Approx(training_step(model, b, sched, ce_tf, rngs).loss.item()).epsilon(1e-6));

  // Word oracle with zero noise replays the standard step exactly.
  const ScheduleValues mixing{0.3, 0.5};
  Rng m1(9), m2(9), g1(4);
  StepRngs plain{nullptr, nullptr, &m1, &orc, nullptr};
  StepRngs word{nullptr, nullptr, &m2, &orc, &g1};
  StepSpec wo{LossVariant::kMixedSS, true, true, 0.0};
  StepResult p = training_step(model, b, mixing, ss, plain);
  StepResult w = training_step(model, b, mixing, wo, word);
  CHECK(p.decoder_input == w.decoder_input);
  CHECK(p.loss.item() == w.loss.item());
}

TEST_CASE("word oracle keeps argmax loss targets") {
  Transformer model(small_config(), 14);
  Batch b = sample_batch();
  FirstPassOutput f = first_pass(model, b, nullptr);
  bool differs = false;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng m(seed), g(seed + 100);
    StepRngs rngs{nullptr, nullptr, &m, nullptr, &g};
    StepResult r = training_step(model, b, {0.4, 0.0}, {LossVariant::kMixedSS, true, true, 5.0}, rngs);
    CHECK(r.loss_oracle == f.argmax_tokens);
    if (r.decoder_input != predictions_to_inputs(f.argmax_tokens)) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("training step gradients and variant dispatch") {
  Transformer model(small_config(0.1f), 6);
  Batch b = sample_batch();
  for (const char* name : {"ce", "mixed_tf", "mixed_ss", "soft_mixed_ss", "double_mixed_ss", "mixed_ss_2nd",
                           "top2_mixed_ss", "random_mixed_ss"}) {
    CAPTURE(name);
    Rng d(1), fd(2), m(3), o(4);
    StepRngs rngs{&d, &fd, &m, &o, nullptr};
    StepSpec spec{parse_loss_variant(name)};
    spec.smoothing.gamma = 0.1f;
    model.params().zero_grad();
    StepResult r = training_step(model, b, {0.25, 0.7}, spec, rngs);
    CHECK(std::isfinite(r.loss.item()));
    backward(r.loss);
    CHECK(model.params().at("out.b").has_grad());
  }
  StepSpec distill{LossVariant::kSelfDistill};
  StepRngs none{};
  CHECK_THROWS_AS(training_step(model, b, {0.25, 1.0}, distill, none), std::invalid_argument);
  b.distilled_out = b.tgt_out;
  CHECK(training_step(model, b, {0.25, 1.0}, distill, none).loss.item() ==
        doctest::Approx(training_step(model, b, {0.25, 1.0}, {LossVariant::kCE}, none).loss.item()).epsilon(1e-6));
  StepSpec bad{LossVariant::kMixedTF, true};
  CHECK_THROWS_AS(training_step(model, b, {0.25, 1.0}, bad, none), std::invalid_argument);
}
