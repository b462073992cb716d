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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "mixce/decoding.h"
#include "mixce/evaluation.h"
#include "mixce/harness.h"

namespace fs = std::filesystem;
using namespace mixce;

namespace {

struct Loaded {
  Vocab src, tgt;
  std::unique_ptr<Transformer> model;
};

Loaded load_model(const std::string& ckpt, std::string src_vocab, std::string tgt_vocab) {
  const fs::path dir = fs::path(ckpt).parent_path();
  if (src_vocab.empty()) src_vocab = (dir / "src.vocab").string();
  if (tgt_vocab.empty()) tgt_vocab = (dir / "tgt.vocab").string();
  Loaded l{Vocab::load(src_vocab), Vocab::load(tgt_vocab), nullptr};
  Checkpoint c = load_checkpoint(ckpt);
  if (c.config.vocab_size_src != l.src.size() || c.config.vocab_size_tgt != l.tgt.size())
    throw std::runtime_error("vocabulary sizes " + std::to_string(l.src.size()) + "/" + std::to_string(l.tgt.size()) +
                             " do not match the checkpoint's " + std::to_string(c.config.vocab_size_src) + "/" +
                             std::to_string(c.config.vocab_size_tgt));
  l.model = std::make_unique<Transformer>(c.config, std::move(c.params));
  return l;
}

std::vector<Sentence> encode_lines(const std::vector<Words>& lines, const Vocab& v) {
  std::vector<Sentence> out;
  for (const auto& w : lines) out.push_back(v.encode(w));
  return out;
}

// Maps words to ids without a fixed vocabulary; used for scoring text files.
class Interner {
 public:
  Sentence operator()(const Words& words) {
    Sentence s;
    for (const auto& w : words) s.push_back(ids_.try_emplace(w, static_cast<int>(ids_.size()) + kNumReserved).first->second);
    return s;
  }

 private:
  std::map<std::string, int> ids_;
};

void print_hyp(std::ostream& out, const Hypothesis& h, const Vocab& tgt, bool scores) {
  out << join_words(tgt.decode(h.words()));
  if (scores) {
    out << "\t" << h.avg_logp << "\t";
    for (size_t i = 0; i < h.positional_logp.size(); ++i) out << (i ? " " : "") << h.positional_logp[i];
  }
  out << "\n";
}

std::ostream& open_out(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw std::runtime_error("cannot write " + path);
  return file;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixed cross-entropy training and analysis for sequence-to-sequence models"};
  app.require_subcommand(1);
  std::string src_vocab, tgt_vocab, output;

  auto add_vocab_opts = [&](CLI::App* cmd) {
    cmd->add_option("--src-vocab", src_vocab, "source vocabulary (default: next to the checkpoint)");
    cmd->add_option("--tgt-vocab", tgt_vocab, "target vocabulary (default: next to the checkpoint)");
  };

  // train
  std::string config_path;
  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("config", config_path)->required()->check(CLI::ExistingFile);

  // translate
  std::string ckpt, src_path;
  int beam = 0, sample = 0, max_len = 0;
  bool with_scores = false;
  std::string norm = "avg";
  std::uint64_t seed = 1;
  auto* tr = app.add_subcommand("translate", "decode a source file");
  tr->add_option("ckpt", ckpt)->required()->check(CLI::ExistingFile);
  tr->add_option("src", src_path)->required()->check(CLI::ExistingFile);
  auto* beam_opt = tr->add_option("--beam", beam, "beam size (greedy when absent)")->check(CLI::PositiveNumber);
  tr->add_option("--sample", sample, "draw N samples per source")->check(CLI::PositiveNumber)->excludes(beam_opt);
  tr->add_flag("--scores", with_scores, "append average and positional log-probabilities");
  tr->add_option("--norm", norm, "beam ranking: none or avg")->check(CLI::IsMember({"none", "avg"}));
  tr->add_option("--max-len", max_len, "decoding length limit");
  tr->add_option("--seed", seed);
  tr->add_option("-o,--output", output);
  add_vocab_opts(tr);

  // evaluate
  std::string hyp_path;
  std::vector<std::string> ref_paths;
  bool multi_ref = false, pairwise = false;
  auto* ev = app.add_subcommand("evaluate", "BLEU of a hypothesis file");
  ev->add_option("hyp", hyp_path)->required()->check(CLI::ExistingFile);
  ev->add_option("ref", ref_paths)->required()->check(CLI::ExistingFile);
  ev->add_flag("--multi-ref", multi_ref, "hyp holds k consecutive lines per source; report AVG/TOP per reference");
  ev->add_flag("--pairwise", pairwise, "also report pairwise BLEU among the k hypotheses");

  // analyze
  auto* an = app.add_subcommand("analyze", "model analyses");
  an->require_subcommand(1);
  int probe_beam = 200, limit = 0;
  auto* cum = an->add_subcommand("cumprob", "cumulative probability of the top-k beam hypotheses");
  cum->add_option("ckpt", ckpt)->required()->check(CLI::ExistingFile);
  cum->add_option("src", src_path)->required()->check(CLI::ExistingFile);
  cum->add_option("--beam", probe_beam)->check(CLI::PositiveNumber);
  cum->add_option("--limit", limit, "use the first N sources");
  cum->add_option("--max-len", max_len);
  add_vocab_opts(cum);
  std::string probe_path;
  auto* syn = an->add_subcommand("synonyms", "mean probability mass on the synonym set of probed positions");
  syn->add_option("ckpt", ckpt)->required()->check(CLI::ExistingFile);
  syn->add_option("probe", probe_path)->required()->check(CLI::ExistingFile);
  add_vocab_opts(syn);

  // distill
  std::string corpus;
  auto* di = app.add_subcommand("distill", "regenerate targets with forced-length greedy decoding");
  di->add_option("ckpt", ckpt)->required()->check(CLI::ExistingFile);
  di->add_option("corpus", corpus, "prefix of <corpus>.src and <corpus>.tgt")->required();
  di->add_option("-o,--output", output);
  add_vocab_opts(di);

  // average
  std::vector<std::string> ckpts;
  std::string mode = "last5", scores_path, valid_prefix;
  auto* av = app.add_subcommand("average", "average checkpoints given in epoch order");
  av->add_option("ckpts", ckpts)->required()->check(CLI::ExistingFile);
  av->add_option("--mode", mode, "last5, top5, or best (better of the two on --valid)")
      ->check(CLI::IsMember({"last5", "top5", "best"}));
  av->add_option("--scores", scores_path, "validation BLEU per checkpoint, one per line or scores.tsv rows")
      ->check(CLI::ExistingFile);
  av->add_option("--valid", valid_prefix, "prefix of <valid>.src and <valid>.tgt for --mode best");
  av->add_option("-o,--output", output)->required();
  add_vocab_opts(av);

  // gen-task
  std::string task_path;
  int n_pairs = 0;
  auto* gt = app.add_subcommand("gen-task", "generate the synthetic synonym corpus");
  gt->add_option("task", task_path, "key = value task spec")->required()->check(CLI::ExistingFile);
  gt->add_option("-n", n_pairs, "number of pairs")->required()->check(CLI::PositiveNumber);
  gt->add_option("-o,--output", output, "output prefix for .src, .tgt and .probes")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "mixce: error: " << e.what() << "\n";
    return e.get_exit_code() != 0 ? e.get_exit_code() : 2;
  }

  try {
    if (*train_cmd) {
      TrainResult r = train(load_run_config(config_path));
      std::cout << "epochs\t" << r.epochs.size() << "\n";
      for (const auto& e : r.epochs) std::cout << "epoch\t" << e.epoch << "\t" << e.bleu << "\n";
      return 0;
    }
    if (*tr) {
      Loaded l = load_model(ckpt, src_vocab, tgt_vocab);
      const auto sources = encode_lines(read_lines(src_path), l.src);
      std::ofstream file;
      std::ostream& out = open_out(output, file);
      Rng rng(seed);
      const LengthNorm ln = parse_length_norm(norm);
      for (const auto& s : sources) {
        const int limit_len = max_len > 0 ? max_len : default_max_len(*l.model, s);
        if (sample > 0) {
          for (const auto& h : sample_k(*l.model, s, sample, rng, limit_len)) print_hyp(out, h, l.tgt, with_scores);
        } else if (beam > 0) {
          print_hyp(out, beam_search(*l.model, s, beam, limit_len, ln).front(), l.tgt, with_scores);
        } else {
          print_hyp(out, greedy_decode(*l.model, s, limit_len), l.tgt, with_scores);
        }
      }
      return 0;
    }
    if (*ev) {
      Interner ids;
      std::vector<Sentence> hyps;
      for (const auto& w : read_lines(hyp_path)) hyps.push_back(ids(w));
      std::vector<std::vector<Sentence>> refs;
      for (const auto& p : ref_paths) {
        refs.emplace_back();
        for (const auto& w : read_lines(p)) refs.back().push_back(ids(w));
        if (refs.back().size() != refs.front().size())
          throw std::runtime_error(p + " has " + std::to_string(refs.back().size()) + " lines, " + ref_paths[0] +
                                   " has " + std::to_string(refs.front().size()));
      }
      const size_t n_src = refs.front().size();
      if (n_src == 0 || hyps.size() % n_src != 0)
        throw std::runtime_error(std::to_string(hyps.size()) + " hypotheses do not divide into " +
                                 std::to_string(n_src) + " sources");
      const size_t k = hyps.size() / n_src;
      EvalReport report;
      if (multi_ref || pairwise || k > 1) {
        if (!multi_ref && !pairwise) throw std::runtime_error("several hypotheses per source need --multi-ref or --pairwise");
        std::vector<std::vector<Sentence>> sets(n_src);
        for (size_t s = 0; s < n_src; ++s) sets[s].assign(hyps.begin() + s * k, hyps.begin() + (s + 1) * k);
        if (multi_ref) report.per_reference = multi_reference_eval(sets, refs);
        if (pairwise) report.pairwise_bleu = pairwise_bleu(sets);
      } else {
        if (refs.size() > 1) throw std::runtime_error("several reference files need --multi-ref");
        report.corpus_bleu = corpus_bleu(hyps, refs.front());
      }
      write_report(std::cout, report);
      return 0;
    }
    if (*cum) {
      Loaded l = load_model(ckpt, src_vocab, tgt_vocab);
      auto sources = encode_lines(read_lines(src_path), l.src);
      if (limit > 0 && static_cast<size_t>(limit) < sources.size()) sources.resize(limit);
      int longest = 0;
      for (const auto& s : sources) longest = std::max(longest, static_cast<int>(s.size()));
      const int len = max_len > 0 ? max_len : std::min(l.model->max_decoder_len(), 2 * longest + 10);
      write_curve(std::cout, cumulative_sequence_probability(*l.model, sources, probe_beam, len));
      return 0;
    }
    if (*syn) {
      Loaded l = load_model(ckpt, src_vocab, tgt_vocab);
      EvalReport report;
      report.synonym_mass = synonym_mass_probe(*l.model, encode_probes(read_probes(probe_path), l.src, l.tgt));
      write_report(std::cout, report);
      return 0;
    }
    if (*di) {
      Loaded l = load_model(ckpt, src_vocab, tgt_vocab);
      const auto pairs = encode_corpus(load_parallel(corpus + ".src", corpus + ".tgt"), l.src, l.tgt);
      std::ofstream file;
      std::ostream& out = open_out(output, file);
      for (const auto& s : distill_corpus(*l.model, pairs)) out << join_words(l.tgt.decode(s)) << "\n";
      return 0;
    }
    if (*av) {
      std::vector<Checkpoint> loaded;
      for (const auto& p : ckpts) loaded.push_back(load_checkpoint(p));
      std::vector<const TransformerParams*> ptrs;
      for (const auto& c : loaded) ptrs.push_back(&c.params);
      std::vector<double> scores(ckpts.size(), 0.0);
      if (!scores_path.empty()) {
        std::vector<double> read;
        std::ifstream in(scores_path);
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty()) continue;
          std::istringstream fields(line);
          std::vector<std::string> cols;
          for (std::string c; std::getline(fields, c, '\t');) cols.push_back(c);
          read.push_back(std::stod(cols.size() >= 2 ? cols[1] : cols[0]));
        }
        if (read.size() != ckpts.size())
          throw std::runtime_error(scores_path + " has " + std::to_string(read.size()) + " scores for " +
                                   std::to_string(ckpts.size()) + " checkpoints");
        scores = read;
      } else if (mode != "last5") {
        throw std::runtime_error("--mode " + mode + " needs --scores");
      }
      TransformerParams avg;
      std::string chosen = mode;
      if (mode == "best") {
        if (valid_prefix.empty()) throw std::runtime_error("--mode best needs --valid");
        Loaded l = load_model(ckpts.front(), src_vocab, tgt_vocab);
        const auto valid = encode_corpus(load_parallel(valid_prefix + ".src", valid_prefix + ".tgt"), l.src, l.tgt);
        const ModelConfig mc = loaded.front().config;
        auto choice = choose_average(ptrs, scores, [&](const TransformerParams& p) {
          return validation_bleu(Transformer(mc, p.clone()), valid, 0);
        });
        chosen = choice.mode == AverageMode::kLast5 ? "last5" : "top5";
        std::cerr << "chose " << chosen << " with validation BLEU " << choice.score << "\n";
        avg = std::move(choice.params);
      } else {
        std::vector<const TransformerParams*> sel;
        for (int i : averaging_indices(scores, parse_average_mode(mode))) sel.push_back(ptrs[i]);
        avg = average_params(sel);
      }
      if (ckpts.size() < 5) std::cerr << "warning: only " << ckpts.size() << " checkpoints, averaged all of them\n";
      save_checkpoint(output, loaded.front().config, avg);
      return 0;
    }
    if (*gt) {
      const SynonymTask task = parse_task_spec(read_key_values(task_path));
      const SyntheticCorpus c = generate_synonym_corpus(task, n_pairs);
      write_parallel(output + ".src", output + ".tgt", c.pairs);
      write_probes(output + ".probes", c.probes);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "mixce: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
