#include "sptm/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "sptm/bleu.hpp"
#include "sptm/corpus.hpp"
#include "sptm/error.hpp"
#include "sptm/gradcheck.hpp"
#include "sptm/model.hpp"
#include "sptm/objective.hpp"
#include "sptm/rerank.hpp"
#include "sptm/synth.hpp"
#include "sptm/trainer.hpp"

namespace sptm::cli {

namespace {

std::string trim(std::string s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

/// Sentences of an eval input: the last '|||' field when present, else the line.
std::vector<Tokens> read_sentences(const std::string& path) {
  std::vector<Tokens> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    auto pos = line.rfind("|||");
    out.push_back(tokenize(pos == std::string::npos ? line : line.substr(pos + 3)));
  }
  while (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

struct Common {
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
};

}  // namespace

std::vector<std::string> merge_config(const std::vector<std::string>& args, const std::string& config_text) {
  std::vector<std::string> merged = args;
  std::istringstream in(config_text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config: expected key=value", lineno);
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw FormatError("config: empty key", lineno);
    const auto flag = "--" + key;
    bool given = false;
    for (const auto& a : args)
      if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
    if (!given) merged.push_back(flag + "=" + value);
  }
  return merged;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Semantic phrase translation model: training, reranking and evaluation", "sptm"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  std::string config_path;
  app.add_option("--config", config_path, "Flat key=value file mirroring the flags; flags win on conflict");
  app.add_option("--threads", common.threads, "Worker threads for objective/rerank evaluation")
      ->check(CLI::PositiveNumber);

  // synthgen
  auto* synth_cmd = app.add_subcommand("synthgen", "Generate a planted-semantics reference/N-best/lambda triple");
  SynthSpec synth;
  std::string synth_out;
  synth_cmd->add_option("--out", synth_out, "Output prefix (writes .ref, .nbest, .lambda)")->required();
  synth_cmd->add_option("--concepts", synth.concepts, "Number of concepts")->capture_default_str();
  synth_cmd->add_option("--synonyms", synth.synonyms, "Phrases per concept per language")->capture_default_str();
  synth_cmd->add_option("--sentences", synth.sentences, "Number of sentences")->capture_default_str();
  synth_cmd->add_option("--phrases", synth.phrases_per_sentence, "Phrases per sentence")->capture_default_str();
  synth_cmd->add_option("--candidates", synth.candidates, "Candidates per N-best list")->capture_default_str();
  synth_cmd->add_option("--noise", synth.noise, "Probability of a wrong-concept phrase per position")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Random seed")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "Fit the projection network by L-BFGS on expected BLEU");
  std::string nbest, refs, lambda_path, model_out, log_path, resume_path, arch_name = "nonlinear", sim_name;
  std::string init_model, checkpoint_path;
  TrainConfig tc;
  double sptm_weight = 1.0;
  bool word_level = false, deterministic_log = false;
  train_cmd->add_option("--nbest", nbest, "N-best file")->required();
  train_cmd->add_option("--refs", refs, "Reference file")->required();
  train_cmd->add_option("--lambda", lambda_path, "Lambda file (M+1 weights)")->required();
  train_cmd->add_option("--model-out", model_out, "Where to write the trained model")->required();
  train_cmd->add_option("--log", log_path, "Training log (TSV)");
  train_cmd->add_flag("--deterministic-log", deterministic_log, "Write 0 in the seconds column of the log");
  train_cmd->add_option("--k1", tc.model.k1, "Hidden layer size")->capture_default_str();
  train_cmd->add_option("--k2", tc.model.k2, "Output layer size (nonlinear arch)")->capture_default_str();
  train_cmd->add_option("--arch", arch_name, "nonlinear | linear")->capture_default_str();
  train_cmd->add_option("--sim", sim_name, "dot | cosine (default: dot for nonlinear, cosine for linear)");
  train_cmd->add_flag("--word-level", word_level, "Aggregate word-word similarities (mean of max)");
  train_cmd->add_option("--max-iter", tc.max_iterations, "Maximum L-BFGS iterations")->capture_default_str();
  train_cmd->add_option("--grad-tol", tc.grad_tolerance, "Stop when max |gradient| falls below this")
      ->capture_default_str();
  train_cmd->add_option("--rel-tol", tc.rel_loss_tolerance, "Relative loss change stopping threshold")
      ->capture_default_str();
  train_cmd->add_option("--history", tc.history, "L-BFGS history size")->capture_default_str();
  train_cmd->add_option("--seed", tc.seed, "Initialization seed")->capture_default_str();
  train_cmd->add_option("--weight-decay", tc.weight_decay, "L2 penalty on the weights")->capture_default_str();
  train_cmd->add_option("--sptm-weight", sptm_weight, "Value of the similarity-feature weight during training")
      ->capture_default_str();
  train_cmd->add_option("--init-model", init_model, "Initialize W1 (and W2 when compatible) from this model");
  train_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file");
  train_cmd->add_option("--checkpoint-every", tc.checkpoint_interval, "Iterations between checkpoints (0 = off)")
      ->capture_default_str();
  train_cmd->add_option("--resume", resume_path, "Continue from a checkpoint file");

  // rerank
  auto* rerank_cmd = app.add_subcommand("rerank", "Rerank N-best lists with the similarity feature");
  std::string model_path, out_path;
  rerank_cmd->add_option("--nbest", nbest, "N-best file")->required();
  rerank_cmd->add_option("--model", model_path, "Model file")->required();
  rerank_cmd->add_option("--lambda", lambda_path, "Lambda file (M+1 weights)")->required();
  rerank_cmd->add_option("--refs", refs, "Reference file; enables the BLEU summary");
  rerank_cmd->add_option("--out", out_path, "Write selections here instead of stdout");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Corpus BLEU of a hypothesis file against a reference file");
  std::string hyp_path, ref_path;
  eval_cmd->add_option("--hyp", hyp_path, "Hypotheses, one per line (last '|||' field if present)")->required();
  eval_cmd->add_option("--ref", ref_path, "References, one per line (last '|||' field if present)")->required();

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare analytic gradients with central finite differences");
  std::uint64_t gc_seed = 1;
  std::size_t gc_configs = 20;
  double gc_tol = 1e-5, gc_step = 1e-5;
  grad_cmd->add_option("--seed", gc_seed, "Seed for the random toy problems")->capture_default_str();
  grad_cmd->add_option("--configs", gc_configs, "Number of random toy problems")->capture_default_str();
  grad_cmd->add_option("--tol", gc_tol, "Maximum allowed relative error")->capture_default_str();
  grad_cmd->add_option("--step", gc_step, "Finite-difference step")->capture_default_str();
  grad_cmd->add_option("--nbest", nbest, "Check on this N-best file instead of random problems");
  grad_cmd->add_option("--refs", refs, "Reference file for --nbest");
  grad_cmd->add_option("--lambda", lambda_path, "Lambda file for --nbest");
  grad_cmd->add_option("--model", model_path, "Model for --nbest");

  // tune-lambda
  auto* tune_cmd = app.add_subcommand("tune-lambda", "Coordinate-ascent tuning of lambda on a development set");
  std::string lambda_out;
  tune_cmd->add_option("--nbest", nbest, "Development N-best file")->required();
  tune_cmd->add_option("--refs", refs, "Development references")->required();
  tune_cmd->add_option("--model", model_path, "Model file")->required();
  tune_cmd->add_option("--lambda", lambda_path, "Initial lambda file")->required();
  tune_cmd->add_option("--out", lambda_out, "Tuned lambda file")->required();

  // export-embeddings
  auto* export_cmd = app.add_subcommand("export-embeddings", "Write projected phrase vectors as text");
  std::string phrases_path;
  export_cmd->add_option("--model", model_path, "Model file")->required();
  export_cmd->add_option("--nbest", nbest, "Export every phrase found in these derivations");
  export_cmd->add_option("--phrases", phrases_path, "Export phrases listed one per line");
  export_cmd->add_option("--out", out_path, "Output file (default stdout)");

  std::vector<std::string> args = raw_args;
  try {
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string cfg;
      if (args[i] == "--config" && i + 1 < args.size()) cfg = args[i + 1];
      if (args[i].rfind("--config=", 0) == 0) cfg = args[i].substr(9);
      if (!cfg.empty()) {
        args = merge_config(args, read_file(cfg));
        break;
      }
    }
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kFormat;
  }

  try {
    if (synth_cmd->parsed()) {
      const auto files = synthgen(synth, synth_out);
      out << "wrote " << files.references.string() << ", " << files.nbest.string() << ", " << files.lambda.string()
          << "\n";
      return kOk;
    }

    if (train_cmd->parsed()) {
      tc.model.arch = parse_arch(arch_name);
      tc.model.sim = sim_name.empty() ? default_sim_mode(tc.model.arch) : parse_sim_mode(sim_name);
      tc.model.word_level = word_level;
      tc.threads = common.threads;
      if (!init_model.empty()) tc.init_model = init_model;
      tc.checkpoint_path = checkpoint_path;
      auto samples = load_corpus(nbest, refs);
      auto lambda = load_lambda(lambda_path);
      lambda.sptm_weight() = sptm_weight;

      std::optional<Checkpoint> resume;
      Vocabulary vocab;
      if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        vocab = resume->model.vocab;
      } else {
        vocab = build_vocabulary(samples);
      }
      const auto res = train(samples, vocab, tc, lambda, resume ? &*resume : nullptr);
      save_model({vocab, res.params}, model_out);
      if (!log_path.empty()) write_file_atomic(log_path, format_train_log(res.log, !deterministic_log));
      out << "iterations " << res.log.back().iteration << "  stop " << res.stop_reason << "\n";
      out << "xbleu " << fixed4(res.initial_xbleu) << " -> " << fixed4(res.final_xbleu) << "\n";
      return kOk;
    }

    if (rerank_cmd->parsed()) {
      const auto model = load_model(model_path);
      auto samples = load_nbest(nbest);
      if (!refs.empty()) attach_references(samples, load_references(refs));
      const auto lambda = load_lambda(lambda_path);
      const auto res = rerank(samples, model.params, lambda, model.vocab, common.threads);
      std::string body;
      for (std::size_t i = 0; i < samples.size(); ++i)
        body += std::to_string(samples[i].id) + " ||| " + join(samples[i].candidates[res.selections[i].chosen].tokens) +
                "\n";
      if (out_path.empty())
        out << body;
      else
        write_file_atomic(out_path, body);
      if (res.bleu) {
        out << "baseline BLEU\t" << fixed4(*res.baseline_bleu) << "\n";
        out << "reranked BLEU\t" << fixed4(*res.bleu) << "\n";
        out << "oracle BLEU\t" << fixed4(*res.oracle_best_bleu) << "\n";
        out << "oracle-worst BLEU\t" << fixed4(*res.oracle_worst_bleu) << "\n";
      }
      return kOk;
    }

    if (eval_cmd->parsed()) {
      const auto hyps = read_sentences(hyp_path);
      const auto refs_s = read_sentences(ref_path);
      if (hyps.size() != refs_s.size())
        throw FormatError("eval: " + std::to_string(hyps.size()) + " hypotheses but " + std::to_string(refs_s.size()) +
                          " references");
      std::vector<std::pair<Tokens, Tokens>> pairs;
      for (std::size_t i = 0; i < hyps.size(); ++i) pairs.emplace_back(refs_s[i], hyps[i]);
      out << fixed4(bleu::corpus_bleu(pairs)) << "\n";
      return kOk;
    }

    if (grad_cmd->parsed()) {
      double worst = 0.0;
      if (!nbest.empty()) {
        if (refs.empty() || lambda_path.empty() || model_path.empty())
          throw Error("gradcheck --nbest also needs --refs, --lambda and --model");
        const auto model = load_model(model_path);
        const auto samples = load_corpus(nbest, refs);
        worst = finite_difference_check(samples, model.params, load_lambda(lambda_path), model.vocab, gc_step)
                    .max_rel_error;
        out << "max relative error " << worst << "\n";
      } else {
        const ToyOptions variants[] = {{Arch::nonlinear, SimMode::dot, false},
                                       {Arch::nonlinear, SimMode::cosine, false},
                                       {Arch::linear, SimMode::cosine, false},
                                       {Arch::linear, SimMode::dot, false},
                                       {Arch::nonlinear, SimMode::dot, true}};
        for (std::size_t c = 0; c < gc_configs; ++c) {
          const auto& v = variants[c % std::size(variants)];
          const auto toy = make_toy_problem(gc_seed * 1000003ULL + c, v);
          const auto rep = finite_difference_check(toy.samples, toy.params, toy.lambda, toy.vocab, gc_step);
          worst = std::max(worst, rep.max_rel_error);
        }
        out << "configs " << gc_configs << "  max relative error " << worst << "\n";
      }
      if (!(worst <= gc_tol)) {
        err << "gradcheck FAILED: " << worst << " > " << gc_tol << "\n";
        return kCheckFailed;
      }
      out << "gradcheck OK\n";
      return kOk;
    }

    if (tune_cmd->parsed()) {
      const auto model = load_model(model_path);
      const auto samples = load_corpus(nbest, refs);
      const auto table = RerankTable::build(samples, model.params, model.vocab, common.threads);
      const auto res = tune_lambda(table, load_lambda(lambda_path));
      save_lambda(res.lambda, lambda_out);
      out << "dev BLEU " << fixed4(res.initial_bleu) << " -> " << fixed4(res.bleu) << " after " << res.sweeps
          << " sweeps\n";
      return kOk;
    }

    if (export_cmd->parsed()) {
      const auto model = load_model(model_path);
      std::vector<Tokens> phrases;
      if (!nbest.empty()) {
        std::map<Tokens, int> seen;
        for (const auto& s : load_nbest(nbest))
          for (const auto& c : s.candidates)
            for (const auto& pp : c.derivation)
              for (const auto* p : {&pp.source, &pp.target})
                if (seen.emplace(*p, 0).second) phrases.push_back(*p);
      }
      if (!phrases_path.empty()) {
        std::istringstream in(read_file(phrases_path));
        std::string line;
        while (std::getline(in, line))
          if (auto t = tokenize(line); !t.empty()) phrases.push_back(std::move(t));
      }
      if (phrases.empty()) throw Error("export-embeddings: give --nbest or --phrases");
      std::string body;
      for (const auto& p : phrases) {
        const auto y = project(encode(p, model.vocab), model.params).output();
        body += join(p) + "\t";
        for (Eigen::Index i = 0; i < y.size(); ++i) {
          char buf[40];
          std::snprintf(buf, sizeof buf, i ? " %.9g" : "%.9g", y(i));
          body += buf;
        }
        body += "\n";
      }
      if (out_path.empty())
        out << body;
      else
        write_file_atomic(out_path, body);
      return kOk;
    }
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kIo;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << "\n";
    return kShape;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kFormat;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kError;
  }
  err << app.help();
  return kUsage;
}

}  // namespace sptm::cli
