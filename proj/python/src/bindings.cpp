#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "sptm/bleu.hpp"
#include "sptm/cli.hpp"
#include "sptm/corpus.hpp"
#include "sptm/error.hpp"
#include "sptm/gradcheck.hpp"
#include "sptm/model.hpp"
#include "sptm/objective.hpp"
#include "sptm/rerank.hpp"
#include "sptm/synth.hpp"
#include "sptm/trainer.hpp"

namespace py = pybind11;
using namespace sptm;

namespace {

/// Immutable list of training samples shared with Python by reference.
struct Corpus {
  std::vector<TrainingSample> samples;
};

py::dict sample_to_dict(const TrainingSample& s) {
  py::list cands;
  for (const auto& c : s.candidates) {
    py::list deriv;
    for (const auto& pp : c.derivation) deriv.append(py::make_tuple(pp.source, pp.target));
    py::dict d;
    d["tokens"] = c.tokens;
    d["features"] = c.features;
    d["sbleu"] = c.sbleu ? py::cast(*c.sbleu) : py::none();
    d["derivation"] = deriv;
    cands.append(d);
  }
  py::dict out;
  out["id"] = s.id;
  out["source"] = s.source;
  out["reference"] = s.reference;
  out["candidates"] = cands;
  return out;
}

LambdaVector to_lambda(const std::vector<double>& w) { return LambdaVector{w}; }

}  // namespace

PYBIND11_MODULE(_sptm, m) {
  m.doc() = "Semantic phrase translation model: expected-BLEU training and N-best reranking";

  // Translators run in reverse registration order, so the base goes first.
  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  m.def("sentence_bleu", &bleu::sentence_bleu, py::arg("reference"), py::arg("candidate"));
  m.def("corpus_bleu", &bleu::corpus_bleu, py::arg("pairs"), "Corpus BLEU over (reference, candidate) pairs");

  py::class_<Vocabulary>(m, "Vocabulary")
      .def(py::init<>())
      .def(py::init<std::vector<std::string>>())
      .def("__len__", &Vocabulary::size)
      .def("index", &Vocabulary::index)
      .def("add", &Vocabulary::add)
      .def_property_readonly("tokens", &Vocabulary::tokens);

  py::class_<Corpus>(m, "Corpus")
      .def("__len__", [](const Corpus& c) { return c.samples.size(); })
      .def("sample", [](const Corpus& c, std::size_t i) { return sample_to_dict(c.samples.at(i)); })
      .def("save_nbest", [](const Corpus& c, const std::filesystem::path& p) { save_nbest(c.samples, p); })
      .def("phrase_pairs", [](const Corpus& c) {
        py::list out;
        for (const auto& pc : collect_phrase_pairs(c.samples))
          out.append(py::make_tuple(pc.pair.source, pc.pair.target, pc.count));
        return out;
      });

  m.def(
      "load_corpus",
      [](const std::filesystem::path& nbest, const std::filesystem::path& refs) {
        return Corpus{load_corpus(nbest, refs)};
      },
      py::arg("nbest"), py::arg("references"));
  m.def(
      "build_vocabulary", [](const Corpus& c) { return build_vocabulary(c.samples); }, py::arg("corpus"));
  m.def("load_lambda", [](const std::filesystem::path& p) { return load_lambda(p).weights; });
  m.def("save_lambda", [](const std::vector<double>& w, const std::filesystem::path& p) { save_lambda(to_lambda(w), p); });

  py::class_<Model>(m, "Model")
      .def_static("load", &load_model, py::arg("path"))
      .def_static(
          "init",
          [](const Vocabulary& vocab, std::size_t k1, std::size_t k2, const std::string& arch, std::string sim,
             bool word_level, std::uint64_t seed) {
            ModelConfig cfg{k1, k2, parse_arch(arch), SimMode::dot, word_level};
            cfg.sim = sim.empty() ? default_sim_mode(cfg.arch) : parse_sim_mode(sim);
            return Model{vocab, init_params(vocab.size(), cfg, seed)};
          },
          py::arg("vocab"), py::arg("k1") = 100, py::arg("k2") = 100, py::arg("arch") = "nonlinear",
          py::arg("sim") = "", py::arg("word_level") = false, py::arg("seed") = 1)
      .def("save", [](const Model& self, const std::filesystem::path& p) { save_model(self, p); })
      .def_property_readonly("vocab", [](const Model& self) { return self.vocab; })
      .def_property_readonly("w1", [](const Model& self) { return self.params.w1; })
      .def_property_readonly("w2", [](const Model& self) { return self.params.w2; })
      .def_property_readonly("arch", [](const Model& self) { return std::string(to_string(self.params.arch)); })
      .def_property_readonly("sim", [](const Model& self) { return std::string(to_string(self.params.sim)); })
      .def_property_readonly("word_level", [](const Model& self) { return self.params.word_level; })
      .def("project",
           [](const Model& self, const Tokens& phrase) {
             return Vector(project(encode(phrase, self.vocab), self.params).output());
           })
      .def("similarity", [](const Model& self, const Tokens& f, const Tokens& e) {
        return similarity(f, e, self.params, self.vocab);
      });

  m.def(
      "full_gradient",
      [](const Corpus& c, const Model& model, const std::vector<double>& lambda, unsigned threads) {
        auto r = full_gradient(c.samples, model.params, to_lambda(lambda), model.vocab, threads);
        return py::make_tuple(r.loss, r.grad.dw1, r.grad.dw2);
      },
      py::arg("corpus"), py::arg("model"), py::arg("lambda_"), py::arg("threads") = 1,
      "Returns (loss, dW1, dW2) with loss = -mean expected BLEU");
  m.def(
      "expected_bleu",
      [](const Corpus& c, const Model& model, const std::vector<double>& lambda) {
        std::vector<double> out;
        for (const auto& s : c.samples) out.push_back(expected_bleu(s, model.params, to_lambda(lambda), model.vocab));
        return out;
      },
      py::arg("corpus"), py::arg("model"), py::arg("lambda_"));

  m.def(
      "train",
      [](const Corpus& c, const Vocabulary& vocab, const std::vector<double>& lambda, std::size_t k1, std::size_t k2,
         const std::string& arch, std::string sim, bool word_level, std::size_t max_iterations, std::uint64_t seed,
         unsigned threads) {
        TrainConfig cfg;
        cfg.model = {k1, k2, parse_arch(arch), SimMode::dot, word_level};
        cfg.model.sim = sim.empty() ? default_sim_mode(cfg.model.arch) : parse_sim_mode(sim);
        cfg.max_iterations = max_iterations;
        cfg.seed = seed;
        cfg.threads = threads;
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(c.samples, vocab, cfg, to_lambda(lambda));
        }
        py::list log;
        for (const auto& e : r.log) {
          py::dict d;
          d["iter"] = e.iteration;
          d["loss"] = e.loss;
          d["xbleu"] = e.xbleu;
          d["gradnorm"] = e.grad_norm;
          d["seconds"] = e.seconds;
          log.append(d);
        }
        return py::make_tuple(Model{vocab, r.params}, log, r.stop_reason);
      },
      py::arg("corpus"), py::arg("vocab"), py::arg("lambda_"), py::arg("k1") = 100, py::arg("k2") = 100,
      py::arg("arch") = "nonlinear", py::arg("sim") = "", py::arg("word_level") = false,
      py::arg("max_iterations") = 100, py::arg("seed") = 1, py::arg("threads") = 1);

  m.def(
      "rerank",
      [](const Corpus& c, const Model& model, const std::vector<double>& lambda, unsigned threads) {
        const auto r = rerank(c.samples, model.params, to_lambda(lambda), model.vocab, threads);
        std::vector<std::size_t> chosen;
        for (const auto& s : r.selections) chosen.push_back(s.chosen);
        py::dict d;
        d["chosen"] = chosen;
        d["baseline_chosen"] = r.baseline_choice;
        d["bleu"] = r.bleu;
        d["baseline_bleu"] = r.baseline_bleu;
        d["oracle_bleu"] = r.oracle_best_bleu;
        d["oracle_worst_bleu"] = r.oracle_worst_bleu;
        return d;
      },
      py::arg("corpus"), py::arg("model"), py::arg("lambda_"), py::arg("threads") = 1);

  m.def(
      "tune_lambda",
      [](const Corpus& c, const Model& model, const std::vector<double>& lambda) {
        const auto table = RerankTable::build(c.samples, model.params, model.vocab);
        const auto r = tune_lambda(table, to_lambda(lambda));
        return py::make_tuple(r.lambda.weights, r.bleu);
      },
      py::arg("corpus"), py::arg("model"), py::arg("lambda_"));

  m.def(
      "gradcheck",
      [](std::uint64_t seed, const std::string& arch, std::string sim, bool word_level) {
        ToyOptions o{parse_arch(arch), SimMode::dot, word_level};
        o.sim = sim.empty() ? default_sim_mode(o.arch) : parse_sim_mode(sim);
        const auto toy = make_toy_problem(seed, o);
        return finite_difference_check(toy.samples, toy.params, toy.lambda, toy.vocab).max_rel_error;
      },
      py::arg("seed") = 1, py::arg("arch") = "nonlinear", py::arg("sim") = "", py::arg("word_level") = false,
      "Max relative error between analytic and finite-difference gradients on a random toy problem");

  m.def(
      "synthesize",
      [](std::size_t concepts, std::size_t synonyms, std::size_t sentences, std::size_t phrases,
         std::size_t candidates, double noise, std::uint64_t seed) {
        auto d = synthesize({concepts, synonyms, sentences, phrases, candidates, noise, seed});
        return py::make_tuple(Corpus{std::move(d.samples)}, d.lambda.weights);
      },
      py::arg("concepts") = 5, py::arg("synonyms") = 3, py::arg("sentences") = 200, py::arg("phrases") = 4,
      py::arg("candidates") = 8, py::arg("noise") = 0.3, py::arg("seed") = 1);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the sptm CLI in-process; returns (exit_code, stdout, stderr)");
}
