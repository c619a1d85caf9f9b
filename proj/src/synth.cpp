#include "sptm/synth.hpp"

#include <string>

#include "sptm/bleu.hpp"
#include "sptm/error.hpp"
#include "sptm/random.hpp"

namespace sptm {

void SynthSpec::validate() const {
  if (concepts < 1 || synonyms < 1 || sentences < 1 || phrases_per_sentence < 1 || candidates < 1)
    throw Error("synthgen: all counts must be at least 1");
  if (!(noise >= 0.0 && noise <= 1.0)) throw Error("synthgen: noise rate must lie in [0, 1]");
  if (noise > 0.0 && concepts < 2) throw Error("synthgen: noise needs at least 2 concepts");
}

namespace {

// Phrase inventory depends only on (concepts, synonyms), so corpora generated
// with different seeds share one vocabulary of phrases.
Tokens source_phrase(std::size_t c, std::size_t j) {
  Tokens t{"s" + std::to_string(c) + "_" + std::to_string(j)};
  if (j % 2 == 1) t.push_back("sx" + std::to_string((c + j) % 3));
  return t;
}

Tokens target_phrase(std::size_t c, std::size_t j) {
  Tokens t;
  if (j % 3 == 2) t.push_back("tx" + std::to_string(c % 2));
  t.push_back("t" + std::to_string(c) + "_" + std::to_string(j));
  return t;
}

constexpr std::size_t kMaxAttemptsPerCandidate = 50;

}  // namespace

SynthData synthesize(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SynthData out;
  out.lambda.weights = {1.0, 1.0, 0.1, 0.0};

  for (std::size_t i = 0; i < spec.sentences; ++i) {
    TrainingSample s;
    s.id = static_cast<std::int64_t>(i);
    std::vector<std::size_t> concept_of(spec.phrases_per_sentence);
    std::vector<Tokens> src(spec.phrases_per_sentence), ref(spec.phrases_per_sentence);
    for (std::size_t k = 0; k < spec.phrases_per_sentence; ++k) {
      concept_of[k] = rng.below(spec.concepts);
      src[k] = source_phrase(concept_of[k], rng.below(spec.synonyms));
      ref[k] = target_phrase(concept_of[k], rng.below(spec.synonyms));
      s.source.insert(s.source.end(), src[k].begin(), src[k].end());
      s.reference.insert(s.reference.end(), ref[k].begin(), ref[k].end());
    }

    for (std::size_t attempt = 0;
         attempt < kMaxAttemptsPerCandidate * spec.candidates && s.candidates.size() < spec.candidates; ++attempt) {
      NBestEntry e;
      std::size_t wrong = 0;
      for (std::size_t k = 0; k < spec.phrases_per_sentence; ++k) {
        Tokens tgt = ref[k];
        if (rng.bernoulli(spec.noise)) {
          auto c = rng.below(spec.concepts - 1);
          if (c >= concept_of[k]) ++c;
          tgt = target_phrase(c, rng.below(spec.synonyms));
          ++wrong;
        }
        e.tokens.insert(e.tokens.end(), tgt.begin(), tgt.end());
        e.derivation.push_back({src[k], std::move(tgt)});
      }
      const double quality_signal = -0.5 * static_cast<double>(wrong) + rng.normal();
      const double noise_score = rng.normal();
      const double word_penalty = -static_cast<double>(e.tokens.size());
      e.features = {quality_signal, noise_score, word_penalty};

      bool duplicate = false;
      for (const auto& other : s.candidates)
        if (other.tokens == e.tokens && other.derivation == e.derivation) duplicate = true;
      if (duplicate) continue;
      e.sbleu = bleu::sentence_bleu(s.reference, e.tokens);
      s.candidates.push_back(std::move(e));
    }
    out.samples.push_back(std::move(s));
  }
  return out;
}

SynthFiles synthgen(const SynthSpec& spec, const std::filesystem::path& prefix) {
  const auto data = synthesize(spec);
  SynthFiles files;
  files.references = prefix.string() + ".ref";
  files.nbest = prefix.string() + ".nbest";
  files.lambda = prefix.string() + ".lambda";
  save_references(data.samples, files.references);
  save_nbest(data.samples, files.nbest);
  save_lambda(data.lambda, files.lambda);
  return files;
}

}  // namespace sptm
