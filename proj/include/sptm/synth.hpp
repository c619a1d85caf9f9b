#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "sptm/corpus.hpp"

namespace sptm {

/// Planted-semantics translation task. Each concept owns a set of synonymous
/// phrases in each language; references translate every source phrase with a
/// phrase of the same concept, and candidates swap in a phrase of another
/// concept with probability `noise` per position.
struct SynthSpec {
  std::size_t concepts = 5;
  std::size_t synonyms = 3;  // phrases per concept per language
  std::size_t sentences = 200;
  std::size_t phrases_per_sentence = 4;
  std::size_t candidates = 8;
  double noise = 0.3;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SynthData {
  std::vector<TrainingSample> samples;  // sbleu attached
  LambdaVector lambda;                  // baseline weights, λ_{M+1} = 0
};

/// Baseline features per candidate: a noisy count of wrong-concept phrases
/// (mildly informative), a pure-noise score and a word penalty. Candidates
/// are distinct in (tokens, derivation); when the noise rate cannot produce
/// enough distinct candidates the list is shorter.
SynthData synthesize(const SynthSpec& spec);

struct SynthFiles {
  std::filesystem::path references;
  std::filesystem::path nbest;
  std::filesystem::path lambda;
};

/// Writes `<prefix>.ref`, `<prefix>.nbest`, `<prefix>.lambda`.
SynthFiles synthgen(const SynthSpec& spec, const std::filesystem::path& prefix);

}  // namespace sptm
