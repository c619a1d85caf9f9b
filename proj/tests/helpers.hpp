#pragma once

#include <atomic>
#include <filesystem>
#include <optional>
#include <string>
#include <unistd.h>

#include "sptm/corpus.hpp"
#include "sptm/random.hpp"

namespace th {

// Fresh scratch directory under the system temp dir; removed by the caller if it cares.
inline std::filesystem::path scratch(const std::string& tag) {
  static std::atomic<int> counter{0};
  auto p = std::filesystem::temp_directory_path() /
           ("sptm_test_" + std::to_string(::getpid()) + "_" + tag + "_" + std::to_string(counter++));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline sptm::Tokens toks(const std::string& s) { return sptm::tokenize(s); }

inline sptm::NBestEntry entry(std::vector<sptm::PhrasePair> d, std::vector<double> feats,
                              std::optional<double> sb = std::nullopt) {
  sptm::NBestEntry e;
  for (auto& pp : d) e.tokens.insert(e.tokens.end(), pp.target.begin(), pp.target.end());
  e.derivation = std::move(d);
  e.features = std::move(feats);
  e.sbleu = sb;
  return e;
}

inline sptm::PhrasePair pp(const std::string& f, const std::string& e) { return {toks(f), toks(e)}; }

// Random corpus over a small word inventory; every candidate has a random
// derivation over a random pair pool, sbleu attached.
inline std::vector<sptm::TrainingSample> random_corpus(sptm::Rng& rng, std::size_t samples, std::size_t max_cands,
                                                       std::size_t m, std::size_t pool = 6) {
  std::vector<sptm::PhrasePair> pairs;
  for (std::size_t p = 0; p < pool; ++p) {
    sptm::PhrasePair q;
    const auto lf = 1 + rng.below(2), le = 1 + rng.below(2);
    for (std::size_t i = 0; i < lf; ++i) q.source.push_back("f" + std::to_string(rng.below(5)));
    for (std::size_t i = 0; i < le; ++i) q.target.push_back("e" + std::to_string(rng.below(5)));
    pairs.push_back(q);
  }
  std::vector<sptm::TrainingSample> out;
  for (std::size_t i = 0; i < samples; ++i) {
    sptm::TrainingSample s;
    s.id = static_cast<std::int64_t>(i);
    s.source = {"f0", "f1"};
    s.reference = {"e0", "e1", "e2"};
    const auto nc = 1 + rng.below(max_cands);
    for (std::size_t c = 0; c < nc; ++c) {
      std::vector<sptm::PhrasePair> d;
      const auto len = 1 + rng.below(3);
      for (std::size_t k = 0; k < len; ++k) d.push_back(pairs[rng.below(pairs.size())]);
      std::vector<double> f;
      for (std::size_t k = 0; k < m; ++k) f.push_back(rng.uniform(-1, 1));
      auto e = entry(d, f, rng.uniform());
      bool dup = false;
      for (auto& o : s.candidates) dup = dup || (o.tokens == e.tokens && o.derivation == e.derivation);
      if (!dup) s.candidates.push_back(std::move(e));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace th
