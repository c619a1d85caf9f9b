#include "sptm/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "sptm/error.hpp"

namespace sptm::bleu {

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (int n = 0; n < kMaxOrder; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  candidate_length += o.candidate_length;
  reference_length += o.reference_length;
  return *this;
}

namespace {

using NgramCounts = std::map<std::vector<std::string_view>, std::size_t>;

NgramCounts count_ngrams(const Tokens& toks, std::size_t n) {
  NgramCounts counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::vector<std::string_view> key(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                      toks.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++counts[key];
  }
  return counts;
}

}  // namespace

BleuStats compute_stats(const Tokens& reference, const Tokens& candidate) {
  BleuStats s;
  s.candidate_length = candidate.size();
  s.reference_length = reference.size();
  for (int n = 1; n <= kMaxOrder; ++n) {
    const auto cand = count_ngrams(candidate, static_cast<std::size_t>(n));
    const auto ref = count_ngrams(reference, static_cast<std::size_t>(n));
    std::size_t total = 0, match = 0;
    for (const auto& [gram, c] : cand) {
      total += c;
      if (auto it = ref.find(gram); it != ref.end()) match += std::min(c, it->second);
    }
    s.matches[n - 1] = match;
    s.totals[n - 1] = total;
  }
  return s;
}

double bleu_from_stats(const BleuStats& stats, bool smooth) {
  int order = 0;
  for (int n = 0; n < kMaxOrder; ++n)
    if (stats.totals[n] > 0) order = n + 1;
  if (order == 0 || stats.matches[0] == 0) return 0.0;

  double log_precision = 0.0;
  for (int n = 0; n < order; ++n) {
    double m = static_cast<double>(stats.matches[n]);
    double t = static_cast<double>(stats.totals[n]);
    if (smooth && n > 0) {
      m += 1.0;
      t += 1.0;
    }
    if (m == 0.0) return 0.0;
    log_precision += std::log(m / t);
  }
  double bp = 0.0;
  if (stats.candidate_length < stats.reference_length)
    bp = 1.0 - static_cast<double>(stats.reference_length) / static_cast<double>(stats.candidate_length);
  return std::exp(bp + log_precision / order);
}

double sentence_bleu(const Tokens& reference, const Tokens& candidate) {
  if (reference.empty()) throw Error("sentence_bleu: empty reference");
  return bleu_from_stats(compute_stats(reference, candidate), /*smooth=*/true);
}

double corpus_bleu(const std::vector<std::pair<Tokens, Tokens>>& pairs) {
  if (pairs.empty()) throw Error("corpus_bleu: no sentence pairs");
  BleuStats total;
  for (const auto& [ref, cand] : pairs) total += compute_stats(ref, cand);
  return bleu_from_stats(total, /*smooth=*/false);
}

}  // namespace sptm::bleu
