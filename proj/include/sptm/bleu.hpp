#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <utility>
#include <vector>

#include "sptm/corpus.hpp"

namespace sptm::bleu {

inline constexpr int kMaxOrder = 4;

/// Tag stored in model files naming the sentence-level smoothing in use.
inline constexpr std::string_view kSmoothingTag = "add1-order2plus";

/// Sufficient statistics for BLEU-4 of one or more (reference, candidate) pairs.
struct BleuStats {
  std::array<std::size_t, kMaxOrder> matches{};
  std::array<std::size_t, kMaxOrder> totals{};
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;

  BleuStats& operator+=(const BleuStats& o);
  friend bool operator==(const BleuStats&, const BleuStats&) = default;
};

/// Clipped n-gram matches against a single reference. Tokens compare exactly;
/// case folding happens when files are loaded.
BleuStats compute_stats(const Tokens& reference, const Tokens& candidate);

/// BLEU from aggregated statistics. The effective order is the largest n ≤ 4
/// with a non-zero candidate n-gram total. With `smooth`, orders n ≥ 2 use
/// (matches + 1) / (totals + 1).
double bleu_from_stats(const BleuStats& stats, bool smooth);

/// Smoothed sentence-level BLEU-4 with brevity penalty. Throws on an empty
/// reference.
double sentence_bleu(const Tokens& reference, const Tokens& candidate);

/// Unsmoothed corpus BLEU-4 over aggregated statistics. Throws on empty input.
double corpus_bleu(const std::vector<std::pair<Tokens, Tokens>>& pairs);

}  // namespace sptm::bleu
