#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sptm {

using Tokens = std::vector<std::string>;

/// Joint source+target token index. Index 0 is always the reserved UNK token.
class Vocabulary {
 public:
  static constexpr std::size_t kUnk = 0;
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();
  /// Builds from an explicit token list; the list must start with the UNK token.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::string& token(std::size_t i) const { return tokens_.at(i); }

  /// Index of `tok`, or kUnk when unseen.
  std::size_t index(std::string_view tok) const;
  bool contains(std::string_view tok) const;

  /// Appends `tok` if unseen and returns its index.
  std::size_t add(std::string_view tok);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const noexcept { return std::hash<std::string_view>{}(s); }
  };
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t, Hash, std::equal_to<>> index_;
};

struct PhrasePair {
  Tokens source;
  Tokens target;

  friend auto operator<=>(const PhrasePair&, const PhrasePair&) = default;
  friend bool operator==(const PhrasePair&, const PhrasePair&) = default;
};

/// Segmentation of a candidate into aligned phrases, in target order.
using Derivation = std::vector<PhrasePair>;

struct NBestEntry {
  Tokens tokens;
  std::vector<double> features;  // the M baseline feature values
  Derivation derivation;
  std::optional<double> sbleu;

  friend bool operator==(const NBestEntry&, const NBestEntry&) = default;
};

struct TrainingSample {
  std::int64_t id = 0;
  Tokens source;
  Tokens reference;
  std::vector<NBestEntry> candidates;

  std::size_t num_features() const { return candidates.empty() ? 0 : candidates.front().features.size(); }

  friend bool operator==(const TrainingSample&, const TrainingSample&) = default;
};

struct PhrasePairCount {
  PhrasePair pair;
  std::size_t count = 0;
};

/// Log-linear weights; the last entry weights the phrase-similarity feature.
struct LambdaVector {
  std::vector<double> weights;

  std::size_t num_baseline() const { return weights.empty() ? 0 : weights.size() - 1; }
  double sptm_weight() const { return weights.back(); }
  double& sptm_weight() { return weights.back(); }

  friend bool operator==(const LambdaVector&, const LambdaVector&) = default;
};

/// Lowercases ASCII letters in place (case-insensitive evaluation).
std::string fold_case(std::string_view s);
Tokens tokenize(std::string_view text);

/// Parses `<id> ||| <candidate> ||| <features> ||| <derivation>` lines.
/// Samples are grouped by id in order of first appearance. Derivations are
/// validated against the candidate tokens; sbleu stays unset until
/// attach_references() runs.
std::vector<TrainingSample> load_nbest(const std::filesystem::path& path);
std::vector<TrainingSample> parse_nbest(std::string_view text);
void save_nbest(const std::vector<TrainingSample>& samples, const std::filesystem::path& path);
std::string format_nbest(const std::vector<TrainingSample>& samples);

struct ReferenceEntry {
  Tokens source;
  Tokens reference;
};

/// Parses `<id> ||| <source> ||| <reference>` lines.
std::map<std::int64_t, ReferenceEntry> load_references(const std::filesystem::path& path);
std::map<std::int64_t, ReferenceEntry> parse_references(std::string_view text);
void save_references(const std::vector<TrainingSample>& samples, const std::filesystem::path& path);

/// Fills source/reference for every sample and caches sentence BLEU on each
/// candidate. Throws FormatError when a sample id has no reference.
void attach_references(std::vector<TrainingSample>& samples, const std::map<std::int64_t, ReferenceEntry>& refs);

/// Convenience: load_nbest + load_references + attach_references.
std::vector<TrainingSample> load_corpus(const std::filesystem::path& nbest, const std::filesystem::path& references);

LambdaVector load_lambda(const std::filesystem::path& path);
LambdaVector parse_lambda(std::string_view text);
void save_lambda(const LambdaVector& lambda, const std::filesystem::path& path);

/// First-occurrence order over source, reference, candidate and derivation
/// tokens, with UNK at index 0.
Vocabulary build_vocabulary(const std::vector<TrainingSample>& samples);

/// Unique (source, target) pairs over every derivation, with total counts,
/// in first-occurrence order.
std::vector<PhrasePairCount> collect_phrase_pairs(const std::vector<TrainingSample>& samples);

/// Throws DerivationMismatch when the concatenated target phrases differ from
/// `entry.tokens` or a phrase is empty.
void validate_derivation(const NBestEntry& entry, std::size_t line = 0);

std::string join(const Tokens& tokens);

/// Writes `content` to a temp file next to `path` and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

}  // namespace sptm
