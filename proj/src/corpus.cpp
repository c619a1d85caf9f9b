#include "sptm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>

#include "sptm/bleu.hpp"
#include "sptm/error.hpp"

namespace sptm {

Vocabulary::Vocabulary() { add(kUnkToken); }

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  if (tokens.empty() || tokens.front() != kUnkToken)
    throw FormatError("vocabulary must start with " + std::string(kUnkToken));
  for (const auto& t : tokens) {
    if (contains(t)) throw FormatError("duplicate vocabulary token '" + t + "'");
    add(t);
  }
}

std::size_t Vocabulary::index(std::string_view tok) const {
  auto it = index_.find(tok);
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view tok) const { return index_.find(tok) != index_.end(); }

std::size_t Vocabulary::add(std::string_view tok) {
  if (auto it = index_.find(tok); it != index_.end()) return it->second;
  tokens_.emplace_back(tok);
  index_.emplace(tokens_.back(), tokens_.size() - 1);
  return tokens_.size() - 1;
}

std::string fold_case(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.push_back(fold_case(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

std::string join(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find("|||", start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 3;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool parse_double(std::string_view s, double& out) {
  // strtod accepts hex floats and inf/nan spellings that from_chars(general) rejects.
  std::string buf(s);
  char* end = nullptr;
  out = std::strtod(buf.c_str(), &end);
  return end == buf.c_str() + buf.size() && !buf.empty();
}

std::int64_t parse_id(std::string_view s, std::size_t line) {
  s = trim(s);
  std::int64_t id = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), id);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad sentence id '" + std::string(s) + "'", line);
  return id;
}

Derivation parse_derivation(std::string_view text, std::size_t line) {
  Tokens toks;
  {
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      std::size_t j = i;
      while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
      if (j > i) toks.emplace_back(text.substr(i, j - i));
      i = j;
    }
  }
  Derivation d;
  std::size_t i = 0;
  while (i < toks.size()) {
    if (toks[i] != "[") throw FormatError("derivation: expected '[' but found '" + toks[i] + "'", line);
    ++i;
    PhrasePair pp;
    while (i < toks.size() && toks[i] != "#" && toks[i] != "]" && toks[i] != "[") pp.source.push_back(fold_case(toks[i++]));
    if (i >= toks.size() || toks[i] != "#") throw FormatError("derivation: expected '#' in segment", line);
    ++i;
    while (i < toks.size() && toks[i] != "#" && toks[i] != "]" && toks[i] != "[") pp.target.push_back(fold_case(toks[i++]));
    if (i >= toks.size() || toks[i] != "]") throw FormatError("derivation: expected ']' closing segment", line);
    ++i;
    if (pp.source.empty() || pp.target.empty()) throw FormatError("derivation: empty phrase in segment", line);
    d.push_back(std::move(pp));
  }
  return d;
}

// Shortest representation that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace

void validate_derivation(const NBestEntry& entry, std::size_t line) {
  Tokens concat;
  for (const auto& pp : entry.derivation) {
    if (pp.source.empty() || pp.target.empty()) throw DerivationMismatch("derivation contains an empty phrase", line);
    concat.insert(concat.end(), pp.target.begin(), pp.target.end());
  }
  if (concat != entry.tokens)
    throw DerivationMismatch("derivation target '" + join(concat) + "' does not match candidate '" + join(entry.tokens) + "'",
                             line);
}

std::vector<TrainingSample> parse_nbest(std::string_view text) {
  std::vector<TrainingSample> samples;
  std::map<std::int64_t, std::size_t> slot;
  std::optional<std::size_t> num_features;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++lineno;
    if (trim(line).empty()) continue;

    auto fields = split_fields(line);
    if (fields.size() < 4) throw FormatError("N-best line has no derivation field", lineno);
    if (fields.size() != 4) throw FormatError("N-best line must have exactly 4 '|||'-separated fields", lineno);

    auto id = parse_id(fields[0], lineno);
    NBestEntry e;
    e.tokens = tokenize(fields[1]);
    for (const auto& f : tokenize(fields[2])) {
      double v;
      if (!parse_double(f, v) || !std::isfinite(v)) throw FormatError("bad feature value '" + f + "'", lineno);
      e.features.push_back(v);
    }
    if (!num_features) num_features = e.features.size();
    if (e.features.size() != *num_features)
      throw FormatError("feature count " + std::to_string(e.features.size()) + " differs from " +
                            std::to_string(*num_features) + " seen earlier in the file",
                        lineno);
    e.derivation = parse_derivation(fields[3], lineno);
    if (e.derivation.empty() && !e.tokens.empty()) throw FormatError("candidate has no derivation", lineno);
    validate_derivation(e, lineno);

    auto [it, inserted] = slot.try_emplace(id, samples.size());
    if (inserted) {
      samples.emplace_back();
      samples.back().id = id;
    }
    auto& sample = samples[it->second];
    for (const auto& other : sample.candidates)
      if (other.tokens == e.tokens && other.derivation == e.derivation)
        throw FormatError("duplicate candidate (same tokens and derivation) for sentence " + std::to_string(id), lineno);
    sample.candidates.push_back(std::move(e));
  }
  return samples;
}

std::vector<TrainingSample> load_nbest(const std::filesystem::path& path) { return parse_nbest(read_file(path)); }

std::string format_nbest(const std::vector<TrainingSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    for (const auto& c : s.candidates) {
      out += std::to_string(s.id);
      out += " ||| ";
      out += join(c.tokens);
      out += " |||";
      for (double f : c.features) {
        out += ' ';
        out += format_double(f);
      }
      out += " |||";
      for (const auto& pp : c.derivation) {
        out += " [ ";
        out += join(pp.source);
        out += " # ";
        out += join(pp.target);
        out += " ]";
      }
      out += '\n';
    }
  }
  return out;
}

void save_nbest(const std::vector<TrainingSample>& samples, const std::filesystem::path& path) {
  write_file_atomic(path, format_nbest(samples));
}

std::map<std::int64_t, ReferenceEntry> parse_references(std::string_view text) {
  std::map<std::int64_t, ReferenceEntry> refs;
  std::size_t lineno = 0, pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (fields.size() != 3) throw FormatError("reference line must have 3 '|||'-separated fields", lineno);
    auto id = parse_id(fields[0], lineno);
    ReferenceEntry r{tokenize(fields[1]), tokenize(fields[2])};
    if (r.reference.empty()) throw FormatError("empty reference", lineno);
    if (!refs.emplace(id, std::move(r)).second) throw FormatError("duplicate reference id " + std::to_string(id), lineno);
  }
  return refs;
}

std::map<std::int64_t, ReferenceEntry> load_references(const std::filesystem::path& path) {
  return parse_references(read_file(path));
}

void save_references(const std::vector<TrainingSample>& samples, const std::filesystem::path& path) {
  std::string out;
  for (const auto& s : samples) out += std::to_string(s.id) + " ||| " + join(s.source) + " ||| " + join(s.reference) + "\n";
  write_file_atomic(path, out);
}

void attach_references(std::vector<TrainingSample>& samples, const std::map<std::int64_t, ReferenceEntry>& refs) {
  for (auto& s : samples) {
    auto it = refs.find(s.id);
    if (it == refs.end()) throw FormatError("no reference for sentence " + std::to_string(s.id));
    s.source = it->second.source;
    s.reference = it->second.reference;
    for (auto& c : s.candidates) c.sbleu = bleu::sentence_bleu(s.reference, c.tokens);
  }
}

std::vector<TrainingSample> load_corpus(const std::filesystem::path& nbest, const std::filesystem::path& references) {
  auto samples = load_nbest(nbest);
  attach_references(samples, load_references(references));
  return samples;
}

LambdaVector parse_lambda(std::string_view text) {
  LambdaVector l;
  std::size_t lineno = 0, pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    auto line = trim(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++lineno;
    if (line.empty()) continue;
    double v;
    if (!parse_double(line, v) || !std::isfinite(v)) throw FormatError("bad lambda value '" + std::string(line) + "'", lineno);
    l.weights.push_back(v);
  }
  if (l.weights.size() < 2) throw FormatError("lambda file needs at least 2 weights (M baseline + 1 similarity)");
  return l;
}

LambdaVector load_lambda(const std::filesystem::path& path) { return parse_lambda(read_file(path)); }

void save_lambda(const LambdaVector& lambda, const std::filesystem::path& path) {
  std::string out;
  for (double w : lambda.weights) out += format_double(w) + "\n";
  write_file_atomic(path, out);
}

Vocabulary build_vocabulary(const std::vector<TrainingSample>& samples) {
  Vocabulary v;
  auto add_all = [&](const Tokens& toks) {
    for (const auto& t : toks) v.add(t);
  };
  for (const auto& s : samples) {
    add_all(s.source);
    add_all(s.reference);
    for (const auto& c : s.candidates) {
      add_all(c.tokens);
      for (const auto& pp : c.derivation) {
        add_all(pp.source);
        add_all(pp.target);
      }
    }
  }
  if (v.size() == 1) throw Error("build_vocabulary: corpus contains no tokens");
  return v;
}

std::vector<PhrasePairCount> collect_phrase_pairs(const std::vector<TrainingSample>& samples) {
  std::vector<PhrasePairCount> out;
  std::map<PhrasePair, std::size_t> slot;
  for (const auto& s : samples)
    for (const auto& c : s.candidates)
      for (const auto& pp : c.derivation) {
        auto [it, inserted] = slot.try_emplace(pp, out.size());
        if (inserted) out.push_back({pp, 0});
        ++out[it->second].count;
      }
  return out;
}

}  // namespace sptm
