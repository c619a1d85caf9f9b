#include "sptm/model.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <map>

#include "sptm/bleu.hpp"
#include "sptm/error.hpp"
#include "sptm/random.hpp"

namespace sptm {

std::string_view to_string(Arch a) { return a == Arch::linear ? "linear" : "nonlinear"; }
std::string_view to_string(SimMode m) { return m == SimMode::cosine ? "cosine" : "dot"; }

Arch parse_arch(std::string_view s) {
  if (s == "nonlinear") return Arch::nonlinear;
  if (s == "linear") return Arch::linear;
  throw FormatError("unknown architecture '" + std::string(s) + "'");
}

SimMode parse_sim_mode(std::string_view s) {
  if (s == "dot") return SimMode::dot;
  if (s == "cosine") return SimMode::cosine;
  throw FormatError("unknown similarity mode '" + std::string(s) + "'");
}

SimMode default_sim_mode(Arch arch) { return arch == Arch::linear ? SimMode::cosine : SimMode::dot; }

double WordVector::total() const {
  double t = 0;
  for (const auto& [i, c] : entries) t += c;
  return t;
}

Vector WordVector::dense() const {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(dim));
  for (const auto& [i, c] : entries) v(static_cast<Eigen::Index>(i)) = c;
  return v;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  auto same = [](const Matrix& x, const Matrix& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() &&
           std::equal(x.data(), x.data() + x.size(), y.data(),
                      [](double u, double v) { return std::bit_cast<std::uint64_t>(u) == std::bit_cast<std::uint64_t>(v); });
  };
  return a.arch == b.arch && a.sim == b.sim && a.word_level == b.word_level && a.bleu_smoothing == b.bleu_smoothing &&
         same(a.w1, b.w1) && same(a.w2, b.w2);
}

ModelParams init_params(std::size_t d, const ModelConfig& cfg, std::uint64_t seed) {
  if (d == 0 || cfg.k1 == 0 || (cfg.arch == Arch::nonlinear && cfg.k2 == 0))
    throw ShapeError("init_params: dimensions must be positive");
  Rng rng(seed);
  ModelParams p;
  p.arch = cfg.arch;
  p.sim = cfg.sim;
  p.word_level = cfg.word_level;
  p.bleu_smoothing = std::string(bleu::kSmoothingTag);
  auto fill = [&](Matrix& m, std::size_t rows, std::size_t cols) {
    m.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const double r = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-r, r);
  };
  fill(p.w1, d, cfg.k1);
  if (cfg.arch == Arch::nonlinear) fill(p.w2, cfg.k1, cfg.k2);
  return p;
}

void check_params(const ModelParams& p) {
  if (p.w1.size() == 0) throw ShapeError("W1 is empty");
  if (p.arch == Arch::nonlinear) {
    if (p.w2.size() == 0) throw ShapeError("nonlinear architecture requires W2");
    if (p.w2.rows() != p.w1.cols())
      throw ShapeError("W2 has " + std::to_string(p.w2.rows()) + " rows but W1 has " + std::to_string(p.w1.cols()) +
                       " columns");
  } else if (p.w2.size() != 0) {
    throw ShapeError("linear architecture must not carry W2");
  }
  if (!p.w1.allFinite() || !p.w2.allFinite()) throw ShapeError("model parameters contain non-finite values");
}

WordVector encode_ids(const std::vector<std::size_t>& ids, std::size_t dim) {
  std::map<std::size_t, double> counts;
  for (auto i : ids) counts[i] += 1.0;
  WordVector w;
  w.dim = dim;
  w.entries.assign(counts.begin(), counts.end());
  return w;
}

WordVector encode(const Tokens& phrase, const Vocabulary& vocab) {
  std::vector<std::size_t> ids;
  ids.reserve(phrase.size());
  for (const auto& t : phrase) ids.push_back(vocab.index(t));
  return encode_ids(ids, vocab.size());
}

ForwardTrace project(const WordVector& x, const ModelParams& p) {
  if (x.dim != p.d())
    throw ShapeError("word vector dimension " + std::to_string(x.dim) + " does not match W1 rows " + std::to_string(p.d()));
  ForwardTrace t;
  t.arch = p.arch;
  t.z1 = Vector::Zero(p.w1.cols());
  for (const auto& [i, c] : x.entries) t.z1 += c * p.w1.row(static_cast<Eigen::Index>(i)).transpose();
  if (p.arch == Arch::linear) {
    t.y1 = t.z1;
    return t;
  }
  t.y1 = t.z1.array().tanh().matrix();
  t.z2 = p.w2.transpose() * t.y1;
  t.y2 = t.z2.array().tanh().matrix();
  return t;
}

double output_similarity(const Vector& a, const Vector& b, SimMode mode) {
  if (a.size() != b.size()) throw ShapeError("similarity: output dimension mismatch");
  const double dot = a.dot(b);
  if (mode == SimMode::dot) return dot;
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (na * nb);
}

WordMatch word_match(const Matrix& sims) {
  WordMatch m;
  const auto nf = static_cast<std::size_t>(sims.rows());
  const auto ne = static_cast<std::size_t>(sims.cols());
  m.best_for_f.resize(nf);
  m.best_for_e.resize(ne);
  double fsum = 0.0, esum = 0.0;
  for (std::size_t i = 0; i < nf; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < ne; ++j)
      if (sims(i, j) > sims(i, best)) best = j;
    m.best_for_f[i] = best;
    fsum += sims(i, best);
  }
  for (std::size_t j = 0; j < ne; ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < nf; ++i)
      if (sims(i, j) > sims(best, j)) best = i;
    m.best_for_e[j] = best;
    esum += sims(best, j);
  }
  m.score = 0.5 * fsum / static_cast<double>(nf) + 0.5 * esum / static_cast<double>(ne);
  return m;
}

double similarity(const Tokens& f, const Tokens& e, const ModelParams& p, const Vocabulary& vocab) {
  if (f.empty() || e.empty()) throw Error("similarity: empty phrase");
  if (!p.word_level)
    return output_similarity(project(encode(f, vocab), p).output(), project(encode(e, vocab), p).output(), p.sim);

  std::vector<Vector> fy, ey;
  for (const auto& t : f) fy.push_back(project(encode({t}, vocab), p).output());
  for (const auto& t : e) ey.push_back(project(encode({t}, vocab), p).output());
  Matrix sims(static_cast<Eigen::Index>(f.size()), static_cast<Eigen::Index>(e.size()));
  for (std::size_t i = 0; i < f.size(); ++i)
    for (std::size_t j = 0; j < e.size(); ++j)
      sims(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = output_similarity(fy[i], ey[j], p.sim);
  return word_match(sims).score;
}

std::string encode_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
  return std::string(buf, p);
}

double decode_double(std::string_view s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, std::chars_format::hex);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad matrix value '" + std::string(s) + "'");
  return v;
}

namespace {

void write_matrix(std::string& out, std::string_view name, const Matrix& m) {
  out += std::string(name) + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (j) out += ' ';
      out += encode_double(m(i, j));
    }
    out += '\n';
  }
}

/// Line cursor over a text buffer.
class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  bool done() const { return pos_ >= text_.size(); }
  std::size_t line() const { return line_; }
  std::string_view remaining() const { return text_.substr(pos_); }

  std::string_view next() {
    if (done()) throw FormatError("unexpected end of model file", line_);
    auto nl = text_.find('\n', pos_);
    auto l = text_.substr(pos_, nl == std::string_view::npos ? std::string_view::npos : nl - pos_);
    pos_ = nl == std::string_view::npos ? text_.size() : nl + 1;
    ++line_;
    return l;
  }

  /// Reads `key value` and returns value.
  std::string_view field(std::string_view key) {
    auto l = next();
    auto sp = l.find(' ');
    if (sp == std::string_view::npos || l.substr(0, sp) != key)
      throw FormatError("expected '" + std::string(key) + "' field", line_);
    return l.substr(sp + 1);
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
};

std::size_t to_size(std::string_view s, std::size_t line) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw FormatError("bad integer '" + std::string(s) + "'", line);
  return v;
}

std::vector<std::string_view> split_ws(std::string_view l) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < l.size()) {
    while (i < l.size() && l[i] == ' ') ++i;
    std::size_t j = i;
    while (j < l.size() && l[j] != ' ') ++j;
    if (j > i) out.push_back(l.substr(i, j - i));
    i = j;
  }
  return out;
}

Matrix read_matrix(LineReader& r, std::string_view name, std::size_t rows, std::size_t cols) {
  auto dims = split_ws(r.next());
  if (dims.size() != 3 || dims[0] != name) throw FormatError("expected matrix header '" + std::string(name) + "'", r.line());
  const auto fr = to_size(dims[1], r.line()), fc = to_size(dims[2], r.line());
  if (fr != rows || fc != cols)
    throw ShapeError(std::string(name) + " is " + std::to_string(fr) + "x" + std::to_string(fc) + " but the header implies " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    auto vals = split_ws(r.next());
    if (vals.size() != cols)
      throw ShapeError(std::string(name) + " row " + std::to_string(i) + " has " + std::to_string(vals.size()) +
                       " values, expected " + std::to_string(cols));
    for (std::size_t j = 0; j < cols; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = decode_double(vals[j]);
  }
  return m;
}

}  // namespace

std::string format_model(const Model& m) {
  const auto& p = m.params;
  check_params(p);
  if (m.vocab.size() != p.d()) throw ShapeError("vocabulary size does not match W1 rows");
  std::string out = "sptm-model " + std::to_string(kModelFormatVersion) + "\n";
  out += "d " + std::to_string(p.d()) + "\n";
  out += "k1 " + std::to_string(p.k1()) + "\n";
  out += "k2 " + std::to_string(p.arch == Arch::linear ? 0 : p.w2.cols()) + "\n";
  out += "arch " + std::string(to_string(p.arch)) + "\n";
  out += "sim " + std::string(to_string(p.sim)) + "\n";
  out += "word_level " + std::string(p.word_level ? "1" : "0") + "\n";
  out += "bleu_smoothing " + (p.bleu_smoothing.empty() ? std::string("none") : p.bleu_smoothing) + "\n";
  out += "vocab\n";
  for (const auto& t : m.vocab.tokens()) out += t + "\n";
  write_matrix(out, "W1", p.w1);
  write_matrix(out, "W2", p.w2);
  out += "end\n";
  return out;
}

Model parse_model(std::string_view text, std::string_view* rest) {
  LineReader r(text);
  auto magic = split_ws(r.next());
  if (magic.size() != 2 || magic[0] != "sptm-model") throw FormatError("not an sptm model file", 1);
  if (to_size(magic[1], 1) != static_cast<std::size_t>(kModelFormatVersion))
    throw FormatError("unsupported model file version " + std::string(magic[1]), 1);
  const auto d = to_size(r.field("d"), r.line());
  const auto k1 = to_size(r.field("k1"), r.line());
  const auto k2 = to_size(r.field("k2"), r.line());
  Model m;
  auto& p = m.params;
  p.arch = parse_arch(r.field("arch"));
  p.sim = parse_sim_mode(r.field("sim"));
  auto wl = r.field("word_level");
  if (wl != "0" && wl != "1") throw FormatError("word_level must be 0 or 1", r.line());
  p.word_level = wl == "1";
  p.bleu_smoothing = std::string(r.field("bleu_smoothing"));
  if (p.bleu_smoothing == "none") p.bleu_smoothing.clear();
  if (r.next() != "vocab") throw FormatError("expected 'vocab' section", r.line());
  std::vector<std::string> toks;
  toks.reserve(d);
  for (std::size_t i = 0; i < d; ++i) toks.emplace_back(r.next());
  m.vocab = Vocabulary(std::move(toks));
  p.w1 = read_matrix(r, "W1", d, k1);
  if (p.arch == Arch::linear) {
    if (k2 != 0) throw ShapeError("linear model must declare k2 0");
    p.w2 = read_matrix(r, "W2", 0, 0);
  } else {
    p.w2 = read_matrix(r, "W2", k1, k2);
  }
  if (r.next() != "end") throw FormatError("expected 'end' after matrices", r.line());
  check_params(p);
  if (rest) *rest = r.remaining();
  return m;
}

void save_model(const Model& m, const std::filesystem::path& path) { write_file_atomic(path, format_model(m)); }

Model load_model(const std::filesystem::path& path) {
  const auto text = read_file(path);
  return parse_model(text);
}

}  // namespace sptm
