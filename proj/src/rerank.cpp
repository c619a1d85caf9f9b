#include "sptm/rerank.hpp"

#include <map>

#include "sptm/error.hpp"
#include "sptm/parallel.hpp"

namespace sptm {

double sptm_feature(const NBestEntry& entry, const ModelParams& params, const Vocabulary& vocab) {
  double h = 0.0;
  for (const auto& pp : entry.derivation) h += similarity(pp.source, pp.target, params, vocab);
  return h;
}

RerankTable::RerankTable(const std::vector<TrainingSample>& samples, std::vector<std::vector<double>> sptm) {
  if (samples.empty()) throw Error("rerank: no samples");
  if (sptm.size() != samples.size()) throw ShapeError("rerank: feature table does not match the sample count");
  m_ = samples.front().num_features();
  has_refs_ = true;
  for (const auto& s : samples)
    if (s.reference.empty()) has_refs_ = false;
  samples_.resize(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    auto& row = samples_[i];
    if (s.candidates.empty()) throw Error("rerank: sample " + std::to_string(s.id) + " has no candidates");
    if (sptm[i].size() != s.candidates.size()) throw ShapeError("rerank: feature row size mismatch");
    row.sptm = std::move(sptm[i]);
    for (const auto& c : s.candidates) {
      if (c.features.size() != m_) throw ShapeError("rerank: inconsistent feature count");
      row.features.push_back(c.features);
      if (has_refs_) {
        row.stats.push_back(bleu::compute_stats(s.reference, c.tokens));
        row.sbleu.push_back(c.sbleu ? *c.sbleu : bleu::sentence_bleu(s.reference, c.tokens));
      }
    }
  }
}

RerankTable RerankTable::build(const std::vector<TrainingSample>& samples, const ModelParams& params,
                               const Vocabulary& vocab, unsigned threads) {
  const auto pairs = collect_phrase_pairs(samples);
  std::vector<double> sims(pairs.size());
  parallel_for(pairs.size(), threads,
               [&](std::size_t p) { sims[p] = similarity(pairs[p].pair.source, pairs[p].pair.target, params, vocab); });
  std::map<PhrasePair, double> lookup;
  for (std::size_t p = 0; p < pairs.size(); ++p) lookup.emplace(pairs[p].pair, sims[p]);

  std::vector<std::vector<double>> feat(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (const auto& c : samples[i].candidates) {
      double h = 0.0;
      for (const auto& pp : c.derivation) h += lookup.at(pp);
      feat[i].push_back(h);
    }
  return RerankTable(samples, std::move(feat));
}

double RerankTable::total_score(std::size_t sample, std::size_t cand, const std::vector<double>& lambda) const {
  const auto& row = samples_[sample];
  double t = 0.0;
  for (std::size_t k = 0; k < m_; ++k) t += lambda[k] * row.features[cand][k];
  return t + lambda[m_] * row.sptm[cand];
}

std::vector<std::size_t> RerankTable::select(const std::vector<double>& lambda) const {
  if (lambda.size() != m_ + 1)
    throw ShapeError("lambda has " + std::to_string(lambda.size()) + " weights, expected " + std::to_string(m_ + 1));
  std::vector<std::size_t> choice(samples_.size(), 0);
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    double best = total_score(i, 0, lambda);
    for (std::size_t c = 1; c < samples_[i].sptm.size(); ++c) {
      const double t = total_score(i, c, lambda);
      if (t > best) {
        best = t;
        choice[i] = c;
      }
    }
  }
  return choice;
}

double RerankTable::corpus_bleu(const std::vector<std::size_t>& choice) const {
  if (!has_refs_) throw Error("rerank: BLEU requested but references are missing");
  bleu::BleuStats total;
  for (std::size_t i = 0; i < samples_.size(); ++i) total += samples_[i].stats.at(choice.at(i));
  return bleu::bleu_from_stats(total, /*smooth=*/false);
}

std::vector<std::size_t> RerankTable::oracle_choice(bool best) const {
  if (!has_refs_) throw Error("rerank: oracle requested but references are missing");
  std::vector<std::size_t> choice(samples_.size(), 0);
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& sb = samples_[i].sbleu;
    for (std::size_t c = 1; c < sb.size(); ++c)
      if (best ? sb[c] > sb[choice[i]] : sb[c] < sb[choice[i]]) choice[i] = c;
  }
  return choice;
}

RerankResult rerank(const RerankTable& table, const std::vector<double>& lambda) {
  RerankResult res;
  const auto choice = table.select(lambda);
  for (std::size_t i = 0; i < choice.size(); ++i)
    res.selections.push_back({choice[i], table.total_score(i, choice[i], lambda), table.sptm(i, choice[i])});
  auto base_lambda = lambda;
  base_lambda.back() = 0.0;
  res.baseline_choice = table.select(base_lambda);
  if (table.has_references()) {
    res.bleu = table.corpus_bleu(choice);
    res.baseline_bleu = table.corpus_bleu(res.baseline_choice);
    res.oracle_best_bleu = table.corpus_bleu(table.oracle_choice(true));
    res.oracle_worst_bleu = table.corpus_bleu(table.oracle_choice(false));
  }
  return res;
}

RerankResult rerank(const std::vector<TrainingSample>& samples, const ModelParams& params, const LambdaVector& lambda,
                    const Vocabulary& vocab, unsigned threads) {
  return rerank(RerankTable::build(samples, params, vocab, threads), lambda.weights);
}

}  // namespace sptm
