#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mwpforge/qgen.hpp"

namespace mwpforge::qgen {

namespace {

using Counts = std::map<std::vector<std::string>, int>;

Counts ngram_counts(const std::vector<std::string>& toks, int n) {
  Counts out;
  if (static_cast<int>(toks.size()) < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i)
    ++out[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  return out;
}

// Clipped overlap: each hypothesis n-gram counts at most as often as it
// appears in the reference.
long clipped_overlap(const Counts& hyp, const Counts& ref) {
  long total = 0;
  for (const auto& [gram, count] : hyp) {
    auto it = ref.find(gram);
    if (it != ref.end()) total += std::min(count, it->second);
  }
  return total;
}

long total_count(const Counts& c) {
  long total = 0;
  for (const auto& [gram, count] : c) total += count;
  return total;
}

double f1(double overlap, double hyp_total, double ref_total) {
  if (overlap <= 0 || hyp_total <= 0 || ref_total <= 0) return 0.0;
  double p = overlap / hyp_total;
  double r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double bleu(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
  if (hyp.empty()) return 0.0;
  double log_sum = 0.0;
  int orders_used = 0;
  for (int n = 1; n <= 4; ++n) {
    Counts h = ngram_counts(hyp, n);
    long total = total_count(h);
    if (total == 0) continue;  // hypothesis shorter than n
    long match = clipped_overlap(h, ngram_counts(ref, n));
    // add-one smoothing only when no n-gram of this order matched
    double p = match > 0 ? static_cast<double>(match) / static_cast<double>(total)
                         : 1.0 / static_cast<double>(total + 1);
    log_sum += std::log(p);
    ++orders_used;
  }
  if (orders_used == 0) return 0.0;
  double geo = std::exp(log_sum / orders_used);
  double bp = hyp.size() >= ref.size()
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(ref.size()) / hyp.size());
  return bp * geo;
}

}  // namespace

GenScores score_generation(const std::vector<std::string>& hypothesis,
                           const std::vector<std::string>& reference) {
  if (reference.empty()) throw EmptyReference("reference token sequence is empty");
  GenScores s;
  s.bleu = bleu(hypothesis, reference);
  for (int n = 1; n <= 2; ++n) {
    Counts h = ngram_counts(hypothesis, n);
    Counts r = ngram_counts(reference, n);
    double overlap = static_cast<double>(clipped_overlap(h, r));
    double val = f1(overlap, static_cast<double>(total_count(h)),
                    static_cast<double>(total_count(r)));
    (n == 1 ? s.rouge1 : s.rouge2) = val;
  }
  double lcs = static_cast<double>(lcs_length(hypothesis, reference));
  s.rougeL = f1(lcs, static_cast<double>(hypothesis.size()),
                static_cast<double>(reference.size()));
  return s;
}

}  // namespace mwpforge::qgen
