#include "tip/perplexity.hpp"

#include <algorithm>
#include <cmath>

#include "tip/error.hpp"
#include "tip/gateway.hpp"

namespace tip {

CharNgramModel::CharNgramModel(int order) : order_(order) {
  if (order_ < 1) throw InvalidArgument("n-gram order must be >= 1");
}

void CharNgramModel::train(const std::vector<std::string>& documents) {
  for (const auto& d : documents) add_document(d);
}

void CharNgramModel::add_document(const std::string& doc) {
  for (std::size_t i = 0; i < doc.size(); ++i) {
    auto u = static_cast<unsigned char>(doc[i]);
    if (!vocab_seen_[u]) {
      vocab_seen_[u] = true;
      vocab_.push_back(u);
    }
    for (int n = 1; n <= order_; ++n) {
      std::size_t hist = static_cast<std::size_t>(n - 1);
      if (hist > i) break;
      std::size_t start = i - hist;
      ++ngram_counts_[doc.substr(start, hist + 1)];
      ++history_counts_[doc.substr(start, hist)];
    }
  }
}

double CharNgramModel::probability(const std::string& history, char c) const {
  const double v = static_cast<double>(vocabulary_size());
  std::size_t usable =
      std::min(history.size(), static_cast<std::size_t>(order_ - 1));
  double sum = 0.0;
  for (std::size_t h = 0; h <= usable; ++h) {
    std::string ctx = history.substr(history.size() - h);
    auto hc = history_counts_.find(ctx);
    auto nc = ngram_counts_.find(ctx + c);
    double num = (nc == ngram_counts_.end() ? 0.0
                                            : static_cast<double>(nc->second)) +
                 1.0;
    double den = (hc == history_counts_.end()
                      ? 0.0
                      : static_cast<double>(hc->second)) +
                 v;
    sum += num / den;
  }
  return sum / static_cast<double>(usable + 1);
}

double CharNgramModel::estimate(const std::string& text,
                                const std::string& context) const {
  if (text.empty()) throw InvalidArgument("perplexity of empty text");
  std::string full = context + text;
  double log_sum = 0.0;
  for (std::size_t i = context.size(); i < full.size(); ++i) {
    std::size_t from = i >= static_cast<std::size_t>(order_ - 1)
                           ? i - static_cast<std::size_t>(order_ - 1)
                           : 0;
    log_sum += std::log(probability(full.substr(from, i - from), full[i]));
  }
  return std::exp(-log_sum / static_cast<double>(text.size()));
}

double EndpointPerplexity::estimate(const std::string& text,
                                    const std::string& context) const {
  return gateway_.perplexity(endpoint_id_, text, context);
}

double FallbackPerplexity::estimate(const std::string& text,
                                    const std::string& context) const {
  try {
    return primary_->estimate(text, context);
  } catch (const UnsupportedCapability&) {
    return fallback_->estimate(text, context);
  }
}

double estimate_perplexity(const PerplexityEstimator& estimator,
                           const std::string& text,
                           const std::string& context) {
  if (text.empty()) throw InvalidArgument("perplexity of empty text");
  return estimator.estimate(text, context);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw InvalidArgument("percentile of empty sample");
  if (!(p > 0.0 && p <= 100.0)) {
    throw InvalidArgument("percentile must be in (0, 100]");
  }
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(
      std::ceil(p / 100.0 * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

}  // namespace tip
