#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace tip {

class Gateway;

class PerplexityEstimator {
 public:
  virtual ~PerplexityEstimator() = default;
  // Perplexity of `text` given the preceding `context`. `text` must be
  // non-empty.
  virtual double estimate(const std::string& text,
                          const std::string& context) const = 0;
};

// Interpolated character n-gram model with add-one smoothing.
//
//   P_n(c | h) = (count(h c) + 1) / (count(h *) + V)
//
// where count(h *) is the number of times h is followed by any byte in the
// training corpus and V is the number of distinct training bytes plus one
// (unknown). At a position with `a` bytes of history the orders
// 1..min(order, a + 1) are mixed with equal weights. History never crosses
// document boundaries during training; at query time the context supplies
// history for the first bytes of the text.
class CharNgramModel : public PerplexityEstimator {
 public:
  explicit CharNgramModel(int order = 5);

  void train(const std::vector<std::string>& documents);
  void add_document(const std::string& doc);

  double estimate(const std::string& text,
                  const std::string& context) const override;

  // Probability of byte `c` after `history` (only the last order-1 bytes
  // are used).
  double probability(const std::string& history, char c) const;

  int order() const { return order_; }
  std::size_t vocabulary_size() const { return vocab_.size() + 1; }

 private:
  int order_;
  std::unordered_map<std::string, std::uint64_t> ngram_counts_;
  std::unordered_map<std::string, std::uint64_t> history_counts_;
  std::vector<bool> vocab_seen_ = std::vector<bool>(256, false);
  std::vector<unsigned char> vocab_;
};

// Uses a log-probability capable gateway endpoint.
class EndpointPerplexity : public PerplexityEstimator {
 public:
  EndpointPerplexity(Gateway& gateway, std::string endpoint_id)
      : gateway_(gateway), endpoint_id_(std::move(endpoint_id)) {}

  double estimate(const std::string& text,
                  const std::string& context) const override;

 private:
  Gateway& gateway_;
  std::string endpoint_id_;
};

// Tries `primary`; on UnsupportedCapability answers with `fallback`.
class FallbackPerplexity : public PerplexityEstimator {
 public:
  FallbackPerplexity(std::shared_ptr<const PerplexityEstimator> primary,
                     std::shared_ptr<const PerplexityEstimator> fallback)
      : primary_(std::move(primary)), fallback_(std::move(fallback)) {}

  double estimate(const std::string& text,
                  const std::string& context) const override;

 private:
  std::shared_ptr<const PerplexityEstimator> primary_;
  std::shared_ptr<const PerplexityEstimator> fallback_;
};

double estimate_perplexity(const PerplexityEstimator& estimator,
                           const std::string& text,
                           const std::string& context = {});

// Nearest-rank percentile, p in (0, 100].
double percentile(std::vector<double> values, double p);

}  // namespace tip
