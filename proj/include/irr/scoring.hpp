#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "irr/corpus.hpp"
#include "irr/error.hpp"
#include "irr/rankstats.hpp"

namespace irr {

/// Prefix instruction used to condition perplexity scoring.
inline constexpr std::string_view kPerplexityPrefix =
    "Please describe a review text about the good points and room for improvement of the image.";

/// Natural-log token probabilities of the continuation tokens only.
class TokenLogProbs {
 public:
  /// Throws ValidationError if empty, non-finite, or any entry is positive.
  explicit TokenLogProbs(std::vector<double> logprobs);

  std::span<const double> values() const noexcept { return logprobs_; }
  std::size_t size() const noexcept { return logprobs_.size(); }

 private:
  std::vector<double> logprobs_;
};

/// exp(-mean(logprobs)). Validates like TokenLogProbs.
double perplexity_from_logprobs(std::span<const double> logprobs);
double perplexity_from_logprobs(const TokenLogProbs& t);

struct ScoreVector {
  std::string instance_id;
  std::array<double, kReviewsPerImage> scores{};
  Orientation orientation = Orientation::lower_better;
  std::string scorer_id;
  std::optional<std::array<int, kReviewsPerImage>> token_counts;

  bool operator==(const ScoreVector&) const = default;
};

/// Throws ValidationError on non-finite scores, or perplexities below 1
/// when is_perplexity is set.
void validate(const ScoreVector& sv, bool is_perplexity = false);

/// Scorer wire contract.
struct ScoreRequest {
  std::string context;
  std::optional<std::string> image_ref;
  std::string continuation;
};

struct ScoreResponse {
  std::vector<double> token_logprobs;
  int token_count = 0;
};

class ScorerEndpoint {
 public:
  virtual ~ScorerEndpoint() = default;
  virtual std::string id() const = 0;
  /// Whether the scorer conditions on the image as well as the prefix.
  virtual bool multimodal() const = 0;
  /// Throws EndpointError on transport or contract failure.
  virtual ScoreResponse score(const ScoreRequest& request) = 0;
};

struct RetryPolicy {
  int retries = 3;
  std::chrono::milliseconds initial_backoff{200};
};

struct ScoreCacheKey {
  std::string scorer_id;
  std::string instance_id;
  int text_index = 0;
  std::string prefix_hash;

  auto operator<=>(const ScoreCacheKey&) const = default;
};

/// Append-only on-disk cache of scorer responses. Safe for concurrent use:
/// readers share, writers serialize.
class ScoreCache {
 public:
  /// Loads existing entries from file (created on first write).
  explicit ScoreCache(std::filesystem::path file);

  std::optional<ScoreResponse> get(const ScoreCacheKey& key) const;
  void put(const ScoreCacheKey& key, const ScoreResponse& response);
  std::size_t size() const;

 private:
  std::filesystem::path file_;
  mutable std::shared_mutex mu_;
  std::map<ScoreCacheKey, ScoreResponse> entries_;
};

struct ScoringOptions {
  RetryPolicy retry;
  ScoreCache* cache = nullptr;
};

/// Scoring gave up on an instance; carries the instance and the cause.
class UnscoredInstanceError : public EndpointError {
 public:
  UnscoredInstanceError(std::string instance_id, std::string cause)
      : EndpointError("instance '" + instance_id + "' unscored: " + cause),
        instance_id_(std::move(instance_id)),
        cause_(std::move(cause)) {}

  const std::string& instance_id() const noexcept { return instance_id_; }
  const std::string& cause() const noexcept { return cause_; }

 private:
  std::string instance_id_;
  std::string cause_;
};

/// The scorer answered but without usable log-probabilities. Not retried.
class ScorerContractError : public EndpointError {
 public:
  using EndpointError::EndpointError;
};

/// Scores the five reviews independently, each conditioned on the prefix
/// (and image for multimodal scorers). Lower perplexity is better.
ScoreVector score_instance(const ReviewSet& rs, ScorerEndpoint& scorer, std::string_view prefix,
                           const ScoringOptions& options = {});

struct ScoringOutcome {
  std::vector<ScoreVector> scored;                          // input order
  std::vector<std::pair<std::string, std::string>> unscored;  // (instance_id, cause)
};

/// Scores many instances with at most max_in_flight concurrent requests.
ScoringOutcome score_all(std::span<const ReviewSet> sets, ScorerEndpoint& scorer,
                         std::string_view prefix, const ScoringOptions& options,
                         std::size_t max_in_flight = 4);

/// Fractional ranks by the vector's orientation; rater is the scorer.
Ranking rank_from_scores(const ScoreVector& sv);

struct ExternalScores {
  std::string scorer_id;
  std::vector<ScoreVector> vectors;
  std::vector<RecordIssue> skipped;  // unknown instance ids
};

/// Reads a delimited score file:
///   # scorer_id=<id>,orientation=<lower_better|higher_better>
///   instance_id,s1,s2,s3,s4,s5
///   <id>,<score>,...
/// Throws ParseError on wrong arity (naming the row). Rows for ids not in
/// known_ids (when given) are skipped and reported.
ExternalScores ingest_external_scores(const std::filesystem::path& path, Orientation orientation,
                                      const std::set<std::string>* known_ids = nullptr);

void write_external_scores(const std::filesystem::path& path, std::span<const ScoreVector> vectors,
                           std::string_view scorer_id, Orientation orientation);

}  // namespace irr
