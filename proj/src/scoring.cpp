#include "irr/scoring.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "irr/hashing.hpp"

namespace irr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_logprobs(std::span<const double> logprobs) {
  if (logprobs.empty()) throw ValidationError("empty token log-probability vector");
  for (std::size_t i = 0; i < logprobs.size(); ++i) {
    if (!std::isfinite(logprobs[i])) {
      throw ValidationError("non-finite log-probability at token " + std::to_string(i));
    }
    if (logprobs[i] > 0.0) {
      throw ValidationError("positive log-probability at token " + std::to_string(i));
    }
  }
}

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    out.push_back(trim(line.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

ScoreResponse request_with_retry(ScorerEndpoint& scorer, const ScoreRequest& req,
                                 const RetryPolicy& policy) {
  auto backoff = policy.initial_backoff;
  for (int attempt = 0;; ++attempt) {
    try {
      return scorer.score(req);
    } catch (const ScorerContractError&) {
      throw;
    } catch (const EndpointError&) {
      if (attempt >= policy.retries) throw;
    }
    std::this_thread::sleep_for(backoff);
    backoff *= 2;
  }
}

}  // namespace

TokenLogProbs::TokenLogProbs(std::vector<double> logprobs) : logprobs_(std::move(logprobs)) {
  check_logprobs(logprobs_);
}

double perplexity_from_logprobs(std::span<const double> logprobs) {
  check_logprobs(logprobs);
  double sum = 0.0;
  for (double lp : logprobs) sum += lp;
  return std::exp(-sum / static_cast<double>(logprobs.size()));
}

double perplexity_from_logprobs(const TokenLogProbs& t) {
  return perplexity_from_logprobs(t.values());
}

void validate(const ScoreVector& sv, bool is_perplexity) {
  for (std::size_t i = 0; i < sv.scores.size(); ++i) {
    if (!std::isfinite(sv.scores[i])) {
      throw ValidationError("instance '" + sv.instance_id + "': score " + std::to_string(i + 1) +
                            " is not finite");
    }
    if (is_perplexity && sv.orientation == Orientation::lower_better && sv.scores[i] < 1.0) {
      throw ValidationError("instance '" + sv.instance_id + "': perplexity below 1");
    }
  }
}

ScoreCache::ScoreCache(fs::path file) : file_(std::move(file)) {
  std::ifstream in(file_);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    // A torn final line from an interrupted write is ignored.
    auto j = json::parse(line, nullptr, false);
    if (j.is_discarded()) continue;
    ScoreCacheKey key{j.at("scorer_id"), j.at("instance_id"), j.at("text_index"),
                      j.at("prefix_hash")};
    entries_[std::move(key)] =
        ScoreResponse{j.at("token_logprobs").get<std::vector<double>>(), j.at("token_count")};
  }
}

std::optional<ScoreResponse> ScoreCache::get(const ScoreCacheKey& key) const {
  std::shared_lock lock(mu_);
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ScoreCache::put(const ScoreCacheKey& key, const ScoreResponse& response) {
  std::unique_lock lock(mu_);
  if (entries_.contains(key)) return;
  std::ofstream out(file_, std::ios::app);
  if (!out) throw Error("cannot write score cache " + file_.string());
  out << json{{"scorer_id", key.scorer_id},
              {"instance_id", key.instance_id},
              {"text_index", key.text_index},
              {"prefix_hash", key.prefix_hash},
              {"token_logprobs", response.token_logprobs},
              {"token_count", response.token_count}}
             .dump()
      << '\n';
  out.flush();
  entries_.emplace(key, response);
}

std::size_t ScoreCache::size() const {
  std::shared_lock lock(mu_);
  return entries_.size();
}

ScoreVector score_instance(const ReviewSet& rs, ScorerEndpoint& scorer, std::string_view prefix,
                           const ScoringOptions& options) {
  ScoreVector sv;
  sv.instance_id = rs.instance_id;
  sv.orientation = Orientation::lower_better;
  sv.scorer_id = scorer.id();
  std::array<int, kReviewsPerImage> counts{};

  const std::string prefix_hash = sha256_hex(prefix);
  for (const auto& review : rs.reviews) {
    ScoreRequest req{std::string(prefix), std::nullopt, review.body};
    if (scorer.multimodal()) req.image_ref = rs.image_ref;
    const ScoreCacheKey key{sv.scorer_id, rs.instance_id, review.index, prefix_hash};

    std::optional<ScoreResponse> resp;
    if (options.cache) resp = options.cache->get(key);
    if (!resp) {
      try {
        resp = request_with_retry(scorer, req, options.retry);
      } catch (const ScorerContractError&) {
        throw;
      } catch (const EndpointError& e) {
        throw UnscoredInstanceError(rs.instance_id, e.what());
      }
      if (resp->token_logprobs.empty()) {
        throw ScorerContractError("scorer '" + sv.scorer_id + "' returned no log-probabilities for '" +
                                  rs.instance_id + "' text " + std::to_string(review.index));
      }
      if (options.cache) options.cache->put(key, *resp);
    }

    const auto slot = static_cast<std::size_t>(review.index - 1);
    try {
      sv.scores[slot] = perplexity_from_logprobs(resp->token_logprobs);
    } catch (const ValidationError& e) {
      throw ScorerContractError("scorer '" + sv.scorer_id + "' text " +
                                std::to_string(review.index) + ": " + e.what());
    }
    counts[slot] = resp->token_count > 0 ? resp->token_count
                                         : static_cast<int>(resp->token_logprobs.size());
  }
  sv.token_counts = counts;
  return sv;
}

ScoringOutcome score_all(std::span<const ReviewSet> sets, ScorerEndpoint& scorer,
                         std::string_view prefix, const ScoringOptions& options,
                         std::size_t max_in_flight) {
  std::vector<std::optional<ScoreVector>> results(sets.size());
  std::vector<std::optional<std::string>> failures(sets.size());
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t i = next++; i < sets.size(); i = next++) {
      try {
        results[i] = score_instance(sets[i], scorer, prefix, options);
      } catch (const UnscoredInstanceError& e) {
        failures[i] = e.cause();
      } catch (const std::exception& e) {
        failures[i] = e.what();
      }
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(max_in_flight, 1, std::max<std::size_t>(sets.size(), 1));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }

  ScoringOutcome out;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    if (results[i]) out.scored.push_back(std::move(*results[i]));
    else out.unscored.emplace_back(sets[i].instance_id, *failures[i]);
  }
  return out;
}

Ranking rank_from_scores(const ScoreVector& sv) {
  validate(sv);
  const auto ranks = fractional_ranks(sv.scores, sv.orientation);
  Ranking r;
  r.instance_id = sv.instance_id;
  r.rater_id = sv.scorer_id;
  std::copy(ranks.begin(), ranks.end(), r.ranks.begin());
  const bool tied = std::any_of(ranks.begin(), ranks.end(),
                                [](double x) { return x != std::floor(x); }) ||
                    !is_permutation_rank(r.ranks);
  r.tie_policy_used = tied ? TiePolicy::fractional : TiePolicy::none;
  return r;
}

ExternalScores ingest_external_scores(const fs::path& path, Orientation orientation,
                                      const std::set<std::string>* known_ids) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read score file " + path.string());

  ExternalScores out;
  out.scorer_id = path.stem().string();
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  char delim = ',';
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (line.front() == '#') {
      for (const auto& kv : split(std::string_view(line).substr(1), ',')) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const auto k = trim(std::string_view(kv).substr(0, eq));
        const auto v = trim(std::string_view(kv).substr(eq + 1));
        if (k == "scorer_id") out.scorer_id = v;
        if (k == "orientation" && parse_orientation(v) != orientation) {
          throw ValidationError(path.string() + ": file orientation " + v +
                                " conflicts with requested " + to_string(orientation));
        }
      }
      continue;
    }
    if (!header_seen) {
      delim = line.find('\t') != std::string::npos ? '\t' : ',';
      const auto cols = split(line, delim);
      if (cols.size() != kReviewsPerImage + 1 || cols[0] != "instance_id") {
        throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": header must be instance_id,s1..s5",
                         line);
      }
      header_seen = true;
      continue;
    }
    const auto cols = split(line, delim);
    if (cols.size() != kReviewsPerImage + 1) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": row '" +
                           (cols.empty() ? std::string() : cols[0]) + "' has " +
                           std::to_string(cols.size() - 1) + " scores, expected 5",
                       line);
    }
    ScoreVector sv;
    sv.instance_id = cols[0];
    sv.orientation = orientation;
    for (std::size_t i = 0; i < kReviewsPerImage; ++i) {
      const auto& cell = cols[i + 1];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": row '" + cols[0] +
                             "' score " + std::to_string(i + 1) + " is not a number",
                         line);
      }
      sv.scores[i] = v;
    }
    if (known_ids && !known_ids->contains(sv.instance_id)) {
      out.skipped.push_back({line_no, sv.instance_id, "unknown instance_id"});
      continue;
    }
    try {
      validate(sv);
    } catch (const ValidationError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what(), line);
    }
    out.vectors.push_back(std::move(sv));
  }
  for (auto& sv : out.vectors) sv.scorer_id = out.scorer_id;
  return out;
}

void write_external_scores(const fs::path& path, std::span<const ScoreVector> vectors,
                           std::string_view scorer_id, Orientation orientation) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write score file " + path.string());
  out << "# scorer_id=" << scorer_id << ",orientation=" << to_string(orientation) << '\n';
  out << "instance_id,s1,s2,s3,s4,s5\n";
  out.precision(17);
  for (const auto& sv : vectors) {
    out << sv.instance_id;
    for (double s : sv.scores) out << ',' << s;
    out << '\n';
  }
}

}  // namespace irr
