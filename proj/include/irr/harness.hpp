#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "irr/corpus.hpp"
#include "irr/elicitation.hpp"
#include "irr/rankstats.hpp"
#include "irr/scoring.hpp"

namespace irr {

/// Why an instance did not contribute to a run. Codes are stable strings:
/// below_threshold, insufficient_annotations, unscored, unranked, missing_scores.
struct Exclusion {
  std::string instance_id;
  std::string code;
  std::string detail;

  bool operator==(const Exclusion&) const = default;
};

struct RankOutcome {
  std::map<std::string, Ranking> rankings;  // by instance_id
  std::vector<Exclusion> failures;
};

/// Where model rankings come from.
class RankingSource {
 public:
  virtual ~RankingSource() = default;
  /// Model / scorer name used as rater id and report row.
  virtual std::string id() const = 0;
  /// Configuration that fully determines this source's output.
  virtual nlohmann::json config() const = 0;
  virtual RankOutcome rank(std::span<const CorpusInstance> instances) = 0;
};

/// Generation order as the ranking (the "prompt rank" baseline).
class PromptOrderSource : public RankingSource {
 public:
  std::string id() const override { return std::string(kPromptOrderRater); }
  nlohmann::json config() const override;
  RankOutcome rank(std::span<const CorpusInstance> instances) override;
};

/// Ascending perplexity from a scoring endpoint.
class ScorerSource : public RankingSource {
 public:
  ScorerSource(ScorerEndpoint& scorer, std::string prefix, ScoringOptions options,
               std::size_t max_in_flight = 4);
  std::string id() const override { return scorer_.id(); }
  nlohmann::json config() const override;
  RankOutcome rank(std::span<const CorpusInstance> instances) override;

 private:
  ScorerEndpoint& scorer_;
  std::string prefix_;
  ScoringOptions options_;
  std::size_t max_in_flight_;
};

/// Precomputed scores (e.g. image-text alignment) ranked by orientation.
class ExternalScoresSource : public RankingSource {
 public:
  explicit ExternalScoresSource(ExternalScores scores, std::string source_file = {});
  std::string id() const override { return scores_.scorer_id; }
  nlohmann::json config() const override;
  RankOutcome rank(std::span<const CorpusInstance> instances) override;

 private:
  ExternalScores scores_;
  std::string source_file_;
  std::map<std::string, std::size_t> index_;
};

/// Explicit rankings elicited from a chat model.
class ResponseRankSource : public RankingSource {
 public:
  ResponseRankSource(ChatEndpoint& chat, std::string model_name, bool with_image,
                     int max_attempts = 3,
                     std::optional<std::filesystem::path> transcript_file = std::nullopt);
  std::string id() const override { return model_name_; }
  nlohmann::json config() const override;
  RankOutcome rank(std::span<const CorpusInstance> instances) override;

 private:
  ChatEndpoint& chat_;
  std::string model_name_;
  bool with_image_;
  int max_attempts_;
  std::optional<std::filesystem::path> transcript_file_;
};

struct EvalRun {
  std::string run_id;
  std::string source_id;
  Language language = Language::en;
  Threshold threshold;
  std::vector<std::pair<std::string, Correlation>> per_instance;
  Correlation aggregate{0.0};
  std::vector<Exclusion> excluded;
  nlohmann::json config_snapshot;
};

/// Default agreement threshold for evaluation.
inline constexpr double kDefaultThreshold = 0.6;

/// Full effective configuration of a run; its hash is the run id.
nlohmann::json run_config(std::span<const CorpusInstance> corpus, Language language,
                          const RankingSource& source, const Threshold& threshold,
                          const nlohmann::json& extra = nlohmann::json::object());
std::string run_id_for(const nlohmann::json& config);

/// Filters at threshold, ranks the retained instances, and averages
/// model_alignment. Throws Error only when no instance succeeds.
EvalRun evaluate(std::span<const CorpusInstance> corpus, Language language, RankingSource& source,
                 const Threshold& threshold,
                 const nlohmann::json& extra = nlohmann::json::object());

nlohmann::json to_json(const EvalRun& run);
EvalRun eval_run_from_json(const nlohmann::json& j);
/// Canonical byte serialization.
std::string serialize(const EvalRun& run);

/// Path of a run inside an output directory.
std::filesystem::path run_path(const std::filesystem::path& out_dir, const std::string& run_id);
/// Writes out_dir/runs/<run_id>.json. Returns false if an identical run
/// was already stored; throws ConflictError if a different one was.
bool persist_run(const EvalRun& run, const std::filesystem::path& out_dir);
EvalRun load_run(const std::filesystem::path& out_dir, const std::string& run_id);

struct SweepResult {
  std::vector<SweepPoint> points;
  std::vector<Exclusion> excluded;
  std::optional<std::string> source_id;
};

SweepResult sweep(std::span<const CorpusInstance> corpus, RankingSource* source,
                  std::span<const Threshold> thresholds);

/// Coordinates for plotting: x (none as "none"), retained, human, model.
void write_plot_data(const std::filesystem::path& file, std::span<const SweepPoint> points);
std::vector<SweepPoint> read_sweep_table(const std::filesystem::path& file);

enum class ReportFormat { markdown_table, delimited };
ReportFormat parse_report_format(std::string_view text);

/// One row per source (sorted), one column per language/threshold; the
/// best value in each column is flagged. Throws Error on empty input.
std::string report(std::span<const EvalRun> runs, ReportFormat format);

/// Threshold-by-row rendering of labelled sweeps.
std::string report_sweeps(std::span<const std::pair<std::string, std::vector<SweepPoint>>> sweeps,
                          ReportFormat format);

}  // namespace irr
