#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace irr {

inline constexpr std::size_t kReviewsPerImage = 5;
inline constexpr int kSchemaVersion = 1;

/// Reserved rater id for the ranking implied by generation order.
inline constexpr std::string_view kPromptOrderRater = "prompt-order";

enum class Language { en, ja };

std::string to_string(Language lang);
/// Accepts "en"/"ja" in any case.
Language parse_language(std::string_view text);

/// The fifteen image categories, in table order.
const std::array<std::string_view, 15>& category_names();
bool is_known_category(std::string_view name);

/// Generation-order quality labels; declaration order is the prompt rank.
enum class PromptRankLabel {
  objective_reasonable,
  subjective_reasonable,
  objective_unreasonable,
  subjective_unreasonable,
  subjective_with_error,
};

std::string to_string(PromptRankLabel label);
PromptRankLabel parse_prompt_rank_label(std::string_view text);
/// Label for the i-th generated review (0-based position).
PromptRankLabel label_for_position(std::size_t position);

enum class TiePolicy { none, fractional };

using RankVector = std::array<double, kReviewsPerImage>;

struct ReviewText {
  int index = 0;  // 1..5
  std::string body;
  std::optional<PromptRankLabel> prompt_rank_label;

  bool operator==(const ReviewText&) const = default;
};

struct ReviewSet {
  std::string instance_id;
  std::string image_ref;
  std::string category;
  Language language = Language::en;
  std::vector<ReviewText> reviews;

  bool operator==(const ReviewSet&) const = default;
};

/// ranks[i] is the rank given to text i+1.
struct Ranking {
  std::string instance_id;
  std::string rater_id;
  RankVector ranks{};
  TiePolicy tie_policy_used = TiePolicy::none;

  bool operator==(const Ranking&) const = default;
};

struct AnnotationBundle {
  std::string instance_id;
  std::vector<Ranking> rankings;

  std::size_t annotator_count() const noexcept { return rankings.size(); }
  /// Collection protocol asks for at least three annotators per image.
  bool meets_minimum() const noexcept { return rankings.size() >= 3; }

  bool operator==(const AnnotationBundle&) const = default;
};

/// One line of the corpus file.
struct CorpusInstance {
  ReviewSet review_set;
  std::optional<AnnotationBundle> annotations;

  const std::string& id() const noexcept { return review_set.instance_id; }
  bool operator==(const CorpusInstance&) const = default;
};

/// A record rejected during load. line is 1-based; 0 means the manifest.
struct RecordIssue {
  std::size_t line = 0;
  std::string instance_id;
  std::string reason;
};

struct LoadResult {
  std::vector<CorpusInstance> instances;
  std::vector<RecordIssue> issues;
  /// Raw text of rejected lines, parallel to issues (empty for manifest issues).
  std::vector<std::string> rejected_lines;
};

struct Manifest {
  int schema_version = kSchemaVersion;
  Language language = Language::en;
  std::size_t instance_count = 0;
  std::map<std::string, std::size_t> category_counts;
};

/// True when ranks is exactly a permutation of 1..5.
bool is_permutation_rank(const RankVector& ranks);

/// Throws ValidationError describing the first violated invariant.
void validate(const ReviewSet& rs);
void validate(const AnnotationBundle& bundle);
void validate(const CorpusInstance& instance);

/// Records file and manifest for a language inside a corpus directory.
std::filesystem::path records_path(const std::filesystem::path& dir, Language lang);
std::filesystem::path manifest_path(const std::filesystem::path& dir, Language lang);

/// Loads a corpus directory (or a single records file). Invalid records are
/// reported in issues, never dropped silently. Throws Error if path is missing.
LoadResult load_corpus(const std::filesystem::path& path, Language lang);

/// Writes records and manifest. Throws ValidationError on invalid or
/// mixed-language input and Error on an unwritable path.
void save_corpus(const std::vector<CorpusInstance>& instances,
                 const std::filesystem::path& dir, Language lang);

/// Appends rejected lines to a quarantine file next to the corpus.
void write_quarantine(const LoadResult& result, const std::filesystem::path& file);

Manifest make_manifest(const std::vector<CorpusInstance>& instances, Language lang);

/// Prompt-rank ranking: generation order 1..5 over text indices.
Ranking prompt_order_ranking(const ReviewSet& rs);

nlohmann::json to_json(const CorpusInstance& instance);
CorpusInstance instance_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Ranking& ranking);
nlohmann::json to_json(const Manifest& manifest);
Manifest manifest_from_json(const nlohmann::json& j);

}  // namespace irr
