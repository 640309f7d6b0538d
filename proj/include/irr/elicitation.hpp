#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "irr/corpus.hpp"
#include "irr/error.hpp"

namespace irr {

enum class TemplateId { generate_reviews, rank_with_image, rank_text_only, perplexity_prefix };

/// Fixed prompt text. Bodies are constant; only the JA slots are empty.
struct PromptTemplate {
  TemplateId id;
  Language language;
  std::string_view body;
};

/// Throws ValidationError when the slot has no text (all JA templates).
PromptTemplate prompt_template(TemplateId id, Language language = Language::en);

/// Instruction shown to human annotators. Also the criteria block of the
/// image ranking prompt.
std::string_view annotator_instruction();

std::string build_generation_prompt();

/// Ranking prompt for a chat model. The image variant is the annotator
/// instruction, the five texts, and the answer format; the text-only
/// variant asks for quality ranking of the embedded texts.
std::string build_rank_prompt(const ReviewSet& rs, bool with_image);

/// Splits a generation response into five reviews labelled by position.
/// Throws ParseError ("expected 5, found N") carrying the raw response.
std::vector<ReviewText> parse_five_reviews(std::string_view raw);

/// Why a ranking response was rejected.
enum class RankParseFailure {
  unparseable_line,
  index_out_of_range,
  duplicate_index,
  missing_index,
  rank_out_of_range,
  not_a_permutation,
};

class RankParseError : public ParseError {
 public:
  RankParseError(RankParseFailure kind, std::string message, std::string raw)
      : ParseError(std::move(message), std::move(raw)), kind_(kind) {}
  RankParseFailure kind() const noexcept { return kind_; }

 private:
  RankParseFailure kind_;
};

/// Parses "text{i}:{k}{st|nd|rd|th} place" lines (any order, any case,
/// spaces allowed around ':') into ranks[i-1] = k. Returned rater and
/// instance ids are empty.
Ranking parse_rank_response(std::string_view raw);

/// Inverse of parse_rank_response, in the exemplar's layout.
std::string format_rank_response(const RankVector& ranks);

/// One-line reminder appended when a response fails to parse.
std::string_view format_reminder();

struct ChatRequest {
  std::optional<std::string> system;
  std::string user;
  std::optional<std::string> image_ref;
};

struct ChatResponse {
  std::string text;
};

class ChatEndpoint {
 public:
  virtual ~ChatEndpoint() = default;
  virtual std::string id() const = 0;
  /// Throws EndpointError on transport failure.
  virtual ChatResponse chat(const ChatRequest& request) = 0;
};

/// Audit record of every prompt/response exchanged for one instance.
struct ElicitationTranscript {
  std::string instance_id;
  std::string kind;  // "generate" or "rank"
  std::string endpoint_id;
  std::vector<std::string> prompts;
  std::vector<std::string> responses;
  int attempts = 0;
  bool succeeded = false;
  std::string error;
};

nlohmann::json to_json(const ElicitationTranscript& t);

/// Appends one JSON line per transcript.
void append_transcript(const std::filesystem::path& file, const ElicitationTranscript& t);

class UnrankedInstanceError : public Error {
 public:
  UnrankedInstanceError(std::string instance_id, std::string cause, int attempts)
      : Error("instance '" + instance_id + "' unranked after " + std::to_string(attempts) +
              " attempt(s): " + cause),
        instance_id_(std::move(instance_id)),
        cause_(std::move(cause)),
        attempts_(attempts) {}

  const std::string& instance_id() const noexcept { return instance_id_; }
  const std::string& cause() const noexcept { return cause_; }
  int attempts() const noexcept { return attempts_; }

 private:
  std::string instance_id_;
  std::string cause_;
  int attempts_;
};

/// Asks a chat model to rank the five texts, re-prompting on malformed
/// answers. The result is tie-free with rater_id = model_name.
Ranking response_rank(const ReviewSet& rs, ChatEndpoint& chat, bool with_image, int max_attempts,
                      const std::string& model_name, ElicitationTranscript* transcript = nullptr);

/// Generates the five review texts for one image.
ReviewSet generate_review_set(std::string instance_id, std::string image_ref, std::string category,
                              ChatEndpoint& chat, ElicitationTranscript* transcript = nullptr);

}  // namespace irr
