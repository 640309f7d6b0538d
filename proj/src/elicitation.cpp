#include "irr/elicitation.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <regex>
#include <sstream>

#include "irr/scoring.hpp"

namespace irr {

using nlohmann::json;

namespace {

#define IRR_INSTRUCTION                                                                          \
  "Below are the images and their review texts. Please rank the review text of each image "     \
  "from 1 to 5, in order of appropriateness. Please note that the numbers from 1 to 5 are not " \
  "scores but rankings, and the smaller the number, the more appropriate it is. There should "  \
  "be no ties, and each rank from 1 to 5 should always appear once.\n"                          \
  "\n"                                                                                           \
  "Please judge the appropriateness by the following aspects in the following order. That "     \
  "is, first, rank the texts by truthfulness. If there are equally truthful texts, rank them "  \
  "by consistency. Similarly, if they are equal also in consistency, rank them by "             \
  "informativeness; if they are equal also in it, rank them by objectivity; if they are "       \
  "equal also in it, rank them by fluency.\n"                                                    \
  "\n"                                                                                           \
  "1. Truthfulness: Is it free of false information?\n"                                          \
  "2. Consistency: Does it correspond to the image?\n"                                           \
  "3. Informativeness: Does it describe detailed information or features of the image?\n"       \
  "4. Objectivity: Is it an objective description?\n"                                            \
  "5. Fluency: Is it grammatically correct?\n"                                                   \
  "\n"                                                                                           \
  "If the text contains unfamiliar information, you may use a dictionary or search engine. "    \
  "However, please do not use a generative AI such as ChatGPT or image search."

#define IRR_ANSWER_FORMAT                           \
  "Do not include the reason for ranking.\n"        \
  "Absolutely respond in the following format:\n"   \
  "\n"                                              \
  "text1:2nd place\n"                               \
  "text2:3rd place\n"                               \
  "text3:1st place\n"                               \
  "text4:5th place\n"                               \
  "text5:4th place"

constexpr std::string_view kInstruction = IRR_INSTRUCTION;

constexpr std::string_view kRankWithImage = IRR_INSTRUCTION "\n" IRR_ANSWER_FORMAT;

constexpr std::string_view kRankTextOnly =
    "Please rank the review text by quality.\n"
    "\n"
    "text1:review text1\n"
    "text2:review text2\n"
    "text3:review text3\n"
    "text4:review text4\n"
    "text5:review text5\n"
    "\n" IRR_ANSWER_FORMAT;

constexpr std::string_view kGenerateReviews =
    "You are a perceptive and insightful reviewer. Your task is to write five distinct review "
    "texts that discuss the strengths and areas for improvement of the given image, while "
    "following the constraints below:\n"
    "\n"
    "Guidelines:\n"
    "1. Each review text should present unique content.\n"
    "2. Ensure that the length of each review is approximately equal.\n"
    "3. Do not use bullet points or lists; maintain a cohesive narrative.\n"
    "4. Write reviews in the following order: \"Objective and reasonable,\" \"Subjective but "
    "reasonable,\" \"Objective but unreasonable,\" \"Subjective and unreasonable,\" and "
    "\"Subjective and containing an error.\"\n"
    "5. Each review should address both the strengths and potential areas for improvement of "
    "the image.\n"
    "6. If no improvements are necessary, explicitly state this within the review.\n"
    "\n"
    "Your reviews will contribute to research purposes only and should reflect careful thought "
    "and analysis.";

#undef IRR_INSTRUCTION
#undef IRR_ANSWER_FORMAT

constexpr std::string_view kAnswerFormatHeader = "Do not include the reason for ranking.";

constexpr std::string_view kReminder =
    "Reminder: answer with exactly five lines such as \"text1:2nd place\", using each rank from "
    "1 to 5 once.";

constexpr std::array<std::string_view, 5> kOrdinalSuffix = {"st", "nd", "rd", "th", "th"};

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> lines_of(std::string_view raw) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : raw) {
    if (c == '\n') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

std::string one_line(std::string_view body) {
  std::string out;
  for (char c : trim(body)) out.push_back(c == '\n' || c == '\r' ? ' ' : c);
  return out;
}

std::string texts_block(const ReviewSet& rs) {
  std::array<std::string, kReviewsPerImage> bodies;
  for (const auto& review : rs.reviews) bodies[review.index - 1] = one_line(review.body);
  std::string out;
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    out += "text" + std::to_string(i + 1) + ":" + bodies[i];
    if (i + 1 < bodies.size()) out += '\n';
  }
  return out;
}

const std::regex& enumeration_marker() {
  static const std::regex re(R"(^\s*(?:\*\*)?\s*\(?([1-9])\s*[.):](?!\d))");
  return re;
}

std::string strip_review_heading(const std::string& block) {
  static const std::regex marker(R"(^\s*(?:\*\*)?\s*\(?[1-9]\s*[.):]\s*)");
  static const std::regex label(
      R"(^(?:\*\*)?\s*(?:objective and reasonable|subjective but reasonable|objective but unreasonable|subjective and unreasonable|subjective and containing an error)\s*(?:\*\*)?\s*:\s*(?:\*\*)?\s*)",
      std::regex::icase);
  std::string out = std::regex_replace(block, marker, "", std::regex_constants::format_first_only);
  out = std::regex_replace(out, label, "", std::regex_constants::format_first_only);
  return trim(out);
}

[[noreturn]] void rank_fail(RankParseFailure kind, std::string message, std::string_view raw) {
  throw RankParseError(kind, std::move(message), std::string(raw));
}

}  // namespace

PromptTemplate prompt_template(TemplateId id, Language language) {
  if (language == Language::ja) {
    throw ValidationError("no Japanese text is available for this prompt template");
  }
  switch (id) {
    case TemplateId::generate_reviews:
      return {id, language, kGenerateReviews};
    case TemplateId::rank_with_image:
      return {id, language, kRankWithImage};
    case TemplateId::rank_text_only:
      return {id, language, kRankTextOnly};
    case TemplateId::perplexity_prefix:
      return {id, language, kPerplexityPrefix};
  }
  throw ValidationError("unknown template id");
}

std::string_view annotator_instruction() { return kInstruction; }

std::string build_generation_prompt() { return std::string(kGenerateReviews); }

std::string build_rank_prompt(const ReviewSet& rs, bool with_image) {
  validate(rs);
  const std::string_view answer = kRankWithImage.substr(kInstruction.size() + 1);
  if (with_image) {
    return std::string(kInstruction) + "\n\n" + texts_block(rs) + "\n\n" + std::string(answer);
  }
  const auto body_start = kRankTextOnly.find("text1:");
  const auto body_end = kRankTextOnly.find(kAnswerFormatHeader);
  return std::string(kRankTextOnly.substr(0, body_start)) + texts_block(rs) + "\n\n" +
         std::string(kRankTextOnly.substr(body_end));
}

std::vector<ReviewText> parse_five_reviews(std::string_view raw) {
  const auto lines = lines_of(raw);

  std::vector<std::string> blocks;
  std::string cur;
  for (const auto& line : lines) {
    if (trim(line).empty()) {
      if (!cur.empty()) blocks.push_back(std::move(cur));
      cur.clear();
    } else {
      if (!cur.empty()) cur += '\n';
      cur += line;
    }
  }
  if (!cur.empty()) blocks.push_back(std::move(cur));

  std::vector<std::string> segments;
  if (blocks.size() == kReviewsPerImage) {
    segments = blocks;
  } else {
    // Fall back to enumeration markers "1." .. "5." at line starts.
    std::vector<std::string> numbered;
    int expected = 1;
    bool sequential = true;
    for (const auto& line : lines) {
      std::smatch m;
      if (std::regex_search(line, m, enumeration_marker())) {
        if (std::stoi(m[1]) != expected++) sequential = false;
        numbered.push_back(line);
      } else if (!numbered.empty()) {
        numbered.back() += '\n';
        numbered.back() += line;
      }
    }
    if (numbered.size() == kReviewsPerImage && sequential) {
      segments = std::move(numbered);
    } else {
      const auto found = numbered.empty() ? blocks.size() : numbered.size();
      throw ParseError("expected 5, found " + std::to_string(found), std::string(raw));
    }
  }

  std::vector<ReviewText> out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    ReviewText review;
    review.index = static_cast<int>(i + 1);
    review.body = strip_review_heading(segments[i]);
    if (review.body.empty()) {
      throw ParseError("review " + std::to_string(i + 1) + " is empty", std::string(raw));
    }
    review.prompt_rank_label = label_for_position(i);
    out.push_back(std::move(review));
  }
  return out;
}

Ranking parse_rank_response(std::string_view raw) {
  static const std::regex line_re(R"(^\s*text\s*(\d+)\s*:\s*(\d+)\s*(st|nd|rd|th)\s*place\s*$)",
                                  std::regex::icase);
  std::array<std::optional<int>, kReviewsPerImage> ranks;
  for (const auto& line : lines_of(raw)) {
    if (trim(line).empty()) continue;
    std::smatch m;
    if (!std::regex_match(line, m, line_re)) {
      rank_fail(RankParseFailure::unparseable_line, "unparseable line '" + trim(line) + "'", raw);
    }
    const int index = std::stoi(m[1]);
    const int rank = std::stoi(m[2]);
    if (index < 1 || index > static_cast<int>(kReviewsPerImage)) {
      rank_fail(RankParseFailure::index_out_of_range,
                "text index " + std::to_string(index) + " outside 1..5", raw);
    }
    if (ranks[index - 1]) {
      rank_fail(RankParseFailure::duplicate_index,
                "duplicate text index " + std::to_string(index), raw);
    }
    if (rank < 1 || rank > static_cast<int>(kReviewsPerImage)) {
      rank_fail(RankParseFailure::rank_out_of_range,
                "rank " + std::to_string(rank) + " outside 1..5", raw);
    }
    ranks[index - 1] = rank;
  }

  Ranking r;
  for (std::size_t i = 0; i < kReviewsPerImage; ++i) {
    if (!ranks[i]) {
      rank_fail(RankParseFailure::missing_index, "missing text index " + std::to_string(i + 1),
                raw);
    }
    r.ranks[i] = *ranks[i];
  }
  if (!is_permutation_rank(r.ranks)) {
    rank_fail(RankParseFailure::not_a_permutation, "ranks are not a permutation of 1..5", raw);
  }
  r.tie_policy_used = TiePolicy::none;
  return r;
}

std::string format_rank_response(const RankVector& ranks) {
  std::string out;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    const auto k = static_cast<int>(ranks[i]);
    out += "text" + std::to_string(i + 1) + ":" + std::to_string(k) +
           std::string(kOrdinalSuffix[std::clamp(k, 1, 5) - 1]) + " place";
    if (i + 1 < ranks.size()) out += '\n';
  }
  return out;
}

std::string_view format_reminder() { return kReminder; }

json to_json(const ElicitationTranscript& t) {
  return json{{"instance_id", t.instance_id}, {"kind", t.kind},
              {"endpoint_id", t.endpoint_id}, {"prompts", t.prompts},
              {"responses", t.responses},     {"attempts", t.attempts},
              {"succeeded", t.succeeded},     {"error", t.error}};
}

void append_transcript(const std::filesystem::path& file, const ElicitationTranscript& t) {
  std::ofstream out(file, std::ios::app);
  if (!out) throw Error("cannot write transcript file " + file.string());
  out << to_json(t).dump() << '\n';
}

Ranking response_rank(const ReviewSet& rs, ChatEndpoint& chat, bool with_image, int max_attempts,
                      const std::string& model_name, ElicitationTranscript* transcript) {
  if (max_attempts < 1) throw ValidationError("max_attempts must be at least 1");
  ElicitationTranscript local;
  auto& log = transcript ? *transcript : local;
  log = ElicitationTranscript{rs.instance_id, "rank", chat.id(), {}, {}, 0, false, {}};

  const std::string base = build_rank_prompt(rs, with_image);
  std::string prompt = base;
  std::string last_error;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    ChatRequest req{std::nullopt, prompt, std::nullopt};
    if (with_image) req.image_ref = rs.image_ref;
    log.prompts.push_back(prompt);
    log.attempts = attempt;
    ChatResponse resp;
    try {
      resp = chat.chat(req);
    } catch (const EndpointError& e) {
      log.error = std::string("endpoint: ") + e.what();
      throw UnrankedInstanceError(rs.instance_id, log.error, attempt);
    }
    log.responses.push_back(resp.text);
    try {
      Ranking r = parse_rank_response(resp.text);
      r.instance_id = rs.instance_id;
      r.rater_id = model_name;
      log.succeeded = true;
      return r;
    } catch (const RankParseError& e) {
      last_error = e.what();
    }
    prompt = base + "\n\n" + std::string(kReminder);
  }
  log.error = "parse: " + last_error;
  throw UnrankedInstanceError(rs.instance_id, log.error, max_attempts);
}

ReviewSet generate_review_set(std::string instance_id, std::string image_ref, std::string category,
                              ChatEndpoint& chat, ElicitationTranscript* transcript) {
  ElicitationTranscript local;
  auto& log = transcript ? *transcript : local;
  log = ElicitationTranscript{instance_id, "generate", chat.id(), {}, {}, 1, false, {}};

  const auto prompt = build_generation_prompt();
  log.prompts.push_back(prompt);
  const auto resp = chat.chat(ChatRequest{std::nullopt, prompt, image_ref});
  log.responses.push_back(resp.text);

  ReviewSet rs{std::move(instance_id), std::move(image_ref), std::move(category), Language::en,
               {}};
  try {
    rs.reviews = parse_five_reviews(resp.text);
  } catch (const ParseError& e) {
    log.error = e.what();
    throw;
  }
  validate(rs);
  log.succeeded = true;
  return rs;
}

}  // namespace irr
