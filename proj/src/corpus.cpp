#include "irr/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "irr/error.hpp"

namespace irr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::string_view, 15> kCategories = {
    "Animals",
    "Artwork",
    "Culture, entertainment, and lifestyle",
    "Currency",
    "Diagrams, drawings, and maps",
    "Engineering and technology",
    "Natural phenomena",
    "People",
    "Places",
    "Plants",
    "Sciences",
    "Space",
    "Vehicles",
    "Other lifeforms",
    "Other",
};

constexpr std::array<std::string_view, 5> kLabelNames = {
    "objective-reasonable",   "subjective-reasonable",  "objective-unreasonable",
    "subjective-unreasonable", "subjective-with-error",
};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

json rank_value(double r) {
  double whole = 0.0;
  if (std::modf(r, &whole) == 0.0 && std::abs(r) < 1e9) return static_cast<long long>(whole);
  return r;
}

}  // namespace

std::string to_string(Language lang) { return lang == Language::en ? "EN" : "JA"; }

Language parse_language(std::string_view text) {
  const auto l = lower(text);
  if (l == "en") return Language::en;
  if (l == "ja" || l == "jp") return Language::ja;
  throw ValidationError("unknown language '" + std::string(text) + "'");
}

const std::array<std::string_view, 15>& category_names() { return kCategories; }

bool is_known_category(std::string_view name) {
  return std::find(kCategories.begin(), kCategories.end(), name) != kCategories.end();
}

std::string to_string(PromptRankLabel label) {
  return std::string(kLabelNames[static_cast<std::size_t>(label)]);
}

PromptRankLabel parse_prompt_rank_label(std::string_view text) {
  const auto l = lower(text);
  for (std::size_t i = 0; i < kLabelNames.size(); ++i) {
    if (l == kLabelNames[i]) return static_cast<PromptRankLabel>(i);
  }
  throw ValidationError("unknown prompt_rank_label '" + std::string(text) + "'");
}

PromptRankLabel label_for_position(std::size_t position) {
  if (position >= kLabelNames.size()) {
    throw ValidationError("no prompt-rank label for position " + std::to_string(position));
  }
  return static_cast<PromptRankLabel>(position);
}

bool is_permutation_rank(const RankVector& ranks) {
  std::array<bool, kReviewsPerImage + 1> seen{};
  for (double r : ranks) {
    if (r != std::floor(r) || r < 1 || r > static_cast<double>(kReviewsPerImage)) return false;
    auto k = static_cast<std::size_t>(r);
    if (seen[k]) return false;
    seen[k] = true;
  }
  return true;
}

void validate(const ReviewSet& rs) {
  if (rs.instance_id.empty()) throw ValidationError("empty instance_id");
  if (rs.image_ref.empty()) throw ValidationError("empty image_ref");
  if (!is_known_category(rs.category)) {
    throw ValidationError("unknown category '" + rs.category + "'");
  }
  if (rs.reviews.size() != kReviewsPerImage) {
    throw ValidationError("expected 5 reviews, found " + std::to_string(rs.reviews.size()));
  }
  std::array<bool, kReviewsPerImage + 1> seen_index{};
  std::set<PromptRankLabel> seen_labels;
  for (const auto& review : rs.reviews) {
    if (review.index < 1 || review.index > static_cast<int>(kReviewsPerImage)) {
      throw ValidationError("review index " + std::to_string(review.index) + " outside 1..5");
    }
    if (seen_index[review.index]) {
      throw ValidationError("duplicate review index " + std::to_string(review.index));
    }
    seen_index[review.index] = true;
    if (blank(review.body)) {
      throw ValidationError("review " + std::to_string(review.index) + " has an empty body");
    }
    if (review.prompt_rank_label && !seen_labels.insert(*review.prompt_rank_label).second) {
      throw ValidationError("duplicate prompt_rank_label " + to_string(*review.prompt_rank_label));
    }
  }
}

void validate(const AnnotationBundle& bundle) {
  std::set<std::string> raters;
  for (const auto& r : bundle.rankings) {
    if (r.instance_id != bundle.instance_id) {
      throw ValidationError("ranking for '" + r.instance_id + "' inside bundle '" +
                            bundle.instance_id + "'");
    }
    if (r.rater_id.empty()) throw ValidationError("empty rater_id");
    if (!raters.insert(r.rater_id).second) {
      throw ValidationError("duplicate rater_id '" + r.rater_id + "'");
    }
    if (r.tie_policy_used != TiePolicy::none || !is_permutation_rank(r.ranks)) {
      throw ValidationError("ranking by '" + r.rater_id + "' is not a permutation of 1..5");
    }
  }
}

void validate(const CorpusInstance& instance) {
  validate(instance.review_set);
  if (instance.annotations) {
    if (instance.annotations->instance_id != instance.id()) {
      throw ValidationError("annotation bundle instance_id mismatch");
    }
    validate(*instance.annotations);
  }
}

fs::path records_path(const fs::path& dir, Language lang) {
  return dir / ("records." + lower(to_string(lang)) + ".jsonl");
}

fs::path manifest_path(const fs::path& dir, Language lang) {
  return dir / ("manifest." + lower(to_string(lang)) + ".json");
}

json to_json(const Ranking& ranking) {
  json ranks = json::array();
  for (double r : ranking.ranks) ranks.push_back(rank_value(r));
  return json{{"rater_id", ranking.rater_id}, {"ranks", std::move(ranks)}};
}

json to_json(const CorpusInstance& instance) {
  const auto& rs = instance.review_set;
  json reviews = json::array();
  for (const auto& review : rs.reviews) {
    json r{{"index", review.index}, {"body", review.body}};
    if (review.prompt_rank_label) r["prompt_rank_label"] = to_string(*review.prompt_rank_label);
    reviews.push_back(std::move(r));
  }
  json j{{"instance_id", rs.instance_id},
         {"image_ref", rs.image_ref},
         {"category", rs.category},
         {"language", to_string(rs.language)},
         {"reviews", std::move(reviews)}};
  if (instance.annotations) {
    json ann = json::array();
    for (const auto& r : instance.annotations->rankings) ann.push_back(to_json(r));
    j["annotations"] = std::move(ann);
  }
  return j;
}

CorpusInstance instance_from_json(const json& j) {
  CorpusInstance out;
  auto& rs = out.review_set;
  try {
    rs.instance_id = j.at("instance_id").get<std::string>();
    rs.image_ref = j.at("image_ref").get<std::string>();
    rs.category = j.at("category").get<std::string>();
    rs.language = parse_language(j.at("language").get<std::string>());
    for (const auto& r : j.at("reviews")) {
      ReviewText review;
      review.index = r.at("index").get<int>();
      review.body = r.at("body").get<std::string>();
      if (r.contains("prompt_rank_label") && !r["prompt_rank_label"].is_null()) {
        review.prompt_rank_label =
            parse_prompt_rank_label(r["prompt_rank_label"].get<std::string>());
      }
      rs.reviews.push_back(std::move(review));
    }
    if (j.contains("annotations") && !j["annotations"].is_null()) {
      AnnotationBundle bundle{rs.instance_id, {}};
      for (const auto& a : j["annotations"]) {
        Ranking r;
        r.instance_id = rs.instance_id;
        r.rater_id = a.at("rater_id").get<std::string>();
        const auto& ranks = a.at("ranks");
        if (!ranks.is_array() || ranks.size() != kReviewsPerImage) {
          throw ValidationError("ranking by '" + r.rater_id + "' must have 5 ranks");
        }
        for (std::size_t i = 0; i < kReviewsPerImage; ++i) r.ranks[i] = ranks[i].get<double>();
        bundle.rankings.push_back(std::move(r));
      }
      out.annotations = std::move(bundle);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("schema: ") + e.what());
  }
  return out;
}

json to_json(const Manifest& manifest) {
  json counts = json::object();
  for (const auto& [name, n] : manifest.category_counts) counts[name] = n;
  return json{{"schema_version", manifest.schema_version},
              {"language", to_string(manifest.language)},
              {"instance_count", manifest.instance_count},
              {"category_counts", std::move(counts)}};
}

Manifest manifest_from_json(const json& j) {
  Manifest m;
  m.schema_version = j.at("schema_version").get<int>();
  m.language = parse_language(j.at("language").get<std::string>());
  m.instance_count = j.at("instance_count").get<std::size_t>();
  for (const auto& [name, n] : j.at("category_counts").items()) {
    m.category_counts[name] = n.get<std::size_t>();
  }
  return m;
}

Manifest make_manifest(const std::vector<CorpusInstance>& instances, Language lang) {
  Manifest m;
  m.language = lang;
  m.instance_count = instances.size();
  for (const auto& inst : instances) ++m.category_counts[inst.review_set.category];
  return m;
}

LoadResult load_corpus(const fs::path& path, Language lang) {
  if (!fs::exists(path)) throw Error("corpus path does not exist: " + path.string());

  LoadResult result;
  fs::path records = path;
  std::optional<fs::path> manifest;
  if (fs::is_directory(path)) {
    records = records_path(path, lang);
    if (fs::exists(manifest_path(path, lang))) manifest = manifest_path(path, lang);
    if (!fs::exists(records)) return result;
  }

  std::ifstream in(records);
  if (!in) throw Error("cannot read " + records.string());

  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  auto reject = [&](std::string id, std::string reason) {
    result.issues.push_back({line_no, std::move(id), std::move(reason)});
    result.rejected_lines.push_back(line);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (blank(line)) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      reject({}, "malformed record at line " + std::to_string(line_no) + ": " + e.what());
      continue;
    }
    std::string id;
    if (j.is_object() && j.contains("instance_id") && j["instance_id"].is_string()) {
      id = j["instance_id"].get<std::string>();
    }
    try {
      auto instance = instance_from_json(j);
      validate(instance);
      if (instance.review_set.language != lang) {
        throw ValidationError("record language " + to_string(instance.review_set.language) +
                              " does not match requested " + to_string(lang));
      }
      if (!seen_ids.insert(id).second) {
        throw ValidationError("duplicate instance_id '" + id + "'");
      }
      result.instances.push_back(std::move(instance));
    } catch (const Error& e) {
      reject(id, e.what());
    }
  }

  if (manifest) {
    std::ifstream min(*manifest);
    try {
      auto m = manifest_from_json(json::parse(min));
      if (m.schema_version != kSchemaVersion) {
        result.issues.push_back(
            {0, {}, "manifest schema_version " + std::to_string(m.schema_version)});
        result.rejected_lines.emplace_back();
      }
      // The manifest counts every record written, valid or not.
      std::size_t records_seen = result.instances.size();
      for (const auto& issue : result.issues) records_seen += issue.line > 0 ? 1 : 0;
      if (m.instance_count != records_seen) {
        result.issues.push_back({0, {}, "manifest instance_count " +
                                            std::to_string(m.instance_count) + " but " +
                                            std::to_string(records_seen) + " records"});
        result.rejected_lines.emplace_back();
      }
    } catch (const std::exception& e) {
      result.issues.push_back({0, {}, std::string("unreadable manifest: ") + e.what()});
      result.rejected_lines.emplace_back();
    }
  }
  return result;
}

void save_corpus(const std::vector<CorpusInstance>& instances, const fs::path& dir,
                 Language lang) {
  std::set<std::string> ids;
  for (const auto& inst : instances) {
    validate(inst);
    if (inst.review_set.language != lang) {
      throw ValidationError("instance '" + inst.id() + "' is not " + to_string(lang));
    }
    if (!ids.insert(inst.id()).second) {
      throw ValidationError("duplicate instance_id '" + inst.id() + "'");
    }
  }

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create corpus directory " + dir.string());

  const auto records = records_path(dir, lang);
  const auto tmp = fs::path(records.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write " + records.string());
    for (const auto& inst : instances) out << to_json(inst).dump() << '\n';
    if (!out.flush()) throw Error("write failed for " + records.string());
  }
  fs::rename(tmp, records);

  std::ofstream mout(manifest_path(dir, lang), std::ios::trunc);
  if (!mout) throw Error("cannot write manifest in " + dir.string());
  mout << to_json(make_manifest(instances, lang)).dump(2) << '\n';
}

void write_quarantine(const LoadResult& result, const fs::path& file) {
  std::ofstream out(file, std::ios::app);
  if (!out) throw Error("cannot write quarantine file " + file.string());
  for (std::size_t i = 0; i < result.issues.size(); ++i) {
    const auto& issue = result.issues[i];
    if (issue.line == 0) continue;
    out << json{{"line", issue.line},
                {"instance_id", issue.instance_id},
                {"reason", issue.reason},
                {"record", result.rejected_lines[i]}}
               .dump()
        << '\n';
  }
}

Ranking prompt_order_ranking(const ReviewSet& rs) {
  Ranking r;
  r.instance_id = rs.instance_id;
  r.rater_id = std::string(kPromptOrderRater);
  const bool labelled = std::all_of(rs.reviews.begin(), rs.reviews.end(),
                                    [](const ReviewText& t) { return t.prompt_rank_label; });
  for (const auto& review : rs.reviews) {
    const auto slot = static_cast<std::size_t>(review.index - 1);
    r.ranks[slot] = labelled ? static_cast<double>(*review.prompt_rank_label) + 1.0
                             : static_cast<double>(review.index);
  }
  return r;
}

}  // namespace irr
