#include "irr/harness.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

#include "irr/error.hpp"
#include "irr/hashing.hpp"

namespace irr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string corpus_hash(std::span<const CorpusInstance> corpus) {
  std::string material;
  for (const auto& inst : corpus) {
    material += to_json(inst).dump();
    material += '\n';
  }
  return sha256_hex(material);
}

json exclusion_json(const Exclusion& e) {
  return json{{"instance_id", e.instance_id}, {"code", e.code}, {"detail", e.detail}};
}

std::string fixed3(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << v;
  return os.str();
}

}  // namespace

json PromptOrderSource::config() const { return json{{"kind", "prompt_order"}}; }

RankOutcome PromptOrderSource::rank(std::span<const CorpusInstance> instances) {
  RankOutcome out;
  for (const auto& inst : instances) {
    out.rankings.emplace(inst.id(), prompt_order_ranking(inst.review_set));
  }
  return out;
}

ScorerSource::ScorerSource(ScorerEndpoint& scorer, std::string prefix, ScoringOptions options,
                           std::size_t max_in_flight)
    : scorer_(scorer),
      prefix_(std::move(prefix)),
      options_(options),
      max_in_flight_(max_in_flight) {}

json ScorerSource::config() const {
  return json{{"kind", "scorer"},
              {"scorer_id", scorer_.id()},
              {"multimodal", scorer_.multimodal()},
              {"prefix", prefix_},
              {"retries", options_.retry.retries}};
}

RankOutcome ScorerSource::rank(std::span<const CorpusInstance> instances) {
  std::vector<ReviewSet> sets;
  for (const auto& inst : instances) sets.push_back(inst.review_set);
  auto scored = score_all(sets, scorer_, prefix_, options_, max_in_flight_);
  RankOutcome out;
  for (const auto& sv : scored.scored) out.rankings.emplace(sv.instance_id, rank_from_scores(sv));
  for (auto& [id, cause] : scored.unscored) out.failures.push_back({id, "unscored", cause});
  return out;
}

ExternalScoresSource::ExternalScoresSource(ExternalScores scores, std::string source_file)
    : scores_(std::move(scores)), source_file_(std::move(source_file)) {
  for (std::size_t i = 0; i < scores_.vectors.size(); ++i) {
    index_[scores_.vectors[i].instance_id] = i;
  }
}

json ExternalScoresSource::config() const {
  json digest = json::array();
  for (const auto& sv : scores_.vectors) digest.push_back(json{{sv.instance_id, sv.scores}});
  return json{{"kind", "external_scores"},
              {"scorer_id", scores_.scorer_id},
              {"file", source_file_},
              {"scores_sha256", sha256_hex(digest.dump())}};
}

RankOutcome ExternalScoresSource::rank(std::span<const CorpusInstance> instances) {
  RankOutcome out;
  for (const auto& inst : instances) {
    auto it = index_.find(inst.id());
    if (it == index_.end()) {
      out.failures.push_back({inst.id(), "missing_scores", "no row in score file"});
      continue;
    }
    out.rankings.emplace(inst.id(), rank_from_scores(scores_.vectors[it->second]));
  }
  return out;
}

ResponseRankSource::ResponseRankSource(ChatEndpoint& chat, std::string model_name,
                                       bool with_image, int max_attempts,
                                       std::optional<fs::path> transcript_file)
    : chat_(chat),
      model_name_(std::move(model_name)),
      with_image_(with_image),
      max_attempts_(max_attempts),
      transcript_file_(std::move(transcript_file)) {}

json ResponseRankSource::config() const {
  return json{{"kind", "response_rank"},
              {"model", model_name_},
              {"endpoint_id", chat_.id()},
              {"with_image", with_image_},
              {"max_attempts", max_attempts_}};
}

RankOutcome ResponseRankSource::rank(std::span<const CorpusInstance> instances) {
  RankOutcome out;
  for (const auto& inst : instances) {
    ElicitationTranscript transcript;
    try {
      out.rankings.emplace(inst.id(), response_rank(inst.review_set, chat_, with_image_,
                                                    max_attempts_, model_name_, &transcript));
    } catch (const UnrankedInstanceError& e) {
      out.failures.push_back({inst.id(), "unranked", e.cause()});
    }
    if (transcript_file_) append_transcript(*transcript_file_, transcript);
  }
  return out;
}

json run_config(std::span<const CorpusInstance> corpus, Language language,
                const RankingSource& source, const Threshold& threshold, const json& extra) {
  return json{{"source", source.config()},
              {"source_id", source.id()},
              {"language", to_string(language)},
              {"threshold", threshold.to_string()},
              {"corpus", json{{"instance_count", corpus.size()},
                              {"sha256", corpus_hash(corpus)}}},
              {"extra", extra}};
}

std::string run_id_for(const json& config) { return sha256_hex(config.dump()).substr(0, 16); }

EvalRun evaluate(std::span<const CorpusInstance> corpus, Language language, RankingSource& source,
                 const Threshold& threshold, const json& extra) {
  EvalRun run;
  run.config_snapshot = run_config(corpus, language, source, threshold, extra);
  run.run_id = run_id_for(run.config_snapshot);
  run.source_id = source.id();
  run.language = language;
  run.threshold = threshold;

  std::vector<CorpusInstance> retained;
  std::map<std::string, AgreementRecord> pairs;
  for (const auto& inst : corpus) {
    const auto n = inst.annotations ? inst.annotations->annotator_count() : 0;
    if (n < 2) {
      run.excluded.push_back(
          {inst.id(), "insufficient_annotations", std::to_string(n) + " annotation(s)"});
      continue;
    }
    auto rec = best_pair(*inst.annotations);
    if (!threshold.admits(rec.rho_pair.value())) {
      std::ostringstream detail;
      detail << "best-pair rho " << rec.rho_pair.value();
      run.excluded.push_back({inst.id(), "below_threshold", detail.str()});
      continue;
    }
    pairs.emplace(inst.id(), std::move(rec));
    retained.push_back(inst);
  }

  auto outcome = source.rank(retained);
  std::map<std::string, Exclusion> failures;
  for (auto& f : outcome.failures) failures.emplace(f.instance_id, std::move(f));

  std::vector<Correlation> values;
  for (const auto& inst : retained) {
    if (auto f = failures.find(inst.id()); f != failures.end()) {
      run.excluded.push_back(f->second);
      continue;
    }
    auto r = outcome.rankings.find(inst.id());
    if (r == outcome.rankings.end()) {
      run.excluded.push_back({inst.id(), "unranked", "source returned no ranking"});
      continue;
    }
    const auto c = model_alignment(r->second, *inst.annotations, pairs.at(inst.id()));
    run.per_instance.emplace_back(inst.id(), c);
    values.push_back(c);
  }
  if (values.empty()) {
    throw Error("evaluation of '" + source.id() + "' produced no scored instances (" +
                std::to_string(run.excluded.size()) + " excluded)");
  }
  run.aggregate = aggregate_model_score(values);
  return run;
}

json to_json(const EvalRun& run) {
  json per = json::array();
  for (const auto& [id, c] : run.per_instance) {
    per.push_back(json{{"instance_id", id}, {"rho", c.value()}});
  }
  json excluded = json::array();
  for (const auto& e : run.excluded) excluded.push_back(exclusion_json(e));
  return json{{"run_id", run.run_id},
              {"source_id", run.source_id},
              {"language", to_string(run.language)},
              {"threshold", run.threshold.to_string()},
              {"per_instance", std::move(per)},
              {"aggregate", run.aggregate.value()},
              {"excluded", std::move(excluded)},
              {"config_snapshot", run.config_snapshot}};
}

EvalRun eval_run_from_json(const json& j) {
  EvalRun run;
  run.run_id = j.at("run_id");
  run.source_id = j.at("source_id");
  run.language = parse_language(j.at("language").get<std::string>());
  run.threshold = Threshold::parse(j.at("threshold").get<std::string>());
  for (const auto& p : j.at("per_instance")) {
    run.per_instance.emplace_back(p.at("instance_id"), Correlation(p.at("rho").get<double>()));
  }
  run.aggregate = Correlation(j.at("aggregate").get<double>());
  for (const auto& e : j.at("excluded")) {
    run.excluded.push_back({e.at("instance_id"), e.at("code"), e.at("detail")});
  }
  run.config_snapshot = j.at("config_snapshot");
  return run;
}

std::string serialize(const EvalRun& run) { return to_json(run).dump(2) + "\n"; }

fs::path run_path(const fs::path& out_dir, const std::string& run_id) {
  return out_dir / "runs" / (run_id + ".json");
}

bool persist_run(const EvalRun& run, const fs::path& out_dir) {
  const auto path = run_path(out_dir, run.run_id);
  const auto bytes = serialize(run);
  if (fs::exists(path)) {
    std::ifstream in(path);
    std::stringstream existing;
    existing << in.rdbuf();
    if (existing.str() == bytes) return false;
    throw ConflictError("run " + run.run_id + " already stored with different results at " +
                        path.string());
  }
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << bytes;
  return true;
}

EvalRun load_run(const fs::path& out_dir, const std::string& run_id) {
  const auto path = run_path(out_dir, run_id);
  std::ifstream in(path);
  if (!in) throw NotFoundError("unknown run id '" + run_id + "'");
  return eval_run_from_json(json::parse(in));
}

SweepResult sweep(std::span<const CorpusInstance> corpus, RankingSource* source,
                  std::span<const Threshold> thresholds) {
  SweepResult result;
  std::vector<AnnotationBundle> bundles;
  std::vector<CorpusInstance> complete;
  for (const auto& inst : corpus) {
    const auto n = inst.annotations ? inst.annotations->annotator_count() : 0;
    if (n < 2) {
      result.excluded.push_back(
          {inst.id(), "insufficient_annotations", std::to_string(n) + " annotation(s)"});
      continue;
    }
    bundles.push_back(*inst.annotations);
    complete.push_back(inst);
  }
  std::map<std::string, Ranking> model;
  if (source) {
    result.source_id = source->id();
    auto outcome = source->rank(complete);
    model = std::move(outcome.rankings);
    for (auto& f : outcome.failures) result.excluded.push_back(std::move(f));
  }
  result.points = threshold_sweep(bundles, model, thresholds);
  return result;
}

void write_plot_data(const fs::path& file, std::span<const SweepPoint> points) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error("cannot write " + file.string());
  write_sweep_table(out, points, '\t');
}

std::vector<SweepPoint> read_sweep_table(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw NotFoundError("cannot read sweep file " + file.string());
  std::string line;
  std::getline(in, line);
  const char delim = line.find('\t') != std::string::npos ? '\t' : ',';
  auto parse_corr = [](const std::string& cell) -> std::optional<Correlation> {
    if (cell.empty() || cell == "empty") return std::nullopt;
    return Correlation(std::stod(cell));
  };
  std::vector<SweepPoint> points;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, delim)) cells.push_back(cell);
    if (line.back() == delim) cells.emplace_back();
    if (cells.size() != 4) throw ParseError("malformed sweep row in " + file.string(), line);
    SweepPoint p;
    p.threshold = Threshold::parse(cells[0]);
    p.retained_count = std::stoul(cells[1]);
    p.mean_human_rho = parse_corr(cells[2]);
    p.mean_model_rho = parse_corr(cells[3]);
    points.push_back(std::move(p));
  }
  return points;
}

ReportFormat parse_report_format(std::string_view text) {
  if (text == "markdown" || text == "markdown_table" || text == "md") {
    return ReportFormat::markdown_table;
  }
  if (text == "delimited" || text == "tsv") return ReportFormat::delimited;
  throw ValidationError("unknown report format '" + std::string(text) + "'");
}

namespace {

std::string render(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows, ReportFormat format) {
  std::ostringstream os;
  if (format == ReportFormat::delimited) {
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "\t" : "") << cells[i];
      os << '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return os.str();
  }
  auto line = [&](const std::vector<std::string>& cells) {
    os << '|';
    for (const auto& c : cells) os << ' ' << c << " |";
    os << '\n';
  };
  line(header);
  os << '|';
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? " ---: |" : " --- |");
  os << '\n';
  for (const auto& r : rows) line(r);
  return os.str();
}

std::string flag_best(const std::string& cell, ReportFormat format) {
  return format == ReportFormat::markdown_table ? "**" + cell + "**" : cell + "*";
}

}  // namespace

std::string report(std::span<const EvalRun> runs, ReportFormat format) {
  if (runs.empty()) throw Error("nothing to report");

  std::set<std::string> thresholds;
  for (const auto& r : runs) thresholds.insert(r.threshold.to_string());
  auto column_of = [&](const EvalRun& r) {
    auto label = to_string(r.language);
    if (thresholds.size() > 1) label += " (t=" + r.threshold.to_string() + ")";
    return label;
  };

  std::set<std::string> columns;
  std::map<std::string, std::map<std::string, double>> table;  // source -> column -> value
  for (const auto& r : runs) {
    const auto col = column_of(r);
    columns.insert(col);
    auto [it, inserted] = table[r.source_id].emplace(col, r.aggregate.value());
    if (!inserted && it->second != r.aggregate.value()) {
      throw Error("conflicting runs for '" + r.source_id + "' in column " + col);
    }
  }

  std::map<std::string, double> best;
  for (const auto& [_, cols] : table) {
    for (const auto& [col, v] : cols) {
      auto [it, inserted] = best.emplace(col, v);
      if (!inserted) it->second = std::max(it->second, v);
    }
  }

  std::vector<std::string> header{"Model"};
  header.insert(header.end(), columns.begin(), columns.end());
  std::vector<std::vector<std::string>> rows;
  for (const auto& [source, cols] : table) {
    std::vector<std::string> row{source};
    for (const auto& col : columns) {
      auto it = cols.find(col);
      if (it == cols.end()) {
        row.emplace_back("-");
        continue;
      }
      const auto cell = fixed3(it->second);
      // Best is judged on the printed value so ties at 3 decimals all get flagged.
      row.push_back(cell == fixed3(best.at(col)) && table.size() > 1 ? flag_best(cell, format)
                                                                     : cell);
    }
    rows.push_back(std::move(row));
  }
  return render(header, rows, format);
}

std::string report_sweeps(std::span<const std::pair<std::string, std::vector<SweepPoint>>> sweeps,
                          ReportFormat format) {
  if (sweeps.empty()) throw Error("nothing to report");
  std::vector<std::string> header{"Threshold"};
  for (const auto& p : sweeps.front().second) header.push_back(p.threshold.to_string());

  std::vector<std::vector<std::string>> rows;
  for (const auto& [label, points] : sweeps) {
    if (points.size() + 1 != header.size()) {
      throw Error("sweep '" + label + "' uses a different threshold grid");
    }
    std::vector<std::string> count{label + " retained"}, human{label + " human"}, model{label + " model"};
    bool has_model = false;
    for (const auto& p : points) {
      count.push_back(std::to_string(p.retained_count));
      human.push_back(p.mean_human_rho ? fixed3(p.mean_human_rho->value()) : "empty");
      model.push_back(p.mean_model_rho ? fixed3(p.mean_model_rho->value()) : "empty");
      has_model = has_model || p.mean_model_rho.has_value();
    }
    rows.push_back(std::move(count));
    rows.push_back(std::move(human));
    if (has_model) rows.push_back(std::move(model));
  }
  return render(header, rows, format);
}

}  // namespace irr
