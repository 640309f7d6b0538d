// irr: command-line front end for corpus checks, annotation collection,
// agreement filtering and model evaluation.

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "irr/annotation_service.hpp"
#include "irr/corpus.hpp"
#include "irr/elicitation.hpp"
#include "irr/error.hpp"
#include "irr/harness.hpp"
#include "irr/http_endpoints.hpp"
#include "irr/rankstats.hpp"
#include "irr/scoring.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace irr;

namespace {

struct Common {
  std::string corpus;
  std::string language = "en";
  std::string threshold;
  std::string scorer_endpoint;
  std::string scores;
  std::string chat_endpoint;
  bool with_image = true;
  std::uint64_t seed = 0;
  std::string out = "irr-out";
  std::string config;
  std::string secret_env;
  std::size_t max_in_flight = 4;
  bool lenient = false;
};

void add_corpus_flags(CLI::App* cmd, Common& c, bool required = true) {
  auto* opt = cmd->add_option("--corpus", c.corpus, "Corpus directory or records file");
  if (required) opt->required();
  cmd->add_option("--language", c.language, "Corpus language")
      ->check(CLI::IsMember({"en", "ja", "EN", "JA"}));
  cmd->add_flag("--lenient", c.lenient, "Skip invalid records (quarantined) instead of failing");
}

void add_endpoint_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config,
                  "JSON file with endpoint settings (ids, secret env var names, log base)");
  cmd->add_option("--secret-env", c.secret_env,
                  "Name of the environment variable holding the endpoint bearer token");
  cmd->add_option("--max-in-flight", c.max_in_flight, "Concurrent requests per endpoint")
      ->check(CLI::Range(1, 64));
}

json load_config(const Common& c) {
  if (c.config.empty()) return json::object();
  std::ifstream in(c.config);
  if (!in) throw Error("cannot read config " + c.config);
  auto j = json::parse(in);
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  return j;
}

HttpEndpointConfig endpoint_config(const Common& c, const json& section, const std::string& url,
                                   const std::string& default_id) {
  HttpEndpointConfig cfg;
  cfg.url = url;
  cfg.id = section.value("id", default_id);
  cfg.secret_env = c.secret_env.empty() ? section.value("secret_env", std::string()) : c.secret_env;
  cfg.timeout = std::chrono::seconds(section.value("timeout_s", 60));
  return cfg;
}

LogBase parse_log_base(const std::string& s) {
  if (s == "e" || s == "natural") return LogBase::natural;
  if (s == "2") return LogBase::two;
  if (s == "10") return LogBase::ten;
  throw ValidationError("unknown log base '" + s + "'");
}

std::vector<CorpusInstance> load_or_fail(const Common& c, const fs::path& quarantine_dir) {
  const auto lang = parse_language(c.language);
  auto result = load_corpus(c.corpus, lang);
  for (const auto& issue : result.issues) {
    std::cerr << (c.lenient ? "skipped" : "invalid") << " line " << issue.line
              << (issue.instance_id.empty() ? "" : " (" + issue.instance_id + ")") << ": "
              << issue.reason << "\n";
  }
  if (!result.issues.empty()) {
    if (!c.lenient) {
      throw ValidationError(std::to_string(result.issues.size()) +
                            " invalid record(s); rerun with --lenient to quarantine them");
    }
    fs::create_directories(quarantine_dir);
    const auto q = quarantine_dir / ("quarantine." + c.language + ".jsonl");
    write_quarantine(result, q);
    std::cerr << "quarantined " << result.issues.size() << " record(s) to " << q << "\n";
  }
  return std::move(result.instances);
}

Threshold threshold_or(const Common& c, Threshold fallback) {
  return c.threshold.empty() ? fallback : Threshold::parse(c.threshold);
}

std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, delim)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---------------------------------------------------------------- validate

int cmd_validate(const Common& c) {
  const auto corpus = load_or_fail(c, c.out);
  const auto m = make_manifest(corpus, parse_language(c.language));
  std::size_t annotated = 0, below_minimum = 0;
  for (const auto& inst : corpus) {
    if (!inst.annotations) continue;
    ++annotated;
    if (!inst.annotations->meets_minimum()) ++below_minimum;
  }
  std::cout << "instances\t" << corpus.size() << "\n"
            << "annotated\t" << annotated << "\n";
  if (below_minimum) std::cout << "below_3_annotators\t" << below_minimum << "\n";
  for (const auto& [cat, n] : m.category_counts) std::cout << "category\t" << cat << "\t" << n << "\n";
  return 0;
}

// ---------------------------------------------------------------- generate

int cmd_generate(const Common& c, const std::string& images) {
  if (c.chat_endpoint.empty()) throw ValidationError("generate needs --chat-endpoint");
  const auto lang = parse_language(c.language);
  prompt_template(TemplateId::generate_reviews, lang);  // fails early for JA

  const auto cfg = load_config(c);
  HttpChatEndpoint chat(endpoint_config(c, cfg.value("chat", json::object()), c.chat_endpoint,
                                        "chat"));
  std::ifstream in(images);
  if (!in) throw Error("cannot read image list " + images);

  const fs::path out_dir = c.out;
  fs::create_directories(out_dir);
  std::vector<CorpusInstance> generated;
  std::size_t failed = 0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line, '\t');
    if (cells.size() != 3) throw ParseError("image list rows are id<TAB>image_ref<TAB>category", line);
    ElicitationTranscript t;
    try {
      CorpusInstance inst;
      inst.review_set = generate_review_set(cells[0], cells[1], cells[2], chat, &t);
      generated.push_back(std::move(inst));
    } catch (const Error& e) {
      ++failed;
      t.error = e.what();
      std::cerr << "generation failed for " << cells[0] << ": " << e.what() << "\n";
    }
    append_transcript(out_dir / "transcripts.generate.jsonl", t);
  }
  save_corpus(generated, out_dir, lang);
  std::cout << "generated\t" << generated.size() << "\nfailed\t" << failed << "\n";
  return failed ? 1 : 0;
}

// ---------------------------------------------------------------- assign / serve

fs::path event_log_path(const Common& c) {
  return fs::path(c.out) / ("annotation_events." + c.language + ".jsonl");
}

int cmd_assign(const Common& c, const std::string& raters, const std::string& instances_file) {
  auto corpus = load_or_fail(c, c.out);
  std::vector<CorpusInstance> subset = corpus;
  if (!instances_file.empty()) {
    std::ifstream in(instances_file);
    if (!in) throw Error("cannot read " + instances_file);
    std::set<std::string> wanted;
    for (std::string id; std::getline(in, id);) {
      if (!id.empty()) wanted.insert(id);
    }
    std::erase_if(subset, [&](const CorpusInstance& i) { return !wanted.count(i.id()); });
    if (subset.size() != wanted.size()) {
      throw ValidationError("instance list names ids that are not in the corpus");
    }
  }
  const auto ids = split(raters, ',');
  auto plan = create_assignments(subset, ids, c.seed);
  for (const auto& w : plan.warnings) std::cerr << "warning: " << w << "\n";

  fs::create_directories(c.out);
  AnnotationStore store(event_log_path(c), std::move(corpus));
  // a rater keeps the token from earlier runs
  for (const auto& a : store.assignments()) {
    if (plan.rater_tokens.contains(a.rater_id)) plan.rater_tokens[a.rater_id] = a.access_token;
  }
  for (auto& a : plan.assignments) a.access_token = plan.rater_tokens.at(a.rater_id);
  store.add(plan.assignments);

  std::cout << "assignment_id\trater_id\tinstance_id\ttask_path\n";
  for (const auto& a : plan.assignments) {
    std::cout << a.assignment_id << '\t' << a.rater_id << '\t' << a.instance_id << "\t/tasks/"
              << a.assignment_id << "?token=" << a.access_token << "\n";
  }
  return 0;
}

AnnotationServer* g_server = nullptr;

int cmd_serve(const Common& c, const std::string& host, int port, const std::string& static_dir) {
  auto corpus = load_or_fail(c, c.out);
  fs::create_directories(c.out);
  AnnotationStore store(event_log_path(c), std::move(corpus));
  AnnotationServer server(store, threshold_or(c, Threshold::at(kDefaultThreshold)),
                          static_dir.empty() ? std::nullopt : std::optional<fs::path>(static_dir));
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "serving " << store.assignments().size() << " assignment(s) on " << host << ":"
            << port << "\n";
  const bool ok = server.listen(host, port);
  g_server = nullptr;
  store.write_snapshot(fs::path(c.out) / ("annotation_snapshot." + c.language + ".json"));
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------- agreement

int cmd_agreement(const Common& c, bool with_events) {
  auto corpus = load_or_fail(c, c.out);
  if (with_events) {
    AnnotationStore store(event_log_path(c), std::move(corpus));
    corpus = store.annotated_corpus();
  }
  const auto threshold = threshold_or(c, Threshold::at(kDefaultThreshold));
  const auto rep = agreement_report(corpus, threshold);
  fs::create_directories(c.out);
  const auto file = fs::path(c.out) / ("agreement." + c.language + ".json");
  std::ofstream(file) << to_json(rep).dump(2) << "\n";
  std::cout << "threshold\t" << threshold.to_string() << "\n"
            << "retained\t" << rep.retained.size() << "\n"
            << "incomplete\t" << rep.incomplete.size() << "\n"
            << "mean_best_pair_rho\t"
            << (rep.mean_retained_rho ? std::to_string(rep.mean_retained_rho->value()) : "empty")
            << "\n";
  return 0;
}

// ---------------------------------------------------------------- sources

struct SourceHolder {
  std::unique_ptr<ScorerEndpoint> scorer;
  std::unique_ptr<ChatEndpoint> chat;
  std::unique_ptr<ScoreCache> cache;
  std::unique_ptr<RankingSource> source;
};

struct SourceFlags {
  bool prompt_order = false;
  std::string orientation = "higher_better";
  std::string model;
  bool multimodal = true;
  int max_attempts = 3;
};

void add_source_flags(CLI::App* cmd, Common& c, SourceFlags& s) {
  cmd->add_option("--scorer-endpoint", c.scorer_endpoint, "Perplexity scoring endpoint URL");
  cmd->add_option("--scores", c.scores, "Precomputed score file (e.g. CLIP scores)");
  cmd->add_option("--chat-endpoint", c.chat_endpoint, "Chat endpoint URL for response ranking");
  cmd->add_flag("--prompt-order", s.prompt_order, "Use generation order as the ranking");
  cmd->add_option("--orientation", s.orientation, "Orientation of --scores")
      ->check(CLI::IsMember({"lower_better", "higher_better"}));
  cmd->add_option("--model", s.model, "Model name recorded for chat or scorer runs");
  cmd->add_option("--with-image", c.with_image, "Send the image (true/false)");
  cmd->add_option("--multimodal", s.multimodal, "Scorer conditions on the image (true/false)");
  cmd->add_option("--max-attempts", s.max_attempts, "Response-rank attempts per instance")
      ->check(CLI::Range(1, 10));
  add_endpoint_flags(cmd, c);
}

std::optional<SourceHolder> make_source(const Common& c, const SourceFlags& s,
                                        const std::vector<CorpusInstance>& corpus, bool optional) {
  const int chosen = static_cast<int>(!c.scorer_endpoint.empty()) +
                     static_cast<int>(!c.scores.empty()) +
                     static_cast<int>(!c.chat_endpoint.empty()) + static_cast<int>(s.prompt_order);
  if (chosen == 0 && optional) return std::nullopt;
  if (chosen != 1) {
    throw ValidationError(
        "choose exactly one of --scorer-endpoint, --scores, --chat-endpoint, --prompt-order");
  }
  const auto cfg = load_config(c);
  const fs::path out_dir = c.out;
  SourceHolder h;
  if (s.prompt_order) {
    h.source = std::make_unique<PromptOrderSource>();
  } else if (!c.scorer_endpoint.empty()) {
    const auto section = cfg.value("scorer", json::object());
    auto ec = endpoint_config(c, section, c.scorer_endpoint, s.model.empty() ? "scorer" : s.model);
    if (!s.model.empty()) ec.id = s.model;
    h.scorer = std::make_unique<HttpScorerEndpoint>(
        ec, s.multimodal, parse_log_base(section.value("log_base", std::string("e"))));
    fs::create_directories(out_dir);
    h.cache = std::make_unique<ScoreCache>(out_dir / "score_cache.jsonl");
    ScoringOptions opts;
    opts.cache = h.cache.get();
    h.source = std::make_unique<ScorerSource>(*h.scorer, std::string(kPerplexityPrefix), opts,
                                              c.max_in_flight);
  } else if (!c.scores.empty()) {
    std::set<std::string> known;
    for (const auto& inst : corpus) known.insert(inst.id());
    auto ext = ingest_external_scores(c.scores, parse_orientation(s.orientation), &known);
    for (const auto& skip : ext.skipped) {
      std::cerr << "score file line " << skip.line << ": " << skip.reason << "\n";
    }
    h.source = std::make_unique<ExternalScoresSource>(std::move(ext), c.scores);
  } else {
    auto ec = endpoint_config(c, cfg.value("chat", json::object()), c.chat_endpoint,
                              s.model.empty() ? "chat" : s.model);
    if (!s.model.empty()) ec.id = s.model;
    h.chat = std::make_unique<HttpChatEndpoint>(ec);
    fs::create_directories(out_dir);
    h.source = std::make_unique<ResponseRankSource>(*h.chat, ec.id, c.with_image, s.max_attempts,
                                                    out_dir / "transcripts.rank.jsonl");
  }
  return h;
}

// ---------------------------------------------------------------- evaluate / sweep / report

int cmd_evaluate(const Common& c, const SourceFlags& s, bool force) {
  const auto corpus = load_or_fail(c, c.out);
  const auto lang = parse_language(c.language);
  auto holder = *make_source(c, s, corpus, false);
  const auto threshold = threshold_or(c, Threshold::at(kDefaultThreshold));
  const json extra{{"seed", c.seed}};

  const auto id = run_id_for(run_config(corpus, lang, *holder.source, threshold, extra));
  if (!force && fs::exists(run_path(c.out, id))) {
    const auto run = load_run(c.out, id);
    std::cerr << "run " << id << " already exists; not re-evaluating (use --force)\n";
    std::cout << id << '\t' << run.source_id << '\t' << to_string(run.language) << '\t'
              << run.threshold.to_string() << '\t' << run.aggregate.value() << "\n";
    return 0;
  }
  const auto run = evaluate(corpus, lang, *holder.source, threshold, extra);
  persist_run(run, c.out);
  std::map<std::string, int> reasons;
  for (const auto& e : run.excluded) ++reasons[e.code];
  for (const auto& [code, n] : reasons) std::cerr << "excluded " << code << ": " << n << "\n";
  std::cout << run.run_id << '\t' << run.source_id << '\t' << to_string(run.language) << '\t'
            << run.threshold.to_string() << '\t' << run.aggregate.value() << "\n";
  return 0;
}

int cmd_sweep(const Common& c, const SourceFlags& s, const std::string& thresholds_csv) {
  const auto corpus = load_or_fail(c, c.out);
  auto holder = make_source(c, s, corpus, true);
  std::vector<Threshold> grid;
  if (thresholds_csv.empty()) {
    grid = default_sweep_thresholds();
  } else {
    for (const auto& t : split(thresholds_csv, ',')) grid.push_back(Threshold::parse(t));
  }
  const auto result = sweep(corpus, holder ? holder->source.get() : nullptr, grid);
  for (const auto& e : result.excluded) {
    std::cerr << "excluded " << e.instance_id << " " << e.code << ": " << e.detail << "\n";
  }
  write_sweep_table(std::cout, result.points);
  fs::create_directories(c.out);
  auto name = "sweep." + c.language;
  if (result.source_id) name += "." + *result.source_id;
  write_plot_data(fs::path(c.out) / (name + ".tsv"), result.points);
  return 0;
}

int cmd_report(const Common& c, const std::vector<std::string>& run_ids,
               const std::vector<std::string>& sweep_files, const std::string& format) {
  const auto fmt = parse_report_format(format);
  if (!sweep_files.empty()) {
    std::vector<std::pair<std::string, std::vector<SweepPoint>>> sweeps;
    for (const auto& f : sweep_files) sweeps.emplace_back(fs::path(f).stem().string(), read_sweep_table(f));
    std::cout << report_sweeps(sweeps, fmt);
    return 0;
  }
  std::vector<EvalRun> runs;
  if (run_ids.empty()) {
    const auto dir = fs::path(c.out) / "runs";
    std::vector<fs::path> files;
    if (fs::exists(dir)) {
      for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".json") files.push_back(e.path());
      }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) runs.push_back(load_run(c.out, f.stem().string()));
  } else {
    for (const auto& id : run_ids) runs.push_back(load_run(c.out, id));
  }
  std::cout << report(runs, fmt);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image review ranking: corpus, annotation agreement and model evaluation"};
  app.require_subcommand(1);
  Common c;
  SourceFlags s;

  auto* validate = app.add_subcommand("validate", "Check a corpus and print a summary");
  add_corpus_flags(validate, c);
  validate->add_option("--out", c.out, "Directory for the quarantine file");

  std::string images;
  auto* generate = app.add_subcommand("generate", "Generate five review texts per image");
  generate->add_option("--images", images, "TSV of id, image_ref, category")->required();
  generate->add_option("--chat-endpoint", c.chat_endpoint, "Chat endpoint URL")->required();
  generate->add_option("--language", c.language, "Output language")
      ->check(CLI::IsMember({"en", "ja", "EN", "JA"}));
  generate->add_option("--out", c.out, "Output corpus directory");
  add_endpoint_flags(generate, c);

  std::string raters, instances_file;
  auto* assign = app.add_subcommand("assign", "Create blinded annotation assignments");
  add_corpus_flags(assign, c);
  assign->add_option("--raters", raters, "Comma-separated rater ids")->required();
  assign->add_option("--seed", c.seed, "Presentation order seed");
  assign->add_option("--instances", instances_file, "File of instance ids to assign (one per line)");
  assign->add_option("--out", c.out, "Directory holding the annotation event log");

  std::string host = "127.0.0.1", static_dir;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Serve annotation tasks over HTTP");
  add_corpus_flags(serve, c);
  serve->add_option("--host", host);
  serve->add_option("--port", port)->check(CLI::Range(1, 65535));
  serve->add_option("--static-dir", static_dir, "Annotator UI build to serve at /");
  serve->add_option("--threshold", c.threshold, "Default threshold for /reports/agreement");
  serve->add_option("--out", c.out, "Directory holding the annotation event log");

  bool with_events = false;
  auto* agreement = app.add_subcommand("agreement", "Best-pair agreement and threshold filtering");
  add_corpus_flags(agreement, c);
  agreement->add_option("--threshold", c.threshold, "Agreement threshold (number or none)");
  agreement->add_flag("--with-events", with_events, "Merge rankings collected by serve");
  agreement->add_option("--out", c.out, "Output directory");

  bool force = false;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate one ranking source against humans");
  add_corpus_flags(evaluate_cmd, c);
  add_source_flags(evaluate_cmd, c, s);
  evaluate_cmd->add_option("--threshold", c.threshold, "Agreement threshold (default 0.6)");
  evaluate_cmd->add_option("--seed", c.seed, "Recorded in the run configuration");
  evaluate_cmd->add_option("--out", c.out, "Output directory (runs, caches, transcripts)");
  evaluate_cmd->add_flag("--force", force, "Re-evaluate even if an identical run exists");

  std::string thresholds_csv;
  auto* sweep_cmd = app.add_subcommand("sweep", "Retained counts and mean correlations per threshold");
  add_corpus_flags(sweep_cmd, c);
  add_source_flags(sweep_cmd, c, s);
  sweep_cmd->add_option("--thresholds", thresholds_csv, "Comma-separated grid (default none,0,...,1.0)");
  sweep_cmd->add_option("--out", c.out, "Directory for the plot data file");

  std::vector<std::string> run_ids, sweep_files;
  std::string format = "markdown";
  auto* report_cmd = app.add_subcommand("report", "Render stored runs or sweep files as a table");
  report_cmd->add_option("--runs", run_ids, "Run ids (default: every stored run)")->delimiter(',');
  report_cmd->add_option("--sweeps", sweep_files, "Sweep table files")->delimiter(',');
  report_cmd->add_option("--format", format, "markdown or delimited");
  report_cmd->add_option("--out", c.out, "Directory holding runs/");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*validate) return cmd_validate(c);
    if (*generate) return cmd_generate(c, images);
    if (*assign) return cmd_assign(c, raters, instances_file);
    if (*serve) return cmd_serve(c, host, port, static_dir);
    if (*agreement) return cmd_agreement(c, with_events);
    if (*evaluate_cmd) return cmd_evaluate(c, s, force);
    if (*sweep_cmd) return cmd_sweep(c, s, thresholds_csv);
    if (*report_cmd) return cmd_report(c, run_ids, sweep_files, format);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
