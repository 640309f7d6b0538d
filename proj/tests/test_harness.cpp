#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>

#include <json.hpp>

#include "irr/harness.hpp"
#include "support/mocks.hpp"
#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"

using namespace irr;
using irr::testing::TempDir;
using nlohmann::json;

namespace {

// Three annotators with the given rank vectors.
void set_ranks(CorpusInstance& inst, const std::vector<RankVector>& ranks) {
  AnnotationBundle b{inst.id(), {}};
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    b.rankings.push_back({inst.id(), "annotator-" + std::to_string(i + 1), ranks[i], TiePolicy::none});
  }
  inst.annotations = b;
}

// t1 agrees perfectly, t2 is split, t3 has one annotation, t4 agrees.
std::vector<CorpusInstance> mixed_corpus() {
  auto c = irr::testing::tiny_corpus(4);
  set_ranks(c[0], {{1, 2, 3, 4, 5}, {1, 2, 3, 4, 5}, {5, 4, 3, 2, 1}});
  set_ranks(c[1], {{1, 2, 3, 4, 5}, {5, 4, 3, 2, 1}, {3, 5, 1, 2, 4}});
  set_ranks(c[2], {{1, 2, 3, 4, 5}});
  set_ranks(c[3], {{2, 1, 3, 4, 5}, {1, 2, 3, 4, 5}, {1, 2, 3, 5, 4}});
  return c;
}

const Exclusion* find_exclusion(const EvalRun& run, const std::string& id) {
  for (const auto& e : run.excluded)
    if (e.instance_id == id) return &e;
  return nullptr;
}

EvalRun fake_run(const std::string& source, Language lang, double agg, double t = 0.6) {
  EvalRun r;
  r.run_id = source + to_string(lang);
  r.source_id = source;
  r.language = lang;
  r.threshold = Threshold::at(t);
  r.aggregate = Correlation(agg);
  return r;
}

}  // namespace

TEST_CASE("evaluate partitions the corpus") {
  const auto corpus = mixed_corpus();
  PromptOrderSource source;
  const auto run = evaluate(corpus, Language::en, source, Threshold::at(0.6));
  REQUIRE(run.per_instance.size() == 2);
  CHECK(run.per_instance[0].first == "t1");
  CHECK(run.per_instance[1].first == "t4");
  // prompt order is the identity; t1's best pair agrees with it exactly
  CHECK(run.per_instance[0].second.value() == doctest::Approx(1.0));
  CHECK(run.aggregate.value() ==
        doctest::Approx((run.per_instance[0].second.value() + run.per_instance[1].second.value()) / 2));
  REQUIRE(run.excluded.size() == 2);
  CHECK(find_exclusion(run, "t2")->code == "below_threshold");
  CHECK(find_exclusion(run, "t3")->code == "insufficient_annotations");
  CHECK(run.source_id == std::string(kPromptOrderRater));
  CHECK(run.run_id.size() == 16);
  CHECK(run.config_snapshot["threshold"] == "0.6");

  // none keeps every complete instance
  const auto all = evaluate(corpus, Language::en, source, Threshold::none());
  CHECK(all.per_instance.size() == 3);
  CHECK(all.excluded.size() == 1);
}

TEST_CASE("evaluate reports scorer failures per instance") {
  const auto corpus = mixed_corpus();
  const std::string failing_body = corpus[3].review_set.reviews[2].body;
  irr::testing::FunctionScorer scorer("ppl", false, [&](const ScoreRequest& req) {
    if (req.continuation == failing_body) throw ScorerContractError("no logprobs");
    return ScoreResponse{{-static_cast<double>(req.continuation.size()) / 50.0}, 1};
  });
  ScoringOptions opts;
  opts.retry.initial_backoff = std::chrono::milliseconds(1);
  ScorerSource source(scorer, std::string(kPerplexityPrefix), opts, 2);
  const auto run = evaluate(corpus, Language::en, source, Threshold::none());
  CHECK(run.per_instance.size() == 2);
  REQUIRE(find_exclusion(run, "t4"));
  CHECK(find_exclusion(run, "t4")->code == "unscored");
  CHECK(run.per_instance.size() + run.excluded.size() == corpus.size());

  irr::testing::FunctionScorer dead("dead", false, [](const ScoreRequest&) -> ScoreResponse {
    throw ScorerContractError("down");
  });
  ScorerSource dead_source(dead, std::string(kPerplexityPrefix), opts);
  CHECK_THROWS_AS(evaluate(corpus, Language::en, dead_source, Threshold::none()), Error);

  // nothing survives the filter
  const std::vector<CorpusInstance> split{corpus[1], corpus[2]};
  PromptOrderSource po;
  CHECK_THROWS_AS(evaluate(split, Language::en, po, Threshold::at(0.6)), Error);
}

TEST_CASE("external scores source") {
  const auto corpus = mixed_corpus();
  ExternalScores scores{"clip", {}, {}};
  scores.vectors.push_back({"t1", {0.9, 0.8, 0.7, 0.6, 0.5}, Orientation::higher_better, "clip", std::nullopt});
  scores.vectors.push_back({"t2", {0.9, 0.8, 0.7, 0.6, 0.5}, Orientation::higher_better, "clip", std::nullopt});
  ExternalScoresSource source(scores, "clip.csv");
  const auto run = evaluate(corpus, Language::en, source, Threshold::none());
  CHECK(run.source_id == "clip");
  CHECK(run.per_instance.size() == 2);
  CHECK(find_exclusion(run, "t4")->code == "missing_scores");
  CHECK(run.per_instance[0].second.value() == doctest::Approx(1.0));
}

TEST_CASE("response rank source through evaluate") {
  const auto corpus = mixed_corpus();
  irr::testing::ScriptedChat chat("gpt", std::vector<std::string>{format_rank_response({1, 2, 3, 4, 5})});
  ResponseRankSource source(chat, "gpt-4v", true);
  const auto run = evaluate(corpus, Language::en, source, Threshold::none());
  CHECK(run.source_id == "gpt-4v");
  CHECK(run.per_instance.size() == 3);
  CHECK(run.config_snapshot["source"]["with_image"] == true);

  ResponseRankSource text_only(chat, "gpt-4v", false);
  CHECK(run_id_for(run_config(corpus, Language::en, source, Threshold::none())) !=
        run_id_for(run_config(corpus, Language::en, text_only, Threshold::none())));
}

TEST_CASE("run ids depend on the full configuration") {
  const auto corpus = mixed_corpus();
  PromptOrderSource source;
  const auto base = run_id_for(run_config(corpus, Language::en, source, Threshold::at(0.6)));
  CHECK(base == run_id_for(run_config(corpus, Language::en, source, Threshold::at(0.6))));
  CHECK(base != run_id_for(run_config(corpus, Language::en, source, Threshold::at(0.4))));
  CHECK(base != run_id_for(run_config(corpus, Language::en, source, Threshold::at(0.6), {{"seed", 1}})));
  auto changed = corpus;
  changed[0].review_set.reviews[0].body += "!";
  CHECK(base != run_id_for(run_config(changed, Language::en, source, Threshold::at(0.6))));
}

TEST_CASE("runs persist and reload") {
  TempDir dir;
  PromptOrderSource source;
  const auto corpus = mixed_corpus();
  const auto run = evaluate(corpus, Language::en, source, Threshold::at(0.6));
  CHECK(persist_run(run, dir.path()));
  CHECK_FALSE(persist_run(run, dir.path()));
  CHECK(std::filesystem::exists(run_path(dir.path(), run.run_id)));
  const auto back = load_run(dir.path(), run.run_id);
  CHECK(serialize(back) == serialize(run));
  CHECK(serialize(eval_run_from_json(to_json(run))) == serialize(run));
  auto tampered = run;
  tampered.aggregate = Correlation(0.0);
  CHECK_THROWS_AS(persist_run(tampered, dir.path()), ConflictError);
  CHECK_THROWS_WITH_AS(load_run(dir.path(), "0000000000000000"), doctest::Contains("unknown run id"),
                       NotFoundError);
}

TEST_CASE("report") {
  SUBCASE("one source, two languages") {
    const std::vector<EvalRun> runs{fake_run("llava", Language::en, 0.5), fake_run("llava", Language::ja, 0.25)};
    const auto md = report(runs, ReportFormat::markdown_table);
    CHECK(md == "| Model | EN | JA |\n| --- | ---: | ---: |\n| llava | 0.500 | 0.250 |\n");
    CHECK(report(runs, ReportFormat::markdown_table) == md);
    CHECK(report(runs, ReportFormat::delimited) == "Model\tEN\tJA\nllava\t0.500\t0.250\n");
  }
  SUBCASE("best value per column is flagged") {
    const std::vector<EvalRun> runs{fake_run("b", Language::en, 0.4), fake_run("a", Language::en, 0.3),
                                    fake_run("a", Language::ja, 0.7), fake_run("b", Language::ja, 0.1)};
    CHECK(report(runs, ReportFormat::markdown_table) ==
          "| Model | EN | JA |\n| --- | ---: | ---: |\n| a | 0.300 | **0.700** |\n| b | **0.400** | 0.100 |\n");
    CHECK(report(runs, ReportFormat::delimited) == "Model\tEN\tJA\na\t0.300\t0.700*\nb\t0.400*\t0.100\n");
  }
  SUBCASE("mixed thresholds become separate columns") {
    const std::vector<EvalRun> runs{fake_run("a", Language::en, 0.4, 0.6), fake_run("a", Language::en, 0.5, 0.8)};
    const auto out = report(runs, ReportFormat::delimited);
    CHECK(out.find("EN (t=0.6)") != std::string::npos);
    CHECK(out.find("EN (t=0.8)") != std::string::npos);
  }
  SUBCASE("empty") {
    CHECK_THROWS_WITH_AS(report({}, ReportFormat::markdown_table), "nothing to report", Error);
  }
  CHECK(parse_report_format("md") == ReportFormat::markdown_table);
  CHECK(parse_report_format("tsv") == ReportFormat::delimited);
  CHECK_THROWS_AS(parse_report_format("html"), ValidationError);
}

TEST_CASE("sweeps over the synthetic corpora") {
  const auto thresholds = default_sweep_thresholds();
  const auto en = irr::testing::build_synthetic_corpus(irr::testing::en_spec());
  const auto ja = irr::testing::build_synthetic_corpus(irr::testing::ja_spec());
  auto counts = [&](const std::vector<CorpusInstance>& c) {
    std::vector<std::size_t> out;
    for (const auto& p : sweep(c, nullptr, thresholds).points) out.push_back(p.retained_count);
    return out;
  };
  CHECK(counts(en) == std::vector<std::size_t>{207, 196, 166, 132, 119, 52, 14});
  CHECK(counts(ja) == std::vector<std::size_t>{207, 202, 186, 169, 158, 94, 39});

  PromptOrderSource po;
  const auto res = sweep(en, &po, thresholds);
  CHECK(res.source_id == std::string(kPromptOrderRater));
  for (const auto& p : res.points) {
    CHECK(p.mean_model_rho.has_value());
    CHECK(p.model_count == p.retained_count);
  }
  // the curve rises with the threshold
  for (std::size_t i = 1; i < res.points.size(); ++i) {
    CHECK(res.points[i].mean_model_rho->value() >= res.points[i - 1].mean_model_rho->value());
  }
}

TEST_CASE("empty sweeps and plot data") {
  TempDir dir;
  const auto thresholds = default_sweep_thresholds();
  const auto res = sweep(std::vector<CorpusInstance>{}, nullptr, thresholds);
  REQUIRE(res.points.size() == 7);
  for (const auto& p : res.points) {
    CHECK(p.empty());
    CHECK_FALSE(p.mean_human_rho);
  }
  write_plot_data(dir / "empty.tsv", res.points);
  const auto back = read_sweep_table(dir / "empty.tsv");
  REQUIRE(back.size() == 7);
  CHECK(back[0].threshold == Threshold::none());
  CHECK_FALSE(back[6].mean_human_rho);

  const auto corpus = mixed_corpus();
  PromptOrderSource po;
  const auto full = sweep(corpus, &po, thresholds);
  REQUIRE(full.excluded.size() == 1);
  CHECK(full.excluded[0].code == "insufficient_annotations");
  write_plot_data(dir / "full.tsv", full.points);
  const auto round = read_sweep_table(dir / "full.tsv");
  REQUIRE(round.size() == full.points.size());
  for (std::size_t i = 0; i < round.size(); ++i) {
    CHECK(round[i].threshold == full.points[i].threshold);
    CHECK(round[i].retained_count == full.points[i].retained_count);
    CHECK(round[i].mean_human_rho.has_value() == full.points[i].mean_human_rho.has_value());
    if (round[i].mean_human_rho) {
      CHECK(round[i].mean_human_rho->value() == doctest::Approx(full.points[i].mean_human_rho->value()));
    }
  }
  CHECK_THROWS_AS(read_sweep_table(dir / "missing.tsv"), NotFoundError);

  const std::vector<std::pair<std::string, std::vector<SweepPoint>>> labelled{{"EN", full.points}};
  const auto text = report_sweeps(labelled, ReportFormat::delimited);
  CHECK(text.rfind("Threshold\tnone\t0\t0.2", 0) == 0);
  CHECK(text.find("EN retained\t3\t") != std::string::npos);
  CHECK(text.find("EN model\t") != std::string::npos);
}
