#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "irr/error.hpp"
#include "irr/rankstats.hpp"
#include "support/synthetic.hpp"

using namespace irr;
using doctest::Approx;

namespace {

std::vector<double> v(std::initializer_list<double> xs) { return std::vector<double>(xs); }

Ranking rk(std::string rater, RankVector ranks, std::string instance = "i1") {
  return Ranking{std::move(instance), std::move(rater), ranks, TiePolicy::none};
}

AnnotationBundle bundle_of(std::vector<Ranking> rs, std::string instance = "i1") {
  return AnnotationBundle{std::move(instance), std::move(rs)};
}

// plain two-pass Pearson, for oracle comparisons
double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST_CASE("spearman examples") {
  CHECK(spearman(v({1, 2, 3, 4, 5}), v({1, 2, 3, 4, 5})).value() == 1.0);
  CHECK(spearman(v({1, 2, 3, 4, 5}), v({5, 4, 3, 2, 1})).value() == -1.0);
  CHECK(spearman(v({1, 2, 3, 4, 5}), v({2, 1, 3, 4, 5})).value() == 0.9);
  CHECK(spearman(v({1, 2, 3, 4, 5}), v({2, 3, 1, 5, 4})).value() == 0.6);
}

TEST_CASE("spearman errors") {
  CHECK_THROWS_AS(spearman(v({1, 2, 3}), v({1, 2})), ValidationError);
  CHECK_THROWS_AS(spearman(v({1}), v({1})), ValidationError);
  CHECK_THROWS_AS(spearman(v({3, 3, 3, 3, 3}), v({1, 2, 3, 4, 5})), DegenerateInputError);
  CHECK_THROWS_AS(spearman(v({1, 2, 3, 4, 5}), v({2, 2, 2, 2, 2})), DegenerateInputError);
  CHECK_THROWS_AS(spearman(v({1, 2, NAN, 4, 5}), v({1, 2, 3, 4, 5})), ValidationError);
}

TEST_CASE("spearman on tied ranks is product-moment") {
  const auto a = v({4, 1.5, 5, 1.5, 3});
  const auto b = v({1, 2, 3, 4, 5});
  CHECK(spearman(a, b).value() == Approx(pearson(a, b)).epsilon(1e-12));
  CHECK(spearman(a, b).value() == Approx(spearman(b, a).value()).epsilon(1e-15));
}

TEST_CASE("spearman properties over all permutation pairs") {
  const auto& perms = irr::testing::permutations5();
  std::mt19937 rng(7);
  for (const auto& p : perms) {
    const std::vector<double> a(p.begin(), p.end());
    std::vector<double> rev(a.size());
    for (std::size_t i = 0; i < 5; ++i) rev[i] = 6 - a[i];
    CHECK(spearman(a, a).value() == 1.0);
    CHECK(spearman(a, rev).value() == -1.0);
    for (const auto& q : perms) {
      const std::vector<double> b(q.begin(), q.end());
      const double ab = spearman(a, b).value();
      REQUIRE(ab == spearman(b, a).value());
      REQUIRE(std::abs(ab - pearson(a, b)) <= 1e-12);
    }
    // common re-indexing of the items leaves rho unchanged
    const auto& q = perms[rng() % perms.size()];
    std::array<int, 5> idx{0, 1, 2, 3, 4};
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> b(q.begin(), q.end()), a2(5), b2(5);
    for (int i = 0; i < 5; ++i) {
      a2[i] = a[idx[i]];
      b2[i] = b[idx[i]];
    }
    CHECK(spearman(a2, b2).value() == spearman(a, b).value());
  }
}

TEST_CASE("Correlation rejects NaN and out-of-range values") {
  CHECK_THROWS_AS(Correlation(NAN), DegenerateInputError);
  CHECK_THROWS_AS(Correlation(1.5), DegenerateInputError);
  CHECK(Correlation(1.0 + 1e-13).value() == 1.0);
  CHECK(Correlation(-1.0 - 1e-13).value() == -1.0);
}

TEST_CASE("fractional_ranks examples") {
  CHECK(fractional_ranks(v({3.2, 1.1, 5.0, 1.1, 2.0}), Orientation::lower_better) ==
        v({4, 1.5, 5, 1.5, 3}));
  CHECK(fractional_ranks(v({1, 2, 3, 4, 5}), Orientation::lower_better) == v({1, 2, 3, 4, 5}));
  CHECK(fractional_ranks(v({7, 7, 7}), Orientation::lower_better) == v({2, 2, 2}));
  CHECK(fractional_ranks(v({1, 2, 3, 4, 5}), Orientation::higher_better) == v({5, 4, 3, 2, 1}));
  CHECK(fractional_ranks(v({0.5}), Orientation::higher_better) == v({1}));
  CHECK_THROWS_AS(fractional_ranks(v({1, INFINITY}), Orientation::lower_better), ValidationError);
  CHECK_THROWS_AS(fractional_ranks({}, Orientation::lower_better), ValidationError);
}

TEST_CASE("fractional_ranks sums to n(n+1)/2 and is a permutation without ties") {
  std::mt19937 rng(11);
  std::uniform_int_distribution<int> coarse(0, 3);
  std::uniform_real_distribution<double> fine(-5, 5);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + trial % 9;
    std::vector<double> tied(n), distinct(n);
    for (std::size_t i = 0; i < n; ++i) {
      tied[i] = coarse(rng);
      distinct[i] = fine(rng);
    }
    for (auto o : {Orientation::lower_better, Orientation::higher_better}) {
      const auto r = fractional_ranks(tied, o);
      CHECK(std::accumulate(r.begin(), r.end(), 0.0) == Approx(n * (n + 1) / 2.0));
      auto p = fractional_ranks(distinct, o);
      std::sort(p.begin(), p.end());
      for (std::size_t i = 0; i < n; ++i) CHECK(p[i] == static_cast<double>(i + 1));
    }
  }
}

TEST_CASE("best_pair examples") {
  const auto b = bundle_of({rk("r1", {1, 2, 3, 4, 5}), rk("r2", {1, 2, 3, 5, 4}),
                            rk("r3", {5, 4, 3, 2, 1})});
  const auto rec = best_pair(b);
  CHECK(rec.rater_a == "r1");
  CHECK(rec.rater_b == "r2");
  CHECK(rec.rho_pair.value() == 0.9);
  CHECK(rec.instance_id == "i1");

  const auto same = best_pair(bundle_of(
      {rk("x", {2, 1, 3, 4, 5}), rk("y", {5, 4, 3, 2, 1}), rk("z", {5, 4, 3, 2, 1})}));
  CHECK(same.rater_a == "y");
  CHECK(same.rater_b == "z");
  CHECK(same.rho_pair.value() == 1.0);

  const auto two = best_pair(bundle_of({rk("b", {1, 2, 3, 4, 5}), rk("a", {2, 3, 1, 5, 4})}));
  CHECK(two.rater_a == "a");
  CHECK(two.rater_b == "b");
  CHECK(two.rho_pair.value() == 0.6);

  CHECK_THROWS_AS(best_pair(bundle_of({rk("a", {1, 2, 3, 4, 5})})), ValidationError);
}

TEST_CASE("best_pair ties break lexicographically") {
  // every pair has the same rho
  const auto b = bundle_of({rk("c", {1, 2, 3, 4, 5}), rk("b", {1, 2, 3, 4, 5}),
                            rk("a", {1, 2, 3, 4, 5})});
  const auto rec = best_pair(b);
  CHECK(rec.rater_a == "a");
  CHECK(rec.rater_b == "b");
}

TEST_CASE("model_alignment examples") {
  const auto b = bundle_of({rk("r1", {1, 2, 3, 4, 5}), rk("r2", {1, 2, 3, 5, 4}),
                            rk("r3", {5, 4, 3, 2, 1})});
  CHECK(model_alignment(rk("m", {1, 2, 3, 4, 5}), b).value() == Approx(0.95).epsilon(1e-15));

  const auto same = bundle_of({rk("a", {2, 1, 3, 4, 5}), rk("b", {2, 1, 3, 4, 5})});
  CHECK(model_alignment(rk("m", {2, 1, 3, 4, 5}), same).value() == 1.0);
  CHECK(model_alignment(rk("m", {4, 5, 3, 2, 1}), same).value() == -1.0);
}

TEST_CASE("model_alignment of annotator a is (1 + rho(a,b)) / 2") {
  const auto corpus = irr::testing::tiny_corpus(40);
  for (const auto& inst : corpus) {
    const auto rec = best_pair(*inst.annotations);
    const auto& rs = inst.annotations->rankings;
    const auto a = *std::find_if(rs.begin(), rs.end(),
                                 [&](const Ranking& r) { return r.rater_id == rec.rater_a; });
    CHECK(model_alignment(a, *inst.annotations).value() ==
          Approx((1.0 + rec.rho_pair.value()) / 2).epsilon(1e-12));
  }
}

TEST_CASE("Threshold parsing and ordering") {
  CHECK(Threshold::parse("none").is_none());
  CHECK(Threshold::parse("0.6").value() == 0.6);
  CHECK(Threshold::parse("-0.2").value() == -0.2);
  CHECK_THROWS_AS(Threshold::parse("1.5"), ValidationError);
  CHECK_THROWS_AS(Threshold::parse("abc"), ValidationError);
  CHECK_THROWS_AS(Threshold::parse("0.6x"), ValidationError);
  CHECK(Threshold::none() < Threshold::at(-1));
  CHECK(Threshold::at(0) < Threshold::at(0.2));
  CHECK_FALSE(Threshold::at(0.2) < Threshold::none());
  CHECK(Threshold::none().to_string() == "none");
  CHECK(Threshold::at(0.6).to_string() == "0.6");
  CHECK(Threshold::at(0.6).admits(0.6));
  CHECK_FALSE(Threshold::at(0.6).admits(0.5999999));
  CHECK(Threshold::none().admits(-1.0));
}

TEST_CASE("filter_instances is inclusive and nested") {
  std::vector<AgreementRecord> recs;
  for (int t = -10; t <= 10; ++t) {
    recs.push_back({"i" + std::to_string(t), "a", "b", Correlation(t / 10.0)});
  }
  CHECK(filter_instances(recs, Threshold::none()).size() == recs.size());
  CHECK(filter_instances(recs, Threshold::at(0.6)).size() == 5);  // 0.6..1.0
  CHECK(filter_instances(recs, Threshold::at(0.6)).count("i6") == 1);
  std::set<std::string> prev = filter_instances(recs, Threshold::none());
  for (const auto& t : default_sweep_thresholds()) {
    const auto kept = filter_instances(recs, t);
    CHECK(std::includes(prev.begin(), prev.end(), kept.begin(), kept.end()));
    prev = kept;
  }
}

TEST_CASE("threshold_sweep: all-perfect corpus and empty markers") {
  std::vector<AnnotationBundle> bundles;
  for (int i = 0; i < 4; ++i) {
    const auto id = "p" + std::to_string(i);
    bundles.push_back(bundle_of({rk("a", {1, 2, 3, 4, 5}, id), rk("b", {1, 2, 3, 4, 5}, id)}, id));
  }
  const auto pts = threshold_sweep(bundles, {}, default_sweep_thresholds());
  REQUIRE(pts.size() == 7);
  for (const auto& p : pts) {
    CHECK(p.retained_count == 4);
    CHECK(p.mean_human_rho->value() == 1.0);
    CHECK_FALSE(p.mean_model_rho);
  }

  const auto none = threshold_sweep(std::span<const AnnotationBundle>{}, {}, default_sweep_thresholds());
  for (const auto& p : none) {
    CHECK(p.empty());
    CHECK_FALSE(p.mean_human_rho);
  }
  std::ostringstream os;
  write_sweep_table(os, none);
  CHECK(os.str().find("empty") != std::string::npos);

  const std::vector<Threshold> unsorted{Threshold::at(0.6), Threshold::at(0.2)};
  CHECK_THROWS_AS(threshold_sweep(bundles, {}, unsorted), ValidationError);
}

TEST_CASE("threshold_sweep with model rankings") {
  const auto b1 = bundle_of({rk("a", {1, 2, 3, 4, 5}, "x"), rk("b", {1, 2, 3, 5, 4}, "x")}, "x");
  const auto b2 = bundle_of({rk("a", {1, 2, 3, 4, 5}, "y"), rk("b", {5, 4, 3, 2, 1}, "y")}, "y");
  const std::vector<AnnotationBundle> bundles{b1, b2};
  const std::map<std::string, Ranking> model{{"x", rk("m", {1, 2, 3, 4, 5}, "x")},
                                             {"y", rk("m", {1, 2, 3, 4, 5}, "y")}};
  const std::vector<Threshold> grid{Threshold::none(), Threshold::at(0.5), Threshold::at(1.0)};
  const auto pts = threshold_sweep(bundles, model, grid);
  CHECK(pts[0].retained_count == 2);
  CHECK(pts[0].mean_human_rho->value() == Approx((0.9 - 1.0) / 2));
  CHECK(pts[0].mean_model_rho->value() == Approx((0.95 + 0.0) / 2));
  CHECK(pts[1].retained_count == 1);
  CHECK(pts[1].mean_model_rho->value() == Approx(0.95));
  CHECK(pts[2].empty());
  CHECK_FALSE(pts[2].mean_model_rho);

  std::ostringstream os;
  write_sweep_table(os, pts);
  CHECK(os.str() ==
        "threshold\tretained_count\tmean_human_rho\tmean_model_rho\n"
        "none\t2\t-0.050000\t0.475000\n"
        "0.5\t1\t0.900000\t0.950000\n"
        "1\t0\tempty\tempty\n");
}

TEST_CASE("sweep counts are non-increasing and human means non-decreasing") {
  const auto corpus = irr::testing::build_synthetic_corpus(irr::testing::en_spec());
  std::vector<AnnotationBundle> bundles;
  for (const auto& i : corpus) bundles.push_back(*i.annotations);
  const auto pts = threshold_sweep(bundles, {}, default_sweep_thresholds());
  for (std::size_t i = 1; i < pts.size(); ++i) {
    CHECK(pts[i].retained_count <= pts[i - 1].retained_count);
    CHECK(pts[i].mean_human_rho->value() >= pts[i - 1].mean_human_rho->value());
  }
  // the 1.0 bar
  CHECK(pts.back().retained_count == 14);
}

TEST_CASE("aggregate_model_score examples") {
  const std::vector<Correlation> ones{Correlation(1.0), Correlation(1.0)};
  CHECK(aggregate_model_score(ones).value() == 1.0);
  const std::vector<Correlation> mixed{Correlation(0.9), Correlation(0.3)};
  CHECK(aggregate_model_score(mixed).value() == Approx(0.6).epsilon(1e-15));
  const std::vector<Correlation> sym{Correlation(-1.0), Correlation(1.0)};
  CHECK(aggregate_model_score(sym).value() == 0.0);
  CHECK_THROWS_AS(aggregate_model_score(std::span<const Correlation>{}), ValidationError);
}

TEST_CASE("orientation strings") {
  CHECK(parse_orientation("higher_better") == Orientation::higher_better);
  CHECK(to_string(Orientation::lower_better) == "lower_better");
  CHECK_THROWS_AS(parse_orientation("up"), ValidationError);
}
