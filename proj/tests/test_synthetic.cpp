#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "irr/harness.hpp"
#include "irr/rankstats.hpp"
#include "support/synthetic.hpp"

using namespace irr;
using namespace irr::testing;

namespace {

std::vector<double> human_means(const std::vector<CorpusInstance>& corpus) {
  const auto th = default_sweep_thresholds();
  std::vector<double> out;
  for (const auto& p : sweep(corpus, nullptr, th).points) out.push_back(p.mean_human_rho->value());
  return out;
}

// Largest mean best-pair rho reachable at each sweep threshold given only the
// retained counts. Tie-free rho over five items is 1 - d2/20 with d2 even, so
// every value is a whole number of tenths; each band between two thresholds
// can do no better than its highest tenth.
std::vector<double> mean_upper_bounds(const std::vector<int>& cumulative) {
  // band k holds thresholds [t_k, t_{k+1}); tenths cap per band, top band first
  const std::vector<int> cap{10, 9, 7, 5, 3, 1, -1};
  std::vector<int> sizes;
  for (std::size_t i = cumulative.size(); i-- > 0;) {
    const int above = i + 1 < cumulative.size() ? cumulative[i + 1] : 0;
    sizes.insert(sizes.begin(), cumulative[i] - above);
  }
  // sizes[0] is the "none" band (rho < 0), sizes[6] is rho = 1
  std::vector<double> out;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    long units = 0;
    int n = 0;
    for (std::size_t j = k; j < sizes.size(); ++j) {
      units += static_cast<long>(sizes[j]) * cap[sizes.size() - 1 - j];
      n += sizes[j];
    }
    out.push_back(static_cast<double>(units) / (10.0 * n));
  }
  return out;
}

}  // namespace

TEST_CASE("tie-free rho over five items is a whole number of tenths") {
  std::set<int> seen;
  for (const auto& a : permutations5()) {
    for (const auto& b : permutations5()) {
      const int d2 = sum_d2(a, b);
      CHECK(d2 % 2 == 0);
      seen.insert(d2);
    }
  }
  CHECK(seen.size() == 21);  // d2 in {0, 2, ..., 40}
  CHECK(*seen.rbegin() == 40);
}

TEST_CASE("synthetic corpora are well formed") {
  for (const auto& spec : {en_spec(), ja_spec()}) {
    const auto corpus = build_synthetic_corpus(spec);
    REQUIRE(corpus.size() == 207);
    std::map<std::string, int> cats;
    std::set<std::string> ids;
    for (const auto& inst : corpus) {
      CHECK_NOTHROW(validate(inst));
      CHECK(inst.review_set.language == spec.language);
      REQUIRE(inst.annotations);
      CHECK(inst.annotations->annotator_count() == 3);
      ids.insert(inst.id());
      ++cats[inst.review_set.category];
    }
    CHECK(ids.size() == 207);
    const auto names = category_names();
    for (std::size_t i = 0; i < names.size(); ++i) CHECK(cats[std::string(names[i])] == spec.category_counts[i]);
    // deterministic
    CHECK(build_synthetic_corpus(spec) == corpus);
  }
}

TEST_CASE("EN human sweep matches the published row") {
  const auto m = human_means(build_synthetic_corpus(en_spec()));
  const std::vector<double> published{0.539, 0.588, 0.677, 0.766, 0.795, 0.927, 1.0};
  for (std::size_t i = 0; i < published.size(); ++i) CHECK(std::abs(m[i] - published[i]) <= 0.005);
}

TEST_CASE("JA human sweep: reachable cells match, the low thresholds hit the bound") {
  const auto bounds = mean_upper_bounds({207, 202, 186, 169, 158, 94, 39});
  CHECK(bounds[0] == doctest::Approx(1450.0 / 2070.0));
  const std::vector<double> published{0.712, 0.728, 0.780, 0.824, 0.846, 0.942};
  // the published values at none, 0 and 0.2 exceed what the counts allow
  for (std::size_t i = 0; i < 3; ++i) CHECK(bounds[i] < published[i] - 0.005);
  for (std::size_t i = 3; i < 6; ++i) CHECK(bounds[i] >= published[i] - 0.005);

  const auto m = human_means(build_synthetic_corpus(ja_spec()));
  for (std::size_t i = 0; i < 3; ++i) CHECK(m[i] == doctest::Approx(bounds[i]).epsilon(1e-12));
  for (std::size_t i = 3; i < 6; ++i) CHECK(std::abs(m[i] - published[i]) <= 0.005);
  CHECK(m[6] == 1.0);
}

TEST_CASE("tiny corpus") {
  const auto c = tiny_corpus(5, Language::ja);
  CHECK(c.size() == 5);
  CHECK(c[0].id() == "t1");
  for (const auto& inst : c) {
    CHECK_NOTHROW(validate(inst));
    CHECK(inst.review_set.language == Language::ja);
  }
}
