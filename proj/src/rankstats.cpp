#include "irr/rankstats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "irr/error.hpp"

namespace irr {

namespace {

constexpr double kRoundingAllowance = 1e-12;

bool is_tie_free_permutation(std::span<const double> ranks) {
  const auto n = ranks.size();
  std::vector<bool> seen(n + 1, false);
  for (double r : ranks) {
    if (r != std::floor(r) || r < 1 || r > static_cast<double>(n)) return false;
    auto k = static_cast<std::size_t>(r);
    if (seen[k]) return false;
    seen[k] = true;
  }
  return true;
}

void check_pair(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ValidationError("rank vectors differ in length (" + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  }
  if (a.size() < 2) throw ValidationError("spearman needs at least 2 items");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
      throw ValidationError("non-finite rank at position " + std::to_string(i));
    }
  }
}

std::optional<Correlation> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  return Correlation(std::accumulate(values.begin(), values.end(), 0.0) /
                     static_cast<double>(values.size()));
}

}  // namespace

Correlation::Correlation(double rho) : rho_(rho) {
  if (std::isnan(rho)) throw DegenerateInputError("correlation is NaN");
  if (rho > 1.0) {
    if (rho > 1.0 + kRoundingAllowance) throw DegenerateInputError("correlation above 1");
    rho_ = 1.0;
  } else if (rho < -1.0) {
    if (rho < -1.0 - kRoundingAllowance) throw DegenerateInputError("correlation below -1");
    rho_ = -1.0;
  }
}

std::string to_string(Orientation o) {
  return o == Orientation::lower_better ? "lower_better" : "higher_better";
}

Orientation parse_orientation(std::string_view text) {
  if (text == "lower_better") return Orientation::lower_better;
  if (text == "higher_better") return Orientation::higher_better;
  throw ValidationError("unknown orientation '" + std::string(text) + "'");
}

Threshold Threshold::at(double value) {
  if (!(value >= -1.0 && value <= 1.0)) {
    throw ValidationError("threshold must lie in [-1, 1]");
  }
  Threshold t;
  t.value_ = value;
  return t;
}

Threshold Threshold::parse(std::string_view text) {
  if (text == "none" || text == "None" || text == "NONE") return none();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ValidationError("threshold must be a number or 'none', got '" + std::string(text) + "'");
  }
  return at(v);
}

std::string Threshold::to_string() const {
  if (!value_) return "none";
  std::ostringstream os;
  os << *value_;
  return os.str();
}

bool Threshold::operator<(const Threshold& other) const noexcept {
  if (!value_) return other.value_.has_value();
  if (!other.value_) return false;
  return *value_ < *other.value_;
}

double product_moment(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b);
  const auto n = static_cast<double>(a.size());
  const double mean_a = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mean_b = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double cov = 0.0, var_a = 0.0, var_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    cov += da * db;
    var_a += da * da;
    var_b += db * db;
  }
  if (var_a == 0.0 || var_b == 0.0) {
    throw DegenerateInputError("zero rank variance: all ranks equal");
  }
  return cov / std::sqrt(var_a * var_b);
}

Correlation spearman(std::span<const double> ranks_a, std::span<const double> ranks_b) {
  check_pair(ranks_a, ranks_b);
  if (is_tie_free_permutation(ranks_a) && is_tie_free_permutation(ranks_b)) {
    // Integer numerator keeps decile values exactly representable as the
    // nearest double (e.g. 24/120 == 0.2).
    const long long n = static_cast<long long>(ranks_a.size());
    const long long denom = n * (n * n - 1);
    long long sum_d2 = 0;
    for (std::size_t i = 0; i < ranks_a.size(); ++i) {
      const auto d = static_cast<long long>(ranks_a[i]) - static_cast<long long>(ranks_b[i]);
      sum_d2 += d * d;
    }
    return Correlation(static_cast<double>(denom - 6 * sum_d2) / static_cast<double>(denom));
  }
  return Correlation(product_moment(ranks_a, ranks_b));
}

std::vector<double> fractional_ranks(std::span<const double> scores, Orientation orientation) {
  if (scores.empty()) throw ValidationError("cannot rank an empty score vector");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) {
      throw ValidationError("non-finite score at position " + std::to_string(i));
    }
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return orientation == Orientation::lower_better ? scores[x] < scores[y]
                                                    : scores[x] > scores[y];
  });

  std::vector<double> ranks(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // Positions i..j-1 (0-based) hold ranks i+1..j; their mean is (i+1+j)/2.
    const double shared = static_cast<double>(i + 1 + j) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = shared;
    i = j;
  }
  return ranks;
}

AgreementRecord best_pair(const AnnotationBundle& bundle) {
  if (bundle.rankings.size() < 2) {
    throw ValidationError("instance '" + bundle.instance_id + "' has " +
                          std::to_string(bundle.rankings.size()) +
                          " annotation(s); best pair needs at least 2");
  }
  std::vector<const Ranking*> raters;
  for (const auto& r : bundle.rankings) raters.push_back(&r);
  std::sort(raters.begin(), raters.end(),
            [](const Ranking* x, const Ranking* y) { return x->rater_id < y->rater_id; });

  std::optional<AgreementRecord> best;
  for (std::size_t i = 0; i < raters.size(); ++i) {
    for (std::size_t j = i + 1; j < raters.size(); ++j) {
      Correlation rho{0.0};
      try {
        rho = spearman(raters[i]->ranks, raters[j]->ranks);
      } catch (const Error& e) {
        throw DegenerateInputError("instance '" + bundle.instance_id + "', pair (" +
                                   raters[i]->rater_id + ", " + raters[j]->rater_id +
                                   "): " + e.what());
      }
      // Pairs are visited in lexicographic order, so strict > keeps the
      // smallest pair among equals.
      if (!best || rho.value() > best->rho_pair.value()) {
        best = AgreementRecord{bundle.instance_id, raters[i]->rater_id, raters[j]->rater_id, rho};
      }
    }
  }
  return *best;
}

Correlation model_alignment(const Ranking& model, const AnnotationBundle& bundle,
                            const AgreementRecord& pair) {
  const Ranking* a = nullptr;
  const Ranking* b = nullptr;
  for (const auto& r : bundle.rankings) {
    if (r.rater_id == pair.rater_a) a = &r;
    if (r.rater_id == pair.rater_b) b = &r;
  }
  if (!a || !b) {
    throw ValidationError("best pair raters missing from bundle '" + bundle.instance_id + "'");
  }
  const double with_a = spearman(model.ranks, a->ranks).value();
  const double with_b = spearman(model.ranks, b->ranks).value();
  return Correlation((with_a + with_b) / 2.0);
}

Correlation model_alignment(const Ranking& model, const AnnotationBundle& bundle) {
  return model_alignment(model, bundle, best_pair(bundle));
}

std::set<std::string> filter_instances(std::span<const AgreementRecord> records,
                                       const Threshold& threshold) {
  std::set<std::string> retained;
  for (const auto& rec : records) {
    if (threshold.admits(rec.rho_pair.value())) retained.insert(rec.instance_id);
  }
  return retained;
}

namespace {

void require_ascending(std::span<const Threshold> thresholds) {
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (thresholds[i] < thresholds[i - 1]) {
      throw ValidationError("sweep thresholds must be sorted ascending");
    }
  }
}

}  // namespace

std::vector<SweepPoint> threshold_sweep(std::span<const AgreementRecord> records,
                                        std::span<const Threshold> thresholds) {
  require_ascending(thresholds);
  std::vector<SweepPoint> points;
  for (const auto& t : thresholds) {
    std::vector<double> human;
    for (const auto& rec : records) {
      if (t.admits(rec.rho_pair.value())) human.push_back(rec.rho_pair.value());
    }
    SweepPoint p;
    p.threshold = t;
    p.retained_count = human.size();
    p.mean_human_rho = mean_of(human);
    points.push_back(std::move(p));
  }
  return points;
}

std::vector<SweepPoint> threshold_sweep(std::span<const AnnotationBundle> bundles,
                                        const std::map<std::string, Ranking>& model_rankings,
                                        std::span<const Threshold> thresholds) {
  require_ascending(thresholds);
  std::vector<AgreementRecord> records;
  std::vector<std::optional<double>> alignment;
  records.reserve(bundles.size());
  for (const auto& bundle : bundles) {
    auto rec = best_pair(bundle);
    std::optional<double> align;
    if (auto it = model_rankings.find(bundle.instance_id); it != model_rankings.end()) {
      align = model_alignment(it->second, bundle, rec).value();
    }
    records.push_back(std::move(rec));
    alignment.push_back(align);
  }

  std::vector<SweepPoint> points;
  for (const auto& t : thresholds) {
    std::vector<double> human, model;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (!t.admits(records[i].rho_pair.value())) continue;
      human.push_back(records[i].rho_pair.value());
      if (alignment[i]) model.push_back(*alignment[i]);
    }
    SweepPoint p;
    p.threshold = t;
    p.retained_count = human.size();
    p.mean_human_rho = mean_of(human);
    p.mean_model_rho = mean_of(model);
    p.model_count = model.size();
    points.push_back(std::move(p));
  }
  return points;
}

Correlation aggregate_model_score(std::span<const Correlation> per_instance) {
  if (per_instance.empty()) throw ValidationError("cannot aggregate an empty list");
  double sum = 0.0;
  for (const auto& c : per_instance) sum += c.value();
  return Correlation(sum / static_cast<double>(per_instance.size()));
}

void write_sweep_table(std::ostream& out, std::span<const SweepPoint> points, char delimiter) {
  auto cell = [](const std::optional<Correlation>& c) {
    if (!c) return std::string("empty");
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << c->value();
    return os.str();
  };
  out << "threshold" << delimiter << "retained_count" << delimiter << "mean_human_rho"
      << delimiter << "mean_model_rho\n";
  for (const auto& p : points) {
    // No model column at all is an empty cell; a model column over an empty
    // retained set is marked like the human column.
    const std::string model =
        p.mean_model_rho ? cell(p.mean_model_rho) : (p.empty() ? "empty" : "");
    out << p.threshold.to_string() << delimiter << p.retained_count << delimiter
        << cell(p.mean_human_rho) << delimiter << model << '\n';
  }
}

std::vector<Threshold> default_sweep_thresholds() {
  return {Threshold::none(),    Threshold::at(0.0), Threshold::at(0.2), Threshold::at(0.4),
          Threshold::at(0.6),   Threshold::at(0.8), Threshold::at(1.0)};
}

}  // namespace irr
