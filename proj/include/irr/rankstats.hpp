#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "irr/corpus.hpp"

namespace irr {

/// A rank correlation in [-1, 1]. Never NaN.
class Correlation {
 public:
  /// Throws DegenerateInputError for NaN or values outside [-1, 1]
  /// (beyond a 1e-12 rounding allowance, which is clamped).
  explicit Correlation(double rho);

  double value() const noexcept { return rho_; }
  auto operator<=>(const Correlation&) const = default;

 private:
  double rho_ = 0.0;
};

enum class Orientation { lower_better, higher_better };

std::string to_string(Orientation o);
Orientation parse_orientation(std::string_view text);

/// Agreement threshold; the empty state is the "none" sentinel that keeps
/// every instance and sorts below every numeric threshold.
class Threshold {
 public:
  static Threshold none() { return Threshold{}; }
  /// Throws ValidationError outside [-1, 1].
  static Threshold at(double value);
  /// Parses "none" or a decimal number.
  static Threshold parse(std::string_view text);

  bool is_none() const noexcept { return !value_; }
  double value() const { return *value_; }
  bool admits(double rho) const noexcept { return !value_ || rho >= *value_; }
  std::string to_string() const;

  bool operator==(const Threshold&) const = default;
  bool operator<(const Threshold& other) const noexcept;

 private:
  std::optional<double> value_;
};

struct AgreementRecord {
  std::string instance_id;
  std::string rater_a;  // rater_a < rater_b
  std::string rater_b;
  Correlation rho_pair{0.0};
};

/// Empty means no instance survived the threshold; no mean is fabricated.
struct SweepPoint {
  Threshold threshold;
  std::size_t retained_count = 0;
  std::optional<Correlation> mean_human_rho;
  std::optional<Correlation> mean_model_rho;
  /// Retained instances that had a model ranking.
  std::size_t model_count = 0;

  bool empty() const noexcept { return retained_count == 0; }
};

/// Spearman's rho. Tie-free rank vectors (permutations of 1..n) use the
/// closed form; anything else is the product-moment correlation of the
/// vectors as given, so callers pass fractional ranks for tied scores.
Correlation spearman(std::span<const double> ranks_a, std::span<const double> ranks_b);

/// Pearson product-moment correlation; throws DegenerateInputError on zero variance.
double product_moment(std::span<const double> a, std::span<const double> b);

/// Best score gets rank 1; ties share the mean of the positions they span.
std::vector<double> fractional_ranks(std::span<const double> scores, Orientation orientation);

/// Highest-agreement annotator pair; ties broken by the lexicographically
/// smallest (rater_a, rater_b).
AgreementRecord best_pair(const AnnotationBundle& bundle);

/// Mean of the model's correlation with each member of the best pair.
Correlation model_alignment(const Ranking& model, const AnnotationBundle& bundle);
Correlation model_alignment(const Ranking& model, const AnnotationBundle& bundle,
                            const AgreementRecord& pair);

std::set<std::string> filter_instances(std::span<const AgreementRecord> records,
                                       const Threshold& threshold);

/// One point per threshold, in the given (ascending) order. model_rankings
/// is keyed by instance_id and may be empty.
std::vector<SweepPoint> threshold_sweep(std::span<const AnnotationBundle> bundles,
                                        const std::map<std::string, Ranking>& model_rankings,
                                        std::span<const Threshold> thresholds);

/// Same, from precomputed best pairs (no model column).
std::vector<SweepPoint> threshold_sweep(std::span<const AgreementRecord> records,
                                        std::span<const Threshold> thresholds);

Correlation aggregate_model_score(std::span<const Correlation> per_instance);

/// Header: threshold, retained_count, mean_human_rho, mean_model_rho.
/// Empty cells are written as "empty".
void write_sweep_table(std::ostream& out, std::span<const SweepPoint> points,
                       char delimiter = '\t');

/// The standard sweep grid: none, 0, 0.2, 0.4, 0.6, 0.8, 1.0.
std::vector<Threshold> default_sweep_thresholds();

}  // namespace irr
