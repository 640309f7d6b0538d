#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "irr/corpus.hpp"
#include "irr/rankstats.hpp"

namespace irr {

/// order[s] is the true text index (1..5) shown in presentation slot s.
using PresentationOrder = std::array<int, kReviewsPerImage>;
/// slot_ranks[s] is the rank an annotator gave to slot s.
using SlotRanks = std::array<int, kReviewsPerImage>;

enum class AssignmentStatus { pending, submitted };

struct AnnotationAssignment {
  std::string assignment_id;
  std::string instance_id;
  std::string rater_id;
  PresentationOrder presentation_order{};
  std::uint64_t rng_seed = 0;
  /// Opaque per-rater token expected as ?token= on task URLs.
  std::string access_token;
  AssignmentStatus status = AssignmentStatus::pending;
  std::optional<SlotRanks> submitted_slot_ranks;
  std::optional<Ranking> submitted_ranking;
};

/// Seed for one (instance, rater) pair, derived from the run seed.
std::uint64_t assignment_seed(std::uint64_t seed, std::string_view instance_id,
                              std::string_view rater_id);

/// Seeded permutation of 1..5 (Fisher-Yates over mt19937_64), identical on
/// every platform.
PresentationOrder presentation_order_for(std::uint64_t rng_seed);

struct AssignmentPlan {
  std::vector<AnnotationAssignment> assignments;
  std::map<std::string, std::string> rater_tokens;
  std::vector<std::string> warnings;
};

/// One assignment per (instance, rater). Throws ValidationError on
/// duplicate rater ids; fewer than three raters only warns.
AssignmentPlan create_assignments(std::span<const CorpusInstance> corpus,
                                  std::span<const std::string> rater_ids, std::uint64_t seed);

/// Maps ranks given to presentation slots back to true text indices.
/// Throws ValidationError unless slot_ranks is a permutation of 1..5.
RankVector ranks_from_slots(const PresentationOrder& order, const SlotRanks& slot_ranks);

struct TaskSlot {
  char label = 'A';
  std::string body;
};

/// What an annotator sees. Carries no true text indices or labels.
struct TaskView {
  std::string assignment_id;
  std::string image_ref;
  std::array<TaskSlot, kReviewsPerImage> slots;
  std::string instruction;
};

nlohmann::json to_json(const TaskView& view);

/// Assignment state backed by an append-only, fsync'd event log. Reopening
/// the log replays every event, so submitted rankings survive restarts.
class AnnotationStore {
 public:
  AnnotationStore(std::filesystem::path event_log, std::vector<CorpusInstance> corpus);
  ~AnnotationStore();
  AnnotationStore(const AnnotationStore&) = delete;
  AnnotationStore& operator=(const AnnotationStore&) = delete;

  /// Persists new assignments. Re-adding an identical assignment is a no-op;
  /// a different assignment under an existing id is a ConflictError.
  void add(std::span<const AnnotationAssignment> assignments);

  /// Throws NotFoundError or ConflictError (already submitted).
  TaskView get_task(const std::string& assignment_id) const;

  /// Same view regardless of status, for read-only display after submission.
  TaskView view_of(const std::string& assignment_id) const;

  /// Validates, maps slots to text indices, persists, and returns the
  /// Ranking. An identical re-submission returns the stored Ranking; a
  /// different one is a ConflictError.
  Ranking submit_ranking(const std::string& assignment_id, const SlotRanks& slot_ranks);

  std::optional<AnnotationAssignment> find(const std::string& assignment_id) const;
  std::vector<AnnotationAssignment> assignments() const;

  /// The corpus with submitted rankings merged into each instance's bundle
  /// (a submission replaces a stored ranking from the same rater).
  std::vector<CorpusInstance> annotated_corpus() const;

  /// Writes the derived current state as one JSON document.
  void write_snapshot(const std::filesystem::path& file) const;

  const std::filesystem::path& event_log() const noexcept { return log_path_; }

 private:
  void append_event(const nlohmann::json& event);
  void replay();
  const CorpusInstance& instance_for(const std::string& instance_id) const;
  TaskView build_view(const AnnotationAssignment& a) const;

  std::filesystem::path log_path_;
  std::FILE* log_ = nullptr;
  std::vector<CorpusInstance> corpus_;
  std::map<std::string, std::size_t> corpus_index_;
  mutable std::mutex mu_;
  std::map<std::string, AnnotationAssignment> assignments_;
};

struct AgreementReport {
  Threshold threshold;
  std::vector<AgreementRecord> records;
  std::set<std::string> retained;
  /// (instance_id, annotation count) for instances with fewer than 2.
  std::vector<std::pair<std::string, std::size_t>> incomplete;
  std::optional<Correlation> mean_retained_rho;
};

AgreementReport agreement_report(std::span<const CorpusInstance> corpus, const Threshold& threshold);

nlohmann::json to_json(const AgreementReport& report);

/// HTTP front end:
///   GET  /tasks/{id}?token=..
///   POST /tasks/{id}/ranking?token=..   {"slot_ranks": [5 ints]}
///   GET  /reports/agreement?threshold=..
class AnnotationServer {
 public:
  AnnotationServer(AnnotationStore& store, Threshold default_threshold,
                   std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  /// Binds an ephemeral port and serves on a background thread.
  int start(const std::string& host = "127.0.0.1");
  /// Blocks serving on host:port until stop().
  bool listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace irr
