#include "irr/annotation_service.hpp"

#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>

#include <httplib.h>

#include "irr/elicitation.hpp"
#include "irr/error.hpp"
#include "irr/hashing.hpp"

namespace irr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string random_token() {
  std::random_device rd;
  std::uniform_int_distribution<int> nibble(0, 15);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string token(32, '0');
  for (auto& c : token) c = kHex[nibble(rd)];
  return token;
}

SlotRanks slot_ranks_from_json(const json& j) {
  if (!j.is_array() || j.size() != kReviewsPerImage) {
    throw ValidationError("slot_ranks must be an array of 5 ranks");
  }
  SlotRanks out{};
  for (std::size_t i = 0; i < kReviewsPerImage; ++i) {
    if (!j[i].is_number_integer()) throw ValidationError("slot_ranks must be integers");
    out[i] = j[i].get<int>();
  }
  return out;
}

json assignment_event(const AnnotationAssignment& a) {
  return json{{"event", "assignment_created"},
              {"assignment_id", a.assignment_id},
              {"instance_id", a.instance_id},
              {"rater_id", a.rater_id},
              {"presentation_order", a.presentation_order},
              {"rng_seed", a.rng_seed},
              {"access_token", a.access_token}};
}

bool same_assignment(const AnnotationAssignment& x, const AnnotationAssignment& y) {
  return x.assignment_id == y.assignment_id && x.instance_id == y.instance_id &&
         x.rater_id == y.rater_id && x.presentation_order == y.presentation_order &&
         x.rng_seed == y.rng_seed && x.access_token == y.access_token;
}

}  // namespace

std::uint64_t assignment_seed(std::uint64_t seed, std::string_view instance_id,
                              std::string_view rater_id) {
  std::string material = std::to_string(seed);
  material.push_back('\0');
  material.append(instance_id);
  material.push_back('\0');
  material.append(rater_id);
  return stable_hash64(material);
}

PresentationOrder presentation_order_for(std::uint64_t rng_seed) {
  std::mt19937_64 gen(rng_seed);
  PresentationOrder order{};
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i + 1);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    // Unbiased draw from [0, i] by rejection.
    const std::uint64_t bound = i + 1;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r = gen();
    while (r >= limit) r = gen();
    std::swap(order[i], order[static_cast<std::size_t>(r % bound)]);
  }
  return order;
}

AssignmentPlan create_assignments(std::span<const CorpusInstance> corpus,
                                  std::span<const std::string> rater_ids, std::uint64_t seed) {
  std::set<std::string> unique;
  for (const auto& r : rater_ids) {
    if (r.empty()) throw ValidationError("empty rater id");
    if (!unique.insert(r).second) throw ValidationError("duplicate rater id '" + r + "'");
  }
  AssignmentPlan plan;
  if (rater_ids.size() < 3) {
    plan.warnings.push_back("only " + std::to_string(rater_ids.size()) +
                            " rater(s); at least 3 are expected per image");
  }
  for (const auto& r : rater_ids) plan.rater_tokens[r] = random_token();

  for (const auto& inst : corpus) {
    for (const auto& rater : rater_ids) {
      AnnotationAssignment a;
      a.instance_id = inst.id();
      a.rater_id = rater;
      a.rng_seed = assignment_seed(seed, a.instance_id, rater);
      a.presentation_order = presentation_order_for(a.rng_seed);
      a.assignment_id = sha256_hex(std::to_string(seed) + '\0' + a.instance_id + '\0' + rater)
                            .substr(0, 20);
      a.access_token = plan.rater_tokens[rater];
      plan.assignments.push_back(std::move(a));
    }
  }
  return plan;
}

RankVector ranks_from_slots(const PresentationOrder& order, const SlotRanks& slot_ranks) {
  std::array<bool, kReviewsPerImage + 1> seen{};
  for (int r : slot_ranks) {
    if (r < 1 || r > static_cast<int>(kReviewsPerImage)) {
      throw ValidationError("rank " + std::to_string(r) + " outside 1..5");
    }
    if (seen[r]) throw ValidationError("ties not allowed: rank " + std::to_string(r) + " repeated");
    seen[r] = true;
  }
  RankVector ranks{};
  for (std::size_t s = 0; s < kReviewsPerImage; ++s) {
    ranks[static_cast<std::size_t>(order[s] - 1)] = slot_ranks[s];
  }
  return ranks;
}

json to_json(const TaskView& view) {
  json slots = json::array();
  for (const auto& s : view.slots) {
    slots.push_back(json{{"slot_label", std::string(1, s.label)}, {"body", s.body}});
  }
  return json{{"assignment_id", view.assignment_id},
              {"image_ref", view.image_ref},
              {"slots", std::move(slots)},
              {"instruction", view.instruction}};
}

AnnotationStore::AnnotationStore(fs::path event_log, std::vector<CorpusInstance> corpus)
    : log_path_(std::move(event_log)), corpus_(std::move(corpus)) {
  for (std::size_t i = 0; i < corpus_.size(); ++i) corpus_index_[corpus_[i].id()] = i;
  if (log_path_.has_parent_path()) fs::create_directories(log_path_.parent_path());
  replay();
  log_ = std::fopen(log_path_.c_str(), "a");
  if (!log_) throw Error("cannot open event log " + log_path_.string());
}

AnnotationStore::~AnnotationStore() {
  if (log_) std::fclose(log_);
}

void AnnotationStore::replay() {
  std::ifstream in(log_path_);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto ev = json::parse(line, nullptr, false);
    if (ev.is_discarded()) {
      // Only the final line can be torn by a crash mid-write.
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw Error(log_path_.string() + ":" + std::to_string(line_no) + ": corrupt event");
    }
    const auto kind = ev.at("event").get<std::string>();
    const auto id = ev.at("assignment_id").get<std::string>();
    if (kind == "assignment_created") {
      AnnotationAssignment a;
      a.assignment_id = id;
      a.instance_id = ev.at("instance_id");
      a.rater_id = ev.at("rater_id");
      a.presentation_order = ev.at("presentation_order").get<PresentationOrder>();
      a.rng_seed = ev.at("rng_seed");
      a.access_token = ev.value("access_token", "");
      assignments_.emplace(id, std::move(a));
    } else if (kind == "ranking_submitted") {
      auto it = assignments_.find(id);
      if (it == assignments_.end()) {
        throw Error(log_path_.string() + ":" + std::to_string(line_no) +
                    ": submission for unknown assignment");
      }
      auto& a = it->second;
      const auto slots = slot_ranks_from_json(ev.at("slot_ranks"));
      a.status = AssignmentStatus::submitted;
      a.submitted_slot_ranks = slots;
      a.submitted_ranking =
          Ranking{a.instance_id, a.rater_id, ranks_from_slots(a.presentation_order, slots),
                  TiePolicy::none};
    }
  }
}

void AnnotationStore::append_event(const json& event) {
  const auto line = event.dump() + "\n";
  if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() || std::fflush(log_) != 0 ||
      ::fsync(::fileno(log_)) != 0) {
    throw Error("failed to persist event to " + log_path_.string());
  }
}

const CorpusInstance& AnnotationStore::instance_for(const std::string& instance_id) const {
  auto it = corpus_index_.find(instance_id);
  if (it == corpus_index_.end()) throw NotFoundError("unknown instance '" + instance_id + "'");
  return corpus_[it->second];
}

void AnnotationStore::add(std::span<const AnnotationAssignment> assignments) {
  std::lock_guard lock(mu_);
  for (const auto& a : assignments) {
    instance_for(a.instance_id);
    if (auto it = assignments_.find(a.assignment_id); it != assignments_.end()) {
      if (!same_assignment(it->second, a)) {
        throw ConflictError("assignment '" + a.assignment_id + "' already exists");
      }
      continue;
    }
    AnnotationAssignment fresh = a;
    fresh.status = AssignmentStatus::pending;
    fresh.submitted_ranking.reset();
    fresh.submitted_slot_ranks.reset();
    append_event(assignment_event(fresh));
    assignments_.emplace(fresh.assignment_id, std::move(fresh));
  }
}

TaskView AnnotationStore::build_view(const AnnotationAssignment& a) const {
  const auto& rs = instance_for(a.instance_id).review_set;
  TaskView view;
  view.assignment_id = a.assignment_id;
  view.image_ref = rs.image_ref;
  view.instruction = std::string(annotator_instruction());
  for (std::size_t s = 0; s < kReviewsPerImage; ++s) {
    const auto text_index = a.presentation_order[s];
    auto review = std::find_if(rs.reviews.begin(), rs.reviews.end(),
                               [&](const ReviewText& t) { return t.index == text_index; });
    view.slots[s] = TaskSlot{static_cast<char>('A' + s), review->body};
  }
  return view;
}

TaskView AnnotationStore::get_task(const std::string& assignment_id) const {
  std::lock_guard lock(mu_);
  auto it = assignments_.find(assignment_id);
  if (it == assignments_.end()) throw NotFoundError("unknown assignment '" + assignment_id + "'");
  if (it->second.status == AssignmentStatus::submitted) {
    throw ConflictError("assignment '" + assignment_id + "' already submitted");
  }
  return build_view(it->second);
}

TaskView AnnotationStore::view_of(const std::string& assignment_id) const {
  std::lock_guard lock(mu_);
  auto it = assignments_.find(assignment_id);
  if (it == assignments_.end()) throw NotFoundError("unknown assignment '" + assignment_id + "'");
  return build_view(it->second);
}

Ranking AnnotationStore::submit_ranking(const std::string& assignment_id,
                                        const SlotRanks& slot_ranks) {
  std::lock_guard lock(mu_);
  auto it = assignments_.find(assignment_id);
  if (it == assignments_.end()) throw NotFoundError("unknown assignment '" + assignment_id + "'");
  auto& a = it->second;
  const auto ranks = ranks_from_slots(a.presentation_order, slot_ranks);
  if (a.status == AssignmentStatus::submitted) {
    if (a.submitted_slot_ranks == slot_ranks) return *a.submitted_ranking;
    throw ConflictError("assignment '" + assignment_id + "' already has a different ranking");
  }
  Ranking r{a.instance_id, a.rater_id, ranks, TiePolicy::none};
  append_event(json{{"event", "ranking_submitted"},
                    {"assignment_id", assignment_id},
                    {"slot_ranks", slot_ranks},
                    {"ranks", ranks}});
  a.status = AssignmentStatus::submitted;
  a.submitted_slot_ranks = slot_ranks;
  a.submitted_ranking = r;
  return r;
}

std::optional<AnnotationAssignment> AnnotationStore::find(const std::string& assignment_id) const {
  std::lock_guard lock(mu_);
  auto it = assignments_.find(assignment_id);
  if (it == assignments_.end()) return std::nullopt;
  return it->second;
}

std::vector<AnnotationAssignment> AnnotationStore::assignments() const {
  std::lock_guard lock(mu_);
  std::vector<AnnotationAssignment> out;
  for (const auto& [_, a] : assignments_) out.push_back(a);
  return out;
}

std::vector<CorpusInstance> AnnotationStore::annotated_corpus() const {
  std::lock_guard lock(mu_);
  auto out = corpus_;
  for (const auto& [_, a] : assignments_) {
    if (!a.submitted_ranking) continue;
    auto& inst = out[corpus_index_.at(a.instance_id)];
    if (!inst.annotations) inst.annotations = AnnotationBundle{inst.id(), {}};
    auto& rankings = inst.annotations->rankings;
    std::erase_if(rankings, [&](const Ranking& r) { return r.rater_id == a.rater_id; });
    rankings.push_back(*a.submitted_ranking);
  }
  for (auto& inst : out) {
    if (!inst.annotations) continue;
    std::sort(inst.annotations->rankings.begin(), inst.annotations->rankings.end(),
              [](const Ranking& x, const Ranking& y) { return x.rater_id < y.rater_id; });
  }
  return out;
}

void AnnotationStore::write_snapshot(const fs::path& file) const {
  json items = json::array();
  for (const auto& a : assignments()) {
    json j = assignment_event(a);
    j.erase("event");
    j.erase("access_token");
    j["status"] = a.status == AssignmentStatus::submitted ? "submitted" : "pending";
    if (a.submitted_ranking) j["ranks"] = a.submitted_ranking->ranks;
    items.push_back(std::move(j));
  }
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw Error("cannot write snapshot " + file.string());
  out << json{{"assignments", std::move(items)}}.dump(2) << '\n';
}

AgreementReport agreement_report(std::span<const CorpusInstance> corpus,
                                 const Threshold& threshold) {
  AgreementReport report;
  report.threshold = threshold;
  for (const auto& inst : corpus) {
    const auto n = inst.annotations ? inst.annotations->annotator_count() : 0;
    if (n < 2) {
      report.incomplete.emplace_back(inst.id(), n);
      continue;
    }
    report.records.push_back(best_pair(*inst.annotations));
  }
  report.retained = filter_instances(report.records, threshold);
  std::vector<Correlation> kept;
  for (const auto& rec : report.records) {
    if (report.retained.contains(rec.instance_id)) kept.push_back(rec.rho_pair);
  }
  if (!kept.empty()) report.mean_retained_rho = aggregate_model_score(kept);
  return report;
}

json to_json(const AgreementReport& report) {
  json records = json::array();
  for (const auto& rec : report.records) {
    records.push_back(json{{"instance_id", rec.instance_id},
                           {"rater_a", rec.rater_a},
                           {"rater_b", rec.rater_b},
                           {"rho_pair", rec.rho_pair.value()},
                           {"retained", report.retained.contains(rec.instance_id)}});
  }
  json incomplete = json::array();
  for (const auto& [id, n] : report.incomplete) {
    incomplete.push_back(json{{"instance_id", id}, {"annotations", n}});
  }
  json summary{{"threshold", report.threshold.to_string()},
               {"evaluated", report.records.size()},
               {"retained_count", report.retained.size()},
               {"mean_best_pair_rho", report.mean_retained_rho
                                          ? json(report.mean_retained_rho->value())
                                          : json("empty")}};
  return json{{"summary", std::move(summary)},
              {"records", std::move(records)},
              {"incomplete", std::move(incomplete)}};
}

struct AnnotationServer::Impl {
  AnnotationStore& store;
  Threshold default_threshold;
  httplib::Server server;
  std::thread thread;
  int port = -1;

  Impl(AnnotationStore& s, Threshold t) : store(s), default_threshold(t) {}

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  // Returns false (after replying) when the token does not match.
  bool authorize(const httplib::Request& req, httplib::Response& res, const std::string& id) {
    const auto a = store.find(id);
    if (!a) {
      reply(res, 404, json{{"error", "unknown assignment"}});
      return false;
    }
    if (!a->access_token.empty() && req.get_param_value("token") != a->access_token) {
      reply(res, 403, json{{"error", "invalid token"}});
      return false;
    }
    return true;
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server.Get(R"(/tasks/([A-Za-z0-9_-]+))", [this](const httplib::Request& req,
                                                    httplib::Response& res) {
      const std::string id = req.matches[1];
      if (!authorize(req, res, id)) return;
      try {
        reply(res, 200, to_json(store.get_task(id)));
      } catch (const ConflictError& e) {
        // Read-only view: the task plus the order that was submitted.
        const auto a = store.find(id);
        json body{{"error", e.what()},
                  {"task", to_json(store.view_of(id))},
                  {"slot_ranks", *a->submitted_slot_ranks}};
        reply(res, 409, body);
      } catch (const NotFoundError& e) {
        reply(res, 404, json{{"error", e.what()}});
      }
    });

    server.Post(R"(/tasks/([A-Za-z0-9_-]+)/ranking)", [this](const httplib::Request& req,
                                                             httplib::Response& res) {
      const std::string id = req.matches[1];
      if (!authorize(req, res, id)) return;
      try {
        const auto body = json::parse(req.body);
        const auto slots = slot_ranks_from_json(body.at("slot_ranks"));
        store.submit_ranking(id, slots);
        // The response echoes slot ranks only; true indices stay server-side.
        reply(res, 200, json{{"assignment_id", id}, {"status", "submitted"}, {"slot_ranks", slots}});
      } catch (const json::exception& e) {
        reply(res, 400, json{{"error", std::string("bad request body: ") + e.what()}});
      } catch (const ValidationError& e) {
        reply(res, 400, json{{"error", e.what()}});
      } catch (const ConflictError& e) {
        reply(res, 409, json{{"error", e.what()}});
      } catch (const NotFoundError& e) {
        reply(res, 404, json{{"error", e.what()}});
      }
    });

    server.Get("/reports/agreement", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const auto t = req.has_param("threshold")
                           ? Threshold::parse(req.get_param_value("threshold"))
                           : default_threshold;
        const auto corpus = store.annotated_corpus();
        reply(res, 200, to_json(agreement_report(corpus, t)));
      } catch (const ValidationError& e) {
        reply(res, 400, json{{"error", e.what()}});
      } catch (const Error& e) {
        reply(res, 422, json{{"error", e.what()}});
      }
    });
  }
};

AnnotationServer::AnnotationServer(AnnotationStore& store, Threshold default_threshold,
                                   std::optional<fs::path> static_dir)
    : impl_(std::make_unique<Impl>(store, default_threshold)) {
  impl_->routes();
  if (static_dir && !impl_->server.set_mount_point("/", static_dir->string())) {
    throw Error("cannot serve static directory " + static_dir->string());
  }
}

AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::start(const std::string& host) {
  impl_->port = impl_->server.bind_to_any_port(host);
  if (impl_->port < 0) throw Error("cannot bind annotation server on " + host);
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

bool AnnotationServer::listen(const std::string& host, int port) {
  return impl_->server.listen(host, port);
}

void AnnotationServer::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace irr
