#include "compfscil/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "compfscil/error.hpp"
#include "compfscil/parallel.hpp"

namespace compfscil {

using nlohmann::json;

std::string to_string(Head head) {
  switch (head) {
    case Head::Composition: return "composition";
    case Head::Baseline: return "baseline";
    case Head::AllMatch: return "allmatch";
    case Head::MaxMatch: return "maxmatch";
  }
  return "unknown";
}

Head parse_head(const std::string& name) {
  if (name == "composition") return Head::Composition;
  if (name == "baseline") return Head::Baseline;
  if (name == "allmatch") return Head::AllMatch;
  if (name == "maxmatch") return Head::MaxMatch;
  fail(ErrorKind::InvalidInput, "unknown head '" + name + "'");
}

// --- scoring -------------------------------------------------------------------

Scorer::Scorer(const ModelState& state, Head head)
    : Scorer(state.bank, state.weights, state.hp.alpha, head) {}

Scorer::Scorer(const PrimitiveBank& bank, const ClassifierWeights& weights, double alpha, Head head)
    : head_(head), alpha_(alpha), classes_(bank.classes), per_class_(bank.primitives_per_class),
      bank_(&bank) {
  if (head == Head::Composition) {
    stacked_.resize(static_cast<Eigen::Index>(bank.size()) * per_class_, bank.dim);
    gram_norms_.resize(static_cast<Eigen::Index>(bank.size()));
    for (std::size_t c = 0; c < bank.size(); ++c) {
      CenteredSet set;
      try {
        set = prepare_set(bank.blocks[c]);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateSet) throw;
        fail(ErrorKind::DegenerateSet,
             "primitive block of class " + std::to_string(bank.classes[c]) + " is degenerate");
      }
      stacked_.middleRows(static_cast<Eigen::Index>(c) * per_class_, per_class_) = set.centered;
      gram_norms_[static_cast<Eigen::Index>(c)] = set.gram_norm;
    }
  } else if (head == Head::Baseline) {
    if (weights.classes != bank.classes) {
      fail(ErrorKind::InvalidInput, "classifier and primitive bank cover different classes");
    }
    const Vector norms = weights.rows.rowwise().norm();
    if ((norms.array() == 0.0).any()) fail(ErrorKind::DegenerateInput, "zero classifier row");
    unit_rows_ = norms.cwiseInverse().asDiagonal() * weights.rows;
  }
}

Vector Scorer::scores(const Matrix& x) const {
  const auto k = static_cast<Eigen::Index>(classes_.size());
  Vector out(k);
  switch (head_) {
    case Head::Composition: {
      const CenteredSet xs = prepare_set(power_transform(x, alpha_));
      const Matrix cross = xs.centered * stacked_.transpose();  // n x (K N)
      const Eigen::VectorXd col_sq = cross.colwise().squaredNorm().transpose();
      for (Eigen::Index c = 0; c < k; ++c) {
        out[c] = col_sq.segment(c * per_class_, per_class_).sum() / (xs.gram_norm * gram_norms_[c]);
      }
      break;
    }
    case Head::Baseline: {
      const RowVector f = pooled_feature(x);
      const double norm = f.norm();
      if (norm == 0.0) fail(ErrorKind::DegenerateInput, "zero pooled feature");
      out = unit_rows_ * f.transpose() / norm;
      break;
    }
    case Head::AllMatch:
    case Head::MaxMatch: {
      const MatchMode mode = head_ == Head::AllMatch ? MatchMode::Mean : MatchMode::Max;
      for (Eigen::Index c = 0; c < k; ++c) {
        out[c] = allmatch_similarity(x, bank_->blocks[static_cast<std::size_t>(c)], mode);
      }
      break;
    }
  }
  return out;
}

std::size_t Scorer::predict(const Vector& scores, std::span<const std::size_t> candidates) const {
  if (candidates.empty()) fail(ErrorKind::InvalidInput, "no candidate classes");
  std::size_t best = candidates.front();
  for (std::size_t c : candidates) {
    const double s = scores[static_cast<Eigen::Index>(c)];
    const double b = scores[static_cast<Eigen::Index>(best)];
    if (s > b || (s == b && c < best)) best = c;
  }
  return best;
}

std::size_t Scorer::predict(const Matrix& x, std::span<const std::size_t> candidates) const {
  return predict(scores(x), candidates);
}

// --- session evaluation --------------------------------------------------------

namespace {

std::vector<std::size_t> indices_of(const ModelState& state, const std::vector<ClassId>& ids) {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (ClassId id : ids) out.push_back(state.bank.index_of(id));
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> novel_indices(const ModelState& state, int session) {
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < state.bank.size(); ++c) {
    const int s = state.session_of(state.bank.classes[c]);
    if (s >= 1 && s <= session) out.push_back(c);
  }
  return out;
}

double percent(std::size_t hit, std::size_t total) {
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

EvalReport evaluate_sessions(const ModelState& state,
                             const std::vector<std::vector<FeatureMap>>& test_sets, Head head,
                             int threads) {
  const Scorer scorer(state, head);
  EvalReport report;
  report.head = head;
  report.seed = state.hp.seed;
  report.hp = state.hp;
  for (std::size_t s = 0; s < test_sets.size(); ++s) {
    const auto& test = test_sets[s];
    const int session = static_cast<int>(s);
    const auto candidates = indices_of(state, state.classes_up_to(session));
    const auto novel = novel_indices(state, session);
    std::vector<std::size_t> truth(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (!state.bank.contains(test[i].label) || state.session_of(test[i].label) > session) {
        fail(ErrorKind::InvalidInput, "test label " + std::to_string(test[i].label) +
                                          " is not registered by session " + std::to_string(s));
      }
      truth[i] = state.bank.index_of(test[i].label);
    }
    std::vector<std::size_t> overall_pred(test.size());
    std::vector<std::size_t> novel_pred(test.size());
    parallel_for(test.size(), threads, [&](std::size_t i) {
      const Vector sc = scorer.scores(test[i].x);
      overall_pred[i] = scorer.predict(sc, candidates);
      if (state.session_of(test[i].label) >= 1) novel_pred[i] = scorer.predict(sc, novel);
    });

    SessionResult r;
    r.session = session;
    r.samples = test.size();
    std::size_t hit = 0, base_hit = 0, base_total = 0, novel_hit = 0, novel_total = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      hit += overall_pred[i] == truth[i];
      if (state.session_of(test[i].label) == 0) {
        ++base_total;
        base_hit += overall_pred[i] == truth[i];
      } else {
        ++novel_total;
        novel_hit += novel_pred[i] == truth[i];
      }
    }
    r.overall = percent(hit, test.size());
    r.base = percent(base_hit, base_total);
    if (novel_total > 0) r.novel = percent(novel_hit, novel_total);
    report.sessions.push_back(r);

    if (s + 1 == test_sets.size()) {
      std::map<std::pair<ClassId, ClassId>, std::size_t> counts;
      for (std::size_t i = 0; i < test.size(); ++i) {
        ++counts[{test[i].label, state.bank.classes[overall_pred[i]]}];
      }
      for (const auto& [key, n] : counts) report.confusion.push_back({key.first, key.second, n});
    }
  }
  std::vector<double> overall;
  for (const auto& r : report.sessions) overall.push_back(r.overall);
  if (!overall.empty()) report.pd = performance_drop(overall);
  return report;
}

EvalReport evaluate_dataset(const ModelState& state, const Dataset& data, Head head, int threads) {
  std::vector<std::vector<FeatureMap>> sets;
  for (int s = 0; s < state.sessions_seen; ++s) sets.push_back(data.test_up_to(s));
  return evaluate_sessions(state, sets, head, threads);
}

double performance_drop(std::span<const double> overall) {
  if (overall.empty()) fail(ErrorKind::InvalidInput, "no sessions");
  return overall.front() - overall.back();
}

// --- analyses ------------------------------------------------------------------

namespace {

std::vector<std::size_t> top_rows(const Vector& importance, int keep) {
  std::vector<std::size_t> order(static_cast<std::size_t>(importance.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return importance[static_cast<Eigen::Index>(a)] > importance[static_cast<Eigen::Index>(b)];
  });
  order.resize(static_cast<std::size_t>(keep));
  std::sort(order.begin(), order.end());
  return order;
}

Matrix select_rows(const Matrix& x, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(rows[r]));
  }
  return out;
}

Vector importance_against(const ModelState& state, const Matrix& x, std::size_t class_index) {
  return patch_importance(power_transform(x, state.hp.alpha), state.bank.blocks[class_index]);
}

int last_session_of(const ModelState& state, std::span<const FeatureMap> test) {
  int s = 0;
  for (const auto& m : test) s = std::max(s, state.session_of(m.label));
  return s;
}

}  // namespace

std::vector<FilterPoint> importance_filter_eval(const ModelState& state,
                                                std::span<const FeatureMap> test,
                                                std::span<const int> keep_counts,
                                                bool rank_by_true_label, int threads) {
  if (test.empty()) fail(ErrorKind::InvalidInput, "empty test set");
  for (int k : keep_counts) {
    for (const auto& m : test) {
      if (k < 1 || k > m.x.rows()) {
        fail(ErrorKind::InvalidInput, "keep count " + std::to_string(k) + " outside [1, " +
                                          std::to_string(m.x.rows()) + "]");
      }
    }
  }
  const Scorer scorer(state, Head::Composition);
  const auto candidates = indices_of(state, state.classes_up_to(last_session_of(state, test)));
  std::vector<std::vector<char>> correct(keep_counts.size(), std::vector<char>(test.size(), 0));
  parallel_for(test.size(), threads, [&](std::size_t i) {
    const FeatureMap& m = test[i];
    const std::size_t truth = state.bank.index_of(m.label);
    const std::size_t anchor = rank_by_true_label ? truth : scorer.predict(m.x, candidates);
    const Vector importance = importance_against(state, m.x, anchor);
    for (std::size_t j = 0; j < keep_counts.size(); ++j) {
      const Matrix reduced = select_rows(m.x, top_rows(importance, keep_counts[j]));
      correct[j][i] = scorer.predict(reduced, candidates) == truth;
    }
  });
  std::vector<FilterPoint> out;
  for (std::size_t j = 0; j < keep_counts.size(); ++j) {
    const auto hits = static_cast<std::size_t>(std::count(correct[j].begin(), correct[j].end(), 1));
    out.push_back({keep_counts[j], percent(hits, test.size())});
  }
  return out;
}

double retention_percent(double original_accuracy, double replaced_accuracy) {
  if (!(original_accuracy > 0.0)) {
    fail(ErrorKind::DegenerateInput, "original accuracy is zero; retention undefined");
  }
  return 100.0 * (replaced_accuracy / original_accuracy);
}

std::vector<RetentionPoint> reuse_retention_eval(const ModelState& state,
                                                 std::span<const FeatureMap> test,
                                                 std::span<const double> ratios,
                                                 std::uint64_t seed, int threads) {
  std::vector<ClassId> base, novel;
  for (const auto& r : state.registry) (r.session == 0 ? base : novel).push_back(r.id);
  if (novel.empty()) fail(ErrorKind::InvalidInput, "model has no novel classes");
  std::vector<const FeatureMap*> samples;
  for (const auto& m : test) {
    if (state.session_of(m.label) >= 1) samples.push_back(&m);
  }
  if (samples.empty()) fail(ErrorKind::InvalidInput, "test set has no novel-class samples");

  auto novel_accuracy = [&](const PrimitiveBank& bank) {
    const Scorer scorer(bank, state.weights, state.hp.alpha, Head::Composition);
    std::vector<std::size_t> candidates;
    for (ClassId id : novel) candidates.push_back(bank.index_of(id));
    std::sort(candidates.begin(), candidates.end());
    std::vector<char> hit(samples.size(), 0);
    parallel_for(samples.size(), threads, [&](std::size_t i) {
      hit[i] = scorer.predict(samples[i]->x, candidates) == bank.index_of(samples[i]->label);
    });
    return percent(static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1)), samples.size());
  };

  const double original = novel_accuracy(state.bank);
  if (!(original > 0.0)) fail(ErrorKind::DegenerateInput, "original novel accuracy is zero");
  std::vector<RetentionPoint> out;
  for (double ratio : ratios) {
    const PrimitiveBank replaced = hard_nearest_replace(state.bank, novel, base, ratio, seed);
    const double acc = novel_accuracy(replaced);
    out.push_back({ratio, acc, retention_percent(original, acc)});
  }
  return out;
}

ModelState run_sessions(const Dataset& data, const Hyperparams& hp, const TrainOptions& options) {
  data.schedule.validate();
  const auto base_train = data.train_session(0);
  ModelState state = train_base(base_train, data.schedule.base, hp, options);
  for (std::size_t s = 1; s < data.schedule.session_count(); ++s) {
    const auto shots = data.train_session(static_cast<int>(s));
    state = train_incremental(state, shots, options);
  }
  return state;
}

std::vector<SweepRow> primitive_count_sweep(const Dataset& data, std::span<const int> counts,
                                            const Hyperparams& hp, const TrainOptions& options) {
  std::vector<SweepRow> rows;
  for (int n : counts) {
    if (n < 1) fail(ErrorKind::InvalidInput, "primitive count must be positive");
    Hyperparams run = hp;
    run.primitives = n;
    const ModelState state = run_sessions(data, run, options);
    rows.push_back({n, evaluate_dataset(state, data, Head::Composition, options.threads)});
  }
  return rows;
}

double throughput_bench(const ModelState& state, std::span<const FeatureMap> maps,
                        int repetitions) {
  const Scorer scorer(state, Head::Composition);
  std::vector<std::size_t> candidates(state.bank.size());
  std::iota(candidates.begin(), candidates.end(), std::size_t{0});
  std::vector<double> times;
  std::size_t sink = 0;
  for (int r = 0; r < std::max(repetitions, 1); ++r) {
    const auto start = std::chrono::steady_clock::now();
    for (const auto& m : maps) sink += scorer.predict(m.x, candidates);
    const auto stop = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(stop - start).count());
  }
  std::sort(times.begin(), times.end());
  volatile std::size_t keep = sink;
  (void)keep;
  return times[times.size() / 2];
}

double auc(std::span<const double> scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) fail(ErrorKind::InvalidInput, "auc size mismatch");
  double wins = 0.0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!positive[i]) continue;
    ++pos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (positive[j]) continue;
      wins += scores[i] > scores[j] ? 1.0 : (scores[i] == scores[j] ? 0.5 : 0.0);
    }
  }
  for (bool p : positive) neg += !p;
  if (pos == 0 || neg == 0) fail(ErrorKind::InvalidInput, "auc needs both classes");
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

double importance_auc(const ModelState& state, std::span<const FeatureMap> test,
                      const std::map<std::string, SampleAnnotation>& annotations,
                      bool rank_by_true_label) {
  const Scorer scorer(state, Head::Composition);
  const auto candidates = indices_of(state, state.classes_up_to(last_session_of(state, test)));
  double total = 0.0;
  std::size_t used = 0;
  for (const auto& m : test) {
    const auto it = annotations.find(m.sample_id);
    if (it == annotations.end()) continue;
    const auto& shared = it->second.shared;
    const bool mixed = std::find(shared.begin(), shared.end(), true) != shared.end() &&
                       std::find(shared.begin(), shared.end(), false) != shared.end();
    if (!mixed) continue;
    const std::size_t anchor =
        rank_by_true_label ? state.bank.index_of(m.label) : scorer.predict(m.x, candidates);
    const Vector importance = importance_against(state, m.x, anchor);
    total += auc(std::span<const double>(importance.data(), static_cast<std::size_t>(importance.size())),
                 shared);
    ++used;
  }
  if (used == 0) fail(ErrorKind::InvalidInput, "no annotated samples with shared and distractor patches");
  return total / static_cast<double>(used);
}

json composition_retrieval(const ModelState& state, std::span<const FeatureMap> samples,
                           int top_k) {
  json classes = json::array();
  for (std::size_t c = 0; c < state.bank.size(); ++c) {
    struct Hit {
      double importance;
      std::string sample;
      int patch;
    };
    std::vector<Hit> hits;
    for (const auto& m : samples) {
      if (m.label != state.bank.classes[c]) continue;
      const Vector importance = importance_against(state, m.x, c);
      for (Eigen::Index p = 0; p < importance.size(); ++p) {
        hits.push_back({importance[p], m.sample_id, static_cast<int>(p)});
      }
    }
    std::stable_sort(hits.begin(), hits.end(),
                     [](const Hit& a, const Hit& b) { return a.importance > b.importance; });
    if (static_cast<int>(hits.size()) > top_k) hits.resize(static_cast<std::size_t>(top_k));
    json top = json::array();
    for (const auto& h : hits) {
      top.push_back({{"sample", h.sample}, {"patch", h.patch}, {"importance", h.importance}});
    }

    json pairs = json::array();
    const Matrix& block = state.bank.blocks[c];
    for (Eigen::Index i = 0; i < block.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_class = c;
      Eigen::Index best_row = -1;
      for (std::size_t o = 0; o < state.bank.size(); ++o) {
        if (o == c) continue;
        Eigen::Index row = 0;
        const double d =
            (state.bank.blocks[o].rowwise() - block.row(i)).rowwise().squaredNorm().minCoeff(&row);
        if (d < best) {
          best = d;
          best_class = o;
          best_row = row;
        }
      }
      if (best_row < 0) continue;
      pairs.push_back({{"primitive", i},
                       {"nearest_class", state.bank.classes[best_class]},
                       {"nearest_primitive", best_row},
                       {"squared_distance", best}});
    }
    classes.push_back({{"class", state.bank.classes[c]},
                       {"session", state.session_of(state.bank.classes[c])},
                       {"top_patches", top},
                       {"nearest_primitives", pairs}});
  }
  return {{"classes", classes}};
}

// --- reporting -----------------------------------------------------------------

json report_to_json(const EvalReport& report) {
  json sessions = json::array();
  for (const auto& s : report.sessions) {
    sessions.push_back({{"session", s.session},
                        {"samples", s.samples},
                        {"overall", s.overall},
                        {"base", s.base},
                        {"novel", s.novel ? json(*s.novel) : json(nullptr)}});
  }
  json confusion = json::array();
  for (const auto& e : report.confusion) {
    confusion.push_back({{"true", e.truth}, {"predicted", e.predicted}, {"count", e.count}});
  }
  return {{"sessions", sessions},
          {"pd", report.pd},
          {"head", to_string(report.head)},
          {"seed", report.seed},
          {"hyperparams", hyperparams_to_json(report.hp)},
          {"confusion", confusion}};
}

std::string report_to_table(const EvalReport& report) {
  std::ostringstream out;
  char line[128];
  out << "head: " << to_string(report.head) << "\n";
  std::snprintf(line, sizeof line, "%-8s %8s %8s %8s %8s\n", "session", "samples", "overall",
                "base", "novel");
  out << line;
  for (const auto& s : report.sessions) {
    char novel[16] = "       -";
    if (s.novel) std::snprintf(novel, sizeof novel, "%8.2f", *s.novel);
    std::snprintf(line, sizeof line, "%-8d %8zu %8.2f %8.2f %s\n", s.session, s.samples,
                  s.overall, s.base, novel);
    out << line;
  }
  std::snprintf(line, sizeof line, "PD %.2f\n", report.pd);
  out << line;
  return out.str();
}

}  // namespace compfscil
