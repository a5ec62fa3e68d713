#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "compfscil/data.hpp"
#include "compfscil/training.hpp"

namespace compfscil {

enum class Head { Composition, Baseline, AllMatch, MaxMatch };

std::string to_string(Head head);
Head parse_head(const std::string& name);

/// Scores one feature map against every registered class of a model.
class Scorer {
 public:
  Scorer(const ModelState& state, Head head);
  Scorer(const PrimitiveBank& bank, const ClassifierWeights& weights, double alpha, Head head);

  /// One score per bank class, in registration order.
  Vector scores(const Matrix& x) const;
  /// argmax over `candidates` (bank indices); ties go to the lowest index.
  std::size_t predict(const Matrix& x, std::span<const std::size_t> candidates) const;
  std::size_t predict(const Vector& scores, std::span<const std::size_t> candidates) const;

  const std::vector<ClassId>& classes() const { return classes_; }

 private:
  Head head_;
  double alpha_;
  std::vector<ClassId> classes_;
  int per_class_ = 0;
  Matrix stacked_;  // all centered primitives, class-major (composition head)
  Vector gram_norms_;
  const PrimitiveBank* bank_ = nullptr;
  Matrix unit_rows_;  // normalized classifier rows (baseline head)
};

struct SessionResult {
  int session = 0;
  std::size_t samples = 0;
  double overall = 0.0;
  double base = 0.0;
  std::optional<double> novel;
};

struct ConfusionEntry {
  ClassId truth = 0;
  ClassId predicted = 0;
  std::size_t count = 0;
};

struct EvalReport {
  Head head = Head::Composition;
  std::vector<SessionResult> sessions;
  double pd = 0.0;
  std::vector<ConfusionEntry> confusion;  // last evaluated session
  std::uint64_t seed = 0;
  Hyperparams hp;
};

/// test_sets[k] holds test samples of the classes seen up to session k. Session k is scored over
/// the classes registered in sessions 0..k; frozen parameters make this identical to scoring the
/// session-k model.
EvalReport evaluate_sessions(const ModelState& state,
                             const std::vector<std::vector<FeatureMap>>& test_sets, Head head,
                             int threads = 1);

/// evaluate_sessions over every session the model has seen.
EvalReport evaluate_dataset(const ModelState& state, const Dataset& data, Head head,
                            int threads = 1);

/// First minus last overall accuracy.
double performance_drop(std::span<const double> overall);

struct FilterPoint {
  int keep = 0;
  double accuracy = 0.0;
};

/// Keeps each sample's top-k patches by importance against the class predicted from the full map
/// (or the true class), re-scores every candidate class, and reports accuracy per k.
std::vector<FilterPoint> importance_filter_eval(const ModelState& state,
                                                std::span<const FeatureMap> test,
                                                std::span<const int> keep_counts,
                                                bool rank_by_true_label = false, int threads = 1);

double retention_percent(double original_accuracy, double replaced_accuracy);

struct RetentionPoint {
  double ratio = 0.0;
  double novel_accuracy = 0.0;
  double retention = 0.0;
};

/// Novel-class accuracy after hard nearest-base-primitive replacement, relative to the original.
std::vector<RetentionPoint> reuse_retention_eval(const ModelState& state,
                                                 std::span<const FeatureMap> test,
                                                 std::span<const double> ratios,
                                                 std::uint64_t seed, int threads = 1);

/// Base session followed by every incremental session of the dataset's schedule.
ModelState run_sessions(const Dataset& data, const Hyperparams& hp,
                        const TrainOptions& options = {});

struct SweepRow {
  int primitives = 0;
  EvalReport report;
};

std::vector<SweepRow> primitive_count_sweep(const Dataset& data, std::span<const int> counts,
                                            const Hyperparams& hp,
                                            const TrainOptions& options = {});

/// Median wall-clock seconds (over `repetitions`) to composition-score and argmax `maps`.
double throughput_bench(const ModelState& state, std::span<const FeatureMap> maps,
                        int repetitions = 5);

/// Mann-Whitney AUC of `scores` separating positives from negatives; ties count one half.
double auc(std::span<const double> scores, const std::vector<bool>& positive);

/// Mean over samples of the AUC with which patch importance separates annotated shared patches
/// from distractors. Samples without both kinds are skipped.
double importance_auc(const ModelState& state, std::span<const FeatureMap> test,
                      const std::map<std::string, SampleAnnotation>& annotations,
                      bool rank_by_true_label = false);

/// Per class: the top-k (sample, patch, importance) triples among that class's samples and, for
/// each primitive, its nearest primitive of another class.
nlohmann::json composition_retrieval(const ModelState& state, std::span<const FeatureMap> samples,
                                     int top_k);

nlohmann::json report_to_json(const EvalReport& report);
std::string report_to_table(const EvalReport& report);

}  // namespace compfscil
