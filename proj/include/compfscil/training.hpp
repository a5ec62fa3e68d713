#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "compfscil/data.hpp"
#include "compfscil/losses.hpp"

namespace compfscil {

struct ClassRecord {
  ClassId id = 0;
  int session = 0;
};

struct ModelState {
  PrimitiveBank bank;
  ClassifierWeights weights;
  Hyperparams hp;
  int sessions_seen = 0;
  std::vector<ClassRecord> registry;
  /// Mean training loss per epoch, one list per session.
  std::vector<std::vector<double>> epoch_losses;

  int session_of(ClassId id) const;
  std::vector<bool> base_flags() const;
  /// Classes registered in sessions 0..session, in registration order.
  std::vector<ClassId> classes_up_to(int session) const;
};

struct OptimizerState {
  std::vector<Matrix> primitive_velocity;
  Matrix classifier_velocity;
  double lr = 0.01;
  double momentum = 0.9;

  static OptimizerState zeros_like(const PrimitiveBank& bank, const ClassifierWeights& weights,
                                   double lr, double momentum);
};

/// v <- momentum v + g; theta <- theta - lr v.
void sgd_step(Matrix& param, const Matrix& grad, Matrix& velocity, double lr, double momentum);

/// Applies sgd_step to every unmasked row; masked rows and their velocity stay untouched.
void sgd_step(PrimitiveBank& bank, ClassifierWeights& weights, const Gradients& grad,
              OptimizerState& opt, const TrainableMask& mask);

enum class ClassifierInit { ClassMean, Gaussian };

struct TrainOptions {
  InitScheme primitive_init{};
  ClassifierInit classifier_init = ClassifierInit::ClassMean;
  double classifier_sigma = 0.1;
  int threads = 1;
};

/// Mean of the row-normalized pooled features of the class's samples.
RowVector class_mean_prototype(std::span<const FeatureMap> maps, ClassId label);

/// Trains primitives and classifier rows of every base class on session-0 data.
ModelState train_base(std::span<const FeatureMap> data, std::span<const ClassId> base_classes,
                      const Hyperparams& hp, const TrainOptions& options = {});

/// Registers the shots' classes, initializes their primitives and classifier rows, and trains
/// only those while everything registered earlier stays frozen.
ModelState train_incremental(const ModelState& state, std::span<const FeatureMap> shots,
                             const TrainOptions& options = {});

nlohmann::json hyperparams_to_json(const Hyperparams& hp);
/// Overlays the keys present in `j` onto `base`; unknown keys raise InvalidInput.
Hyperparams hyperparams_from_json(const nlohmann::json& j, Hyperparams base = {});

/// Checkpoint directory: bank.ckat (|Y| x N x d), bank.json, classifier.ckat (|Y| x d),
/// state.json (hyperparameters, class registry, session counter, RNG streams, loss history).
void save_checkpoint(const std::filesystem::path& dir, const ModelState& state);
ModelState load_checkpoint(const std::filesystem::path& dir);

}  // namespace compfscil
