#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "compfscil/primitives.hpp"

namespace compfscil {

/// Baseline cosine-classifier prototypes, one row per class.
struct ClassifierWeights {
  std::vector<ClassId> classes;
  Matrix rows;  // K x d
  std::vector<bool> frozen;

  std::size_t size() const { return classes.size(); }
  std::size_t index_of(ClassId id) const;
};

struct Hyperparams {
  double tau = 16.0;
  double alpha = 0.8;
  double gamma = 64.0;
  double lambda_cmp = 2.0;
  double lambda_rcmp = 2.0;
  int primitives = 16;
  double lr = 0.01;
  double momentum = 0.9;
  int base_epochs = 100;
  int incremental_epochs = 50;
  int batch_size = 64;
  std::uint64_t seed = 0;
  /// Train new classifier rows (and keep L_cls) in incremental sessions.
  bool incremental_cls = true;
  /// Treat attention weights in the replacement loss as constants.
  bool stop_attention_grad = false;
};

/// Patch-mean feature f(x).
RowVector pooled_feature(const Matrix& x);

double loss_cls(const FeatureMap& sample, const ClassifierWeights& weights, double tau);

/// Cross-entropy over tau * composition scores against every class block of `bank`.
double loss_cmp(const FeatureMap& sample, const PrimitiveBank& bank, double tau, double alpha);

/// loss_cmp evaluated on the attention-replaced blocks, rebuilt from `bank` on every call.
double loss_rcmp(const FeatureMap& sample, const PrimitiveBank& bank, const DonorMap& donors,
                 double tau, double alpha, double gamma);

/// Which parameters receive gradient. Entries are per class (outer) and per row (inner).
struct TrainableMask {
  std::vector<std::vector<bool>> primitive_rows;
  std::vector<bool> classifier_rows;

  /// Everything not flagged frozen in the bank / classifier is trainable.
  static TrainableMask from_frozen(const PrimitiveBank& bank, const ClassifierWeights& weights);
  bool any() const;
};

struct Gradients {
  std::vector<Matrix> primitives;  // one N x d block per class
  Matrix classifier;               // K x d
};

struct LossBreakdown {
  double total = 0.0;
  double cls = 0.0;
  double cmp = 0.0;
  double rcmp = 0.0;
};

struct LossAndGrad {
  LossBreakdown loss;
  Gradients grad;
};

struct LossConfig {
  double tau = 16.0;
  double alpha = 0.8;
  double gamma = 64.0;
  double lambda_cls = 1.0;
  double lambda_cmp = 2.0;
  double lambda_rcmp = 2.0;
  bool stop_attention_grad = false;
};

LossConfig loss_config(const Hyperparams& hp);

/// Batch-mean of L_cls + lambda1 L_cmp + lambda2 L_rcmp with analytic gradients. Gradient entries
/// outside `mask` are exactly zero. Per-sample terms may run on `threads` workers; reduction is in
/// sample order, so results do not depend on the thread count.
LossAndGrad total_loss_and_grad(std::span<const FeatureMap* const> batch,
                                const PrimitiveBank& bank, const ClassifierWeights& weights,
                                const DonorMap& donors, const LossConfig& config,
                                const TrainableMask& mask, int threads = 1);

/// Value-only batch loss composed from loss_cls / loss_cmp / loss_rcmp.
double total_loss(std::span<const FeatureMap* const> batch, const PrimitiveBank& bank,
                  const ClassifierWeights& weights, const DonorMap& donors,
                  const LossConfig& config);

/// Flattening helpers: all primitive blocks in class order, then classifier rows.
Vector pack_parameters(const PrimitiveBank& bank, const ClassifierWeights& weights);
void unpack_parameters(const Vector& flat, PrimitiveBank& bank, ClassifierWeights& weights);
Vector pack_gradients(const Gradients& grad);

}  // namespace compfscil
