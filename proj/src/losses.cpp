#include "compfscil/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "compfscil/error.hpp"
#include "compfscil/parallel.hpp"

namespace compfscil {

std::size_t ClassifierWeights::index_of(ClassId id) const {
  const auto it = std::find(classes.begin(), classes.end(), id);
  if (it == classes.end()) fail(ErrorKind::InvalidInput, "unknown class " + std::to_string(id));
  return static_cast<std::size_t>(it - classes.begin());
}

RowVector pooled_feature(const Matrix& x) { return x.colwise().mean(); }

namespace {

struct CosineLogits {
  Vector cosines;
  RowVector feature;
  double feature_norm = 0.0;
  Vector row_norms;
};

CosineLogits cosine_logits(const Matrix& x, const Matrix& rows) {
  CosineLogits out;
  out.feature = pooled_feature(x);
  out.feature_norm = out.feature.norm();
  if (out.feature_norm == 0.0) fail(ErrorKind::DegenerateInput, "zero pooled feature");
  out.row_norms = rows.rowwise().norm();
  if ((out.row_norms.array() == 0.0).any()) {
    fail(ErrorKind::DegenerateInput, "zero-norm classifier row");
  }
  out.cosines = (rows * out.feature.transpose()).cwiseQuotient(out.row_norms) / out.feature_norm;
  return out;
}

double cross_entropy(const Vector& logits, std::size_t label) {
  const auto y = static_cast<Eigen::Index>(label);
  const Vector gaps = logits.array() - logits[y];
  if (gaps.maxCoeff() > 0.0) return log_sum_exp(logits) - logits[y];
  double tail = 0.0;
  for (Eigen::Index j = 0; j < gaps.size(); ++j) {
    if (j != y) tail += std::exp(gaps[j]);
  }
  return std::log1p(tail);
}

std::size_t label_index(const std::vector<ClassId>& classes, ClassId label) {
  const auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) {
    fail(ErrorKind::InvalidInput, "label " + std::to_string(label) + " is not registered");
  }
  return static_cast<std::size_t>(it - classes.begin());
}

double composition_loss(const Matrix& transformed, const std::vector<Matrix>& blocks,
                        const std::vector<ClassId>& classes, std::size_t label, double tau) {
  const CenteredSet xs = prepare_set(transformed);
  Vector logits(static_cast<Eigen::Index>(blocks.size()));
  for (std::size_t c = 0; c < blocks.size(); ++c) {
    try {
      logits[static_cast<Eigen::Index>(c)] = tau * linear_cka(xs, prepare_set(blocks[c]));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateSet) throw;
      fail(ErrorKind::DegenerateSet,
           "primitive block of class " + std::to_string(classes[c]) + " is degenerate");
    }
  }
  return cross_entropy(logits, label);
}

}  // namespace

double loss_cls(const FeatureMap& sample, const ClassifierWeights& weights, double tau) {
  const std::size_t label = label_index(weights.classes, sample.label);
  const CosineLogits logits = cosine_logits(sample.x, weights.rows);
  return cross_entropy(tau * logits.cosines, label);
}

double loss_cmp(const FeatureMap& sample, const PrimitiveBank& bank, double tau, double alpha) {
  const std::size_t label = label_index(bank.classes, sample.label);
  return composition_loss(power_transform(sample.x, alpha), bank.blocks, bank.classes, label, tau);
}

double loss_rcmp(const FeatureMap& sample, const PrimitiveBank& bank, const DonorMap& donors,
                 double tau, double alpha, double gamma) {
  const std::size_t label = label_index(bank.classes, sample.label);
  const ReplacedBank replaced = replace_all(bank, donors, gamma);
  return composition_loss(power_transform(sample.x, alpha), replaced.blocks, bank.classes, label,
                          tau);
}

TrainableMask TrainableMask::from_frozen(const PrimitiveBank& bank,
                                         const ClassifierWeights& weights) {
  TrainableMask mask;
  for (std::size_t c = 0; c < bank.size(); ++c) {
    mask.primitive_rows.emplace_back(static_cast<std::size_t>(bank.primitives_per_class),
                                     !bank.frozen[c]);
  }
  for (std::size_t c = 0; c < weights.size(); ++c) mask.classifier_rows.push_back(!weights.frozen[c]);
  return mask;
}

bool TrainableMask::any() const {
  for (const auto& rows : primitive_rows) {
    if (std::any_of(rows.begin(), rows.end(), [](bool b) { return b; })) return true;
  }
  return std::any_of(classifier_rows.begin(), classifier_rows.end(), [](bool b) { return b; });
}

LossConfig loss_config(const Hyperparams& hp) {
  LossConfig cfg;
  cfg.tau = hp.tau;
  cfg.alpha = hp.alpha;
  cfg.gamma = hp.gamma;
  cfg.lambda_cmp = hp.lambda_cmp;
  cfg.lambda_rcmp = hp.lambda_rcmp;
  cfg.stop_attention_grad = hp.stop_attention_grad;
  return cfg;
}

namespace {

// Gradient of a composition cross-entropy with respect to centered blocks splits into a
// sample-dependent term  u_c * 2 M^T A~ / (a g_c)  and a class-constant direction
// -2 (sum u_c s_c) G_c Z~_c / g_c^2, so per-sample work only accumulates the first term and a scalar.
struct CompositionAccum {
  Matrix cross;  // (K N) x d, class-major
  Vector beta;

  void reset(std::size_t classes, int rows, int dim) {
    cross.setZero(static_cast<Eigen::Index>(classes) * rows, dim);
    beta.setZero(static_cast<Eigen::Index>(classes));
  }
  void add(const CompositionAccum& other) {
    cross += other.cross;
    beta += other.beta;
  }
};

struct StackedBlocks {
  std::vector<CenteredSet> sets;
  Matrix centered;  // (K N) x d, class-major
  int rows = 0;
};

StackedBlocks stack_blocks(std::vector<CenteredSet> sets, int rows, int dim) {
  StackedBlocks out;
  out.rows = rows;
  out.centered.resize(static_cast<Eigen::Index>(sets.size()) * rows, dim);
  for (std::size_t c = 0; c < sets.size(); ++c) {
    out.centered.middleRows(static_cast<Eigen::Index>(c) * rows, rows) = sets[c].centered;
  }
  out.sets = std::move(sets);
  return out;
}

struct SampleTerms {
  double cls = 0.0;
  double cmp = 0.0;
  double rcmp = 0.0;
  Matrix classifier;
  CompositionAccum cmp_acc;
  CompositionAccum rcmp_acc;
  Matrix cross;
};

double composition_terms(const CenteredSet& xs, const StackedBlocks& blocks, std::size_t label,
                         double tau, CompositionAccum& acc, Matrix& cross) {
  const std::size_t k = blocks.sets.size();
  const int rows = blocks.rows;
  cross.noalias() = xs.centered * blocks.centered.transpose();  // n x (K N)
  Vector scores(static_cast<Eigen::Index>(k));
  for (std::size_t c = 0; c < k; ++c) {
    scores[static_cast<Eigen::Index>(c)] =
        cross.middleCols(static_cast<Eigen::Index>(c) * rows, rows).squaredNorm() /
        (xs.gram_norm * blocks.sets[c].gram_norm);
  }
  const Vector logits = tau * scores;
  const Vector probs = stable_softmax(logits);
  for (std::size_t c = 0; c < k; ++c) {
    const auto ci = static_cast<Eigen::Index>(c);
    const double upstream = tau * (probs[ci] - (c == label ? 1.0 : 0.0));
    cross.middleCols(ci * rows, rows) *= 2.0 * upstream / (xs.gram_norm * blocks.sets[c].gram_norm);
    acc.beta[ci] = upstream * scores[ci];
  }
  acc.cross.noalias() = cross.transpose() * xs.centered;
  return cross_entropy(logits, label);
}

std::vector<Matrix> finish_composition(const CompositionAccum& acc, const StackedBlocks& blocks) {
  std::vector<Matrix> grads(blocks.sets.size());
  for (std::size_t c = 0; c < blocks.sets.size(); ++c) {
    const Matrix& zc = blocks.sets[c].centered;
    const double g = blocks.sets[c].gram_norm;
    Matrix d_centered =
        acc.cross.middleRows(static_cast<Eigen::Index>(c) * blocks.rows, blocks.rows) -
        (2.0 * acc.beta[static_cast<Eigen::Index>(c)] / (g * g)) * (zc * zc.transpose()) * zc;
    // Row centering is a fixed linear projector, so its adjoint re-centers the rows.
    d_centered.colwise() -= d_centered.rowwise().mean();
    grads[c] = std::move(d_centered);
  }
  return grads;
}

void check_alignment(const PrimitiveBank& bank, const ClassifierWeights& weights,
                     const LossConfig& config) {
  if (config.lambda_cls != 0.0 && weights.classes != bank.classes) {
    fail(ErrorKind::InvalidInput, "classifier and primitive bank cover different classes");
  }
}

}  // namespace

LossAndGrad total_loss_and_grad(std::span<const FeatureMap* const> batch,
                                const PrimitiveBank& bank, const ClassifierWeights& weights,
                                const DonorMap& donors, const LossConfig& config,
                                const TrainableMask& mask, int threads) {
  if (batch.empty()) fail(ErrorKind::InvalidInput, "empty batch");
  if (!mask.any()) fail(ErrorKind::InvalidInput, "no trainable parameters");
  if (mask.primitive_rows.size() != bank.size()) {
    fail(ErrorKind::InvalidInput, "mask does not match primitive bank");
  }
  check_alignment(bank, weights, config);

  const std::size_t k = bank.size();
  const int n_prim = bank.primitives_per_class;
  const int dim = bank.dim;
  const bool use_cls = config.lambda_cls != 0.0;
  const bool use_cmp = config.lambda_cmp != 0.0;
  const bool use_rcmp = config.lambda_rcmp != 0.0;

  std::unordered_map<ClassId, std::size_t> label_of;
  for (std::size_t c = 0; c < k; ++c) label_of.emplace(bank.classes[c], c);

  auto prepare_blocks = [&](const std::vector<Matrix>& blocks) {
    std::vector<CenteredSet> sets;
    sets.reserve(blocks.size());
    for (std::size_t c = 0; c < blocks.size(); ++c) {
      try {
        sets.push_back(prepare_set(blocks[c]));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateSet) throw;
        fail(ErrorKind::DegenerateSet,
             "primitive block of class " + std::to_string(bank.classes[c]) + " is degenerate");
      }
    }
    return stack_blocks(std::move(sets), n_prim, dim);
  };

  StackedBlocks z_sets;
  if (use_cmp) z_sets = prepare_blocks(bank.blocks);
  ReplacedBank replaced;
  StackedBlocks zh_sets;
  if (use_rcmp) {
    replaced = replace_all(bank, donors, config.gamma);
    zh_sets = prepare_blocks(replaced.blocks);
  }

  auto compute = [&](std::size_t s, SampleTerms& t) {
    const FeatureMap& sample = *batch[s];
    const auto it = label_of.find(sample.label);
    if (it == label_of.end()) {
      fail(ErrorKind::InvalidInput, "label " + std::to_string(sample.label) + " is not registered");
    }
    const std::size_t label = it->second;
    if (use_cls) {
      const CosineLogits cl = cosine_logits(sample.x, weights.rows);
      const Vector logits = config.tau * cl.cosines;
      const Vector probs = stable_softmax(logits);
      t.cls = cross_entropy(logits, label);
      const RowVector unit_feature = cl.feature / cl.feature_norm;
      t.classifier.setZero(static_cast<Eigen::Index>(k), dim);
      for (std::size_t c = 0; c < k; ++c) {
        const auto ci = static_cast<Eigen::Index>(c);
        const double upstream = config.tau * (probs[ci] - (c == label ? 1.0 : 0.0));
        const double norm = cl.row_norms[ci];
        t.classifier.row(ci) =
            upstream * (unit_feature / norm - cl.cosines[ci] * weights.rows.row(ci) / (norm * norm));
      }
    }
    if (use_cmp || use_rcmp) {
      const CenteredSet xs = prepare_set(power_transform(sample.x, config.alpha));
      if (use_cmp) {
        t.cmp_acc.reset(k, n_prim, dim);
        t.cmp = composition_terms(xs, z_sets, label, config.tau, t.cmp_acc, t.cross);
      }
      if (use_rcmp) {
        t.rcmp_acc.reset(k, n_prim, dim);
        t.rcmp = composition_terms(xs, zh_sets, label, config.tau, t.rcmp_acc, t.cross);
      }
    }
  };

  LossAndGrad out;
  Matrix classifier_sum = Matrix::Zero(static_cast<Eigen::Index>(k), dim);
  CompositionAccum cmp_sum;
  CompositionAccum rcmp_sum;
  cmp_sum.reset(k, n_prim, dim);
  rcmp_sum.reset(k, n_prim, dim);
  auto reduce = [&](const SampleTerms& t) {
    out.loss.cls += t.cls;
    out.loss.cmp += t.cmp;
    out.loss.rcmp += t.rcmp;
    if (use_cls) classifier_sum += t.classifier;
    if (use_cmp) cmp_sum.add(t.cmp_acc);
    if (use_rcmp) rcmp_sum.add(t.rcmp_acc);
  };

  if (threads <= 1) {
    SampleTerms t;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      compute(s, t);
      reduce(t);
    }
  } else {
    std::vector<SampleTerms> terms(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t s) { compute(s, terms[s]); });
    for (const auto& t : terms) reduce(t);
  }

  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  out.loss.cls *= inv_batch;
  out.loss.cmp *= inv_batch;
  out.loss.rcmp *= inv_batch;
  out.loss.total = config.lambda_cls * out.loss.cls + config.lambda_cmp * out.loss.cmp +
                   config.lambda_rcmp * out.loss.rcmp;

  Gradients& grad = out.grad;
  grad.primitives.assign(k, Matrix::Zero(n_prim, dim));
  grad.classifier = Matrix::Zero(static_cast<Eigen::Index>(weights.size()), dim);
  if (use_cls) grad.classifier = (config.lambda_cls * inv_batch) * classifier_sum;

  if (use_cmp) {
    const auto g = finish_composition(cmp_sum, z_sets);
    for (std::size_t c = 0; c < k; ++c) grad.primitives[c] += (config.lambda_cmp * inv_batch) * g[c];
  }
  if (use_rcmp) {
    const auto g_hat = finish_composition(rcmp_sum, zh_sets);
    for (std::size_t c = 0; c < k; ++c) {
      const Matrix upstream = (config.lambda_rcmp * inv_batch) * g_hat[c];  // N x d on Z^_c
      const Matrix& att = replaced.attention[c];                          // N x m
      const Matrix pool = donor_pool(bank, donors[c]);                    // m x d
      Matrix d_pool = att.transpose() * upstream;
      if (!config.stop_attention_grad) {
        const Matrix d_att = upstream * pool.transpose();
        const Vector expected = (att.cwiseProduct(d_att)).rowwise().sum();
        const Matrix d_logit = att.cwiseProduct(d_att.colwise() - expected);  // N x m
        // logit_ik = -gamma ||Z_i - P_k||^2
        const Matrix& z = bank.blocks[c];
        const Vector row_sums = d_logit.rowwise().sum();
        const Vector col_sums = d_logit.colwise().sum().transpose();
        grad.primitives[c] +=
            -2.0 * config.gamma * (row_sums.asDiagonal() * z - d_logit * pool);
        d_pool += 2.0 * config.gamma * (d_logit.transpose() * z - col_sums.asDiagonal() * pool);
      }
      Eigen::Index at = 0;
      for (std::size_t donor : donors[c]) {
        grad.primitives[donor] += d_pool.middleRows(at, n_prim);
        at += n_prim;
      }
    }
  }

  for (std::size_t c = 0; c < k; ++c) {
    for (int r = 0; r < n_prim; ++r) {
      if (!mask.primitive_rows[c][static_cast<std::size_t>(r)]) grad.primitives[c].row(r).setZero();
    }
  }
  for (std::size_t c = 0; c < weights.size(); ++c) {
    if (c >= mask.classifier_rows.size() || !mask.classifier_rows[c]) {
      grad.classifier.row(static_cast<Eigen::Index>(c)).setZero();
    }
  }
  return out;
}

double total_loss(std::span<const FeatureMap* const> batch, const PrimitiveBank& bank,
                  const ClassifierWeights& weights, const DonorMap& donors,
                  const LossConfig& config) {
  if (batch.empty()) fail(ErrorKind::InvalidInput, "empty batch");
  check_alignment(bank, weights, config);
  double sum = 0.0;
  for (const FeatureMap* sample : batch) {
    double value = 0.0;
    if (config.lambda_cls != 0.0) value += config.lambda_cls * loss_cls(*sample, weights, config.tau);
    if (config.lambda_cmp != 0.0) {
      value += config.lambda_cmp * loss_cmp(*sample, bank, config.tau, config.alpha);
    }
    if (config.lambda_rcmp != 0.0) {
      value += config.lambda_rcmp *
               loss_rcmp(*sample, bank, donors, config.tau, config.alpha, config.gamma);
    }
    sum += value;
  }
  return sum / static_cast<double>(batch.size());
}

Vector pack_parameters(const PrimitiveBank& bank, const ClassifierWeights& weights) {
  const Eigen::Index block = static_cast<Eigen::Index>(bank.primitives_per_class) * bank.dim;
  Vector flat(block * static_cast<Eigen::Index>(bank.size()) + weights.rows.size());
  Eigen::Index at = 0;
  for (const auto& b : bank.blocks) {
    flat.segment(at, block) = Eigen::Map<const Vector>(b.data(), block);
    at += block;
  }
  flat.segment(at, weights.rows.size()) =
      Eigen::Map<const Vector>(weights.rows.data(), weights.rows.size());
  return flat;
}

void unpack_parameters(const Vector& flat, PrimitiveBank& bank, ClassifierWeights& weights) {
  const Eigen::Index block = static_cast<Eigen::Index>(bank.primitives_per_class) * bank.dim;
  if (flat.size() != block * static_cast<Eigen::Index>(bank.size()) + weights.rows.size()) {
    fail(ErrorKind::InvalidInput, "parameter vector size mismatch");
  }
  Eigen::Index at = 0;
  for (auto& b : bank.blocks) {
    Eigen::Map<Vector>(b.data(), block) = flat.segment(at, block);
    at += block;
  }
  Eigen::Map<Vector>(weights.rows.data(), weights.rows.size()) =
      flat.segment(at, weights.rows.size());
}

Vector pack_gradients(const Gradients& grad) {
  Eigen::Index total = grad.classifier.size();
  for (const auto& g : grad.primitives) total += g.size();
  Vector flat(total);
  Eigen::Index at = 0;
  for (const auto& g : grad.primitives) {
    flat.segment(at, g.size()) = Eigen::Map<const Vector>(g.data(), g.size());
    at += g.size();
  }
  flat.segment(at, grad.classifier.size()) =
      Eigen::Map<const Vector>(grad.classifier.data(), grad.classifier.size());
  return flat;
}

}  // namespace compfscil
