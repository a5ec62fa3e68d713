#pragma once

// Similarity kernels between a sample's patch set X (n x d) and a primitive set Z (N x d).
//
// Linear CKA here compares rows after centering each row across its channels:
//   sim(X, Z) = ||X~ Z~^T||_F^2 / (||X~ X~^T||_F * ||Z~ Z~^T||_F)
// The score is invariant to orthogonal mixing of rows, to joint channel permutation, and to
// isotropic scaling of either operand.

#include <cstdint>
#include <string>

#include "compfscil/numkit.hpp"

namespace compfscil {

using ClassId = std::int64_t;

/// One sample's candidate-primitive set: n patch rows of d channels.
struct FeatureMap {
  std::string sample_id;
  ClassId label = 0;
  int session = 0;
  Matrix x;
};

/// Power-transformed linear CKA score in [0, 1].
struct CompositionScore {
  double value = 0.0;
};

/// Per (patch, primitive) weights whose weighted centered dot products sum to the CKA score.
struct MatchWeights {
  Matrix w;  // n x N
};

enum class MatchMode { Mean, Max };

/// Subtracts each row's channel mean. Requires d >= 2.
Matrix center_rows(const Matrix& x);

/// A row-centered set together with ||S~ S~^T||_F, reused across many comparisons.
struct CenteredSet {
  Matrix centered;
  double gram_norm = 0.0;
};

/// Centers `x` and computes its Gram norm. Throws DegenerateSet when every row is constant.
CenteredSet prepare_set(const Matrix& x);

double linear_cka(const CenteredSet& x, const CenteredSet& z);
double linear_cka(const Matrix& x, const Matrix& z);

/// Element-wise sign(x)|x|^alpha, alpha in (0, 1].
Matrix power_transform(const Matrix& x, double alpha);

CompositionScore composition_score(const FeatureMap& sample, const Matrix& z, double alpha);

MatchWeights match_weights(const Matrix& x, const Matrix& z);

/// I_i = sum_k (X~_i . Z~_k)^2 / (||X~X~^T|| ||Z~Z~^T||); sums to linear_cka(x, z).
Vector patch_importance(const Matrix& x, const Matrix& z);
Vector patch_importance(const CenteredSet& x, const CenteredSet& z);

/// Cosine matching over all (patch, primitive) pairs: mean of all cosines, or mean over patches
/// of the best primitive cosine.
double allmatch_similarity(const Matrix& x, const Matrix& z, MatchMode mode);

/// Representation-comparison CKA between two b x d_h and b x d_g activations of one batch,
/// with linear kernels.
double cka_rc(const Matrix& a, const Matrix& b);

}  // namespace compfscil
