#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "compfscil/cka.hpp"

namespace compfscil {

/// Per-class primitive sets Z^c (N x d each) with per-class frozen flags.
struct PrimitiveBank {
  std::vector<ClassId> classes;
  std::vector<Matrix> blocks;
  std::vector<bool> frozen;
  int primitives_per_class = 0;
  int dim = 0;

  std::size_t size() const { return classes.size(); }
  /// Index of `id` in registration order; throws InvalidInput if absent.
  std::size_t index_of(ClassId id) const;
  bool contains(ClassId id) const;
  const Matrix& block(ClassId id) const { return blocks[index_of(id)]; }
};

struct InitScheme {
  enum class Kind { Gaussian, KMeans };
  Kind kind = Kind::KMeans;
  double sigma = 0.1;  // Gaussian only
};

/// Lloyd's algorithm on the rows of `points`. Centers start from a maximin sweep beginning at the
/// point farthest from the centroid, so the result does not depend on row order.
Matrix kmeans(const Matrix& points, int k, int max_iterations = 100);

/// Pools the patch rows of every map with the given label.
Matrix pool_patches(std::span<const FeatureMap> maps, ClassId label);

/// Builds a bank for `classes`. KMeans clusters each class's pooled patch rows from `maps`.
PrimitiveBank init_primitive_bank(std::span<const ClassId> classes, int n_primitives, int dim,
                                  const InitScheme& scheme, std::span<const FeatureMap> maps,
                                  std::uint64_t seed);

/// Freezes every existing block and appends new classes initialized from `shots`.
PrimitiveBank extend_bank(const PrimitiveBank& bank, std::span<const ClassId> new_classes,
                          const InitScheme& scheme, std::span<const FeatureMap> shots,
                          std::uint64_t seed);

/// Stacks the primitives of the listed class indices into one donor pool, in order.
Matrix donor_pool(const PrimitiveBank& bank, std::span<const std::size_t> donor_indices);

/// Attention-based replacement of one class's primitives by a sharp softmax over donors.
struct ReplacedEntry {
  Matrix replaced;   // N x d
  Matrix attention;  // N x pool size; each row sums to 1
};

ReplacedEntry attention_replace(const Matrix& primitives, const Matrix& donors, double gamma);
ReplacedEntry attention_replace(const PrimitiveBank& bank, ClassId target,
                                std::span<const ClassId> donor_classes, double gamma);

/// Replaced blocks for every class in a bank.
struct ReplacedBank {
  std::vector<Matrix> blocks;
  std::vector<Matrix> attention;
};

/// donors[c] lists the bank indices donating to class index c.
using DonorMap = std::vector<std::vector<std::size_t>>;

ReplacedBank replace_all(const PrimitiveBank& bank, const DonorMap& donors, double gamma);

/// Donor rule: a base class draws from every other base class; a novel class draws from all base
/// classes. `is_base[c]` flags classes registered in session 0.
DonorMap default_donors(const std::vector<bool>& is_base);

/// Overwrites ceil(ratio * N) seeded-random primitives of each target class with their
/// Euclidean-nearest donor primitive (ties to the lowest donor index).
PrimitiveBank hard_nearest_replace(const PrimitiveBank& bank, std::span<const ClassId> targets,
                                   std::span<const ClassId> donor_classes, double ratio,
                                   std::uint64_t seed);

}  // namespace compfscil
