#include "compfscil/primitives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "compfscil/error.hpp"
#include "compfscil/random.hpp"

namespace compfscil {

std::size_t PrimitiveBank::index_of(ClassId id) const {
  const auto it = std::find(classes.begin(), classes.end(), id);
  if (it == classes.end()) fail(ErrorKind::InvalidInput, "unknown class " + std::to_string(id));
  return static_cast<std::size_t>(it - classes.begin());
}

bool PrimitiveBank::contains(ClassId id) const {
  return std::find(classes.begin(), classes.end(), id) != classes.end();
}

Matrix kmeans(const Matrix& points, int k, int max_iterations) {
  const Eigen::Index n = points.rows();
  if (k < 1) fail(ErrorKind::InvalidInput, "kmeans needs k >= 1");
  if (n < k) {
    fail(ErrorKind::InsufficientData,
         "kmeans needs at least " + std::to_string(k) + " points, got " + std::to_string(n));
  }

  // Maximin seeding from the point farthest from the centroid.
  Matrix centers(k, points.cols());
  const RowVector centroid = points.colwise().mean();
  Eigen::Index first = 0;
  (points.rowwise() - centroid).rowwise().squaredNorm().maxCoeff(&first);
  centers.row(0) = points.row(first);
  Vector nearest = (points.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    Eigen::Index next = 0;
    nearest.maxCoeff(&next);
    centers.row(c) = points.row(next);
    nearest = nearest.cwiseMin((points.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      (centers.rowwise() - points.row(i)).rowwise().squaredNorm().minCoeff(&best);
      if (assignment[i] != static_cast<int>(best)) {
        assignment[i] = static_cast<int>(best);
        changed = true;
      }
    }
    if (!changed) break;
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assignment[i]) += points.row(i);
      ++counts[assignment[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
    }
  }
  return centers;
}

Matrix pool_patches(std::span<const FeatureMap> maps, ClassId label) {
  Eigen::Index rows = 0;
  Eigen::Index cols = -1;
  for (const auto& m : maps) {
    if (m.label != label) continue;
    rows += m.x.rows();
    if (cols >= 0 && cols != m.x.cols()) fail(ErrorKind::InvalidInput, "mixed channel counts");
    cols = m.x.cols();
  }
  Matrix pool(rows, std::max<Eigen::Index>(cols, 0));
  Eigen::Index at = 0;
  for (const auto& m : maps) {
    if (m.label != label) continue;
    pool.middleRows(at, m.x.rows()) = m.x;
    at += m.x.rows();
  }
  return pool;
}

namespace {

Matrix init_block(ClassId id, int n_primitives, int dim, const InitScheme& scheme,
                  std::span<const FeatureMap> maps, std::uint64_t seed) {
  if (scheme.kind == InitScheme::Kind::Gaussian) {
    Rng rng = make_rng(seed, "init", static_cast<std::uint64_t>(id));
    std::normal_distribution<double> normal(0.0, scheme.sigma);
    Matrix block(n_primitives, dim);
    for (Eigen::Index i = 0; i < block.size(); ++i) block.data()[i] = normal(rng);
    return block;
  }
  const Matrix pool = pool_patches(maps, id);
  if (pool.rows() > 0 && pool.cols() != dim) {
    fail(ErrorKind::InvalidInput, "patch width does not match bank width");
  }
  return kmeans(pool, n_primitives);
}

void check_bank_shape(int n_primitives, int dim) {
  if (n_primitives < 1) fail(ErrorKind::InvalidInput, "need at least one primitive per class");
  if (dim < 2) fail(ErrorKind::InvalidInput, "need at least two channels");
}

}  // namespace

PrimitiveBank init_primitive_bank(std::span<const ClassId> classes, int n_primitives, int dim,
                                  const InitScheme& scheme, std::span<const FeatureMap> maps,
                                  std::uint64_t seed) {
  check_bank_shape(n_primitives, dim);
  PrimitiveBank bank;
  bank.primitives_per_class = n_primitives;
  bank.dim = dim;
  for (ClassId id : classes) {
    if (bank.contains(id)) fail(ErrorKind::InvalidInput, "duplicate class " + std::to_string(id));
    bank.classes.push_back(id);
    bank.blocks.push_back(init_block(id, n_primitives, dim, scheme, maps, seed));
    bank.frozen.push_back(false);
  }
  return bank;
}

PrimitiveBank extend_bank(const PrimitiveBank& bank, std::span<const ClassId> new_classes,
                          const InitScheme& scheme, std::span<const FeatureMap> shots,
                          std::uint64_t seed) {
  PrimitiveBank out = bank;
  std::fill(out.frozen.begin(), out.frozen.end(), true);
  for (ClassId id : new_classes) {
    if (out.contains(id)) fail(ErrorKind::InvalidInput, "duplicate class " + std::to_string(id));
    out.classes.push_back(id);
    out.blocks.push_back(init_block(id, bank.primitives_per_class, bank.dim, scheme, shots, seed));
    out.frozen.push_back(false);
  }
  return out;
}

Matrix donor_pool(const PrimitiveBank& bank, std::span<const std::size_t> donor_indices) {
  Matrix pool(static_cast<Eigen::Index>(donor_indices.size()) * bank.primitives_per_class,
              bank.dim);
  Eigen::Index at = 0;
  for (std::size_t idx : donor_indices) {
    pool.middleRows(at, bank.primitives_per_class) = bank.blocks.at(idx);
    at += bank.primitives_per_class;
  }
  return pool;
}

ReplacedEntry attention_replace(const Matrix& primitives, const Matrix& donors, double gamma) {
  if (donors.rows() == 0) fail(ErrorKind::InvalidInput, "empty donor pool");
  if (!(gamma > 0.0)) fail(ErrorKind::InvalidInput, "gamma must be positive");
  if (donors.cols() != primitives.cols()) fail(ErrorKind::InvalidInput, "donor width mismatch");
  ReplacedEntry out;
  const Vector donor_sq = donors.rowwise().squaredNorm();
  const Vector prim_sq = primitives.rowwise().squaredNorm();
  Matrix logits = 2.0 * gamma * (primitives * donors.transpose());
  logits.colwise() -= gamma * prim_sq;
  logits.rowwise() -= gamma * donor_sq.transpose();
  logits = logits.cwiseMin(0.0);
  const double floor = std::log(1e-250);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i).array();
    row -= row.maxCoeff();
    row = (row < floor).select(-std::numeric_limits<double>::infinity(), row).exp();
    row /= row.sum();
  }
  out.attention = std::move(logits);
  out.replaced = out.attention * donors;
  return out;
}

ReplacedEntry attention_replace(const PrimitiveBank& bank, ClassId target,
                                std::span<const ClassId> donor_classes, double gamma) {
  std::vector<std::size_t> indices;
  for (ClassId id : donor_classes) {
    if (id == target) fail(ErrorKind::InvalidInput, "a class cannot donate to itself");
    indices.push_back(bank.index_of(id));
  }
  return attention_replace(bank.block(target), donor_pool(bank, indices), gamma);
}

ReplacedBank replace_all(const PrimitiveBank& bank, const DonorMap& donors, double gamma) {
  if (donors.size() != bank.size()) fail(ErrorKind::InvalidInput, "donor map size mismatch");
  ReplacedBank out;
  out.blocks.reserve(bank.size());
  out.attention.reserve(bank.size());
  for (std::size_t c = 0; c < bank.size(); ++c) {
    if (donors[c].empty()) {
      fail(ErrorKind::InvalidInput,
           "class " + std::to_string(bank.classes[c]) + " has no replacement donors");
    }
    auto entry = attention_replace(bank.blocks[c], donor_pool(bank, donors[c]), gamma);
    out.blocks.push_back(std::move(entry.replaced));
    out.attention.push_back(std::move(entry.attention));
  }
  return out;
}

DonorMap default_donors(const std::vector<bool>& is_base) {
  DonorMap donors(is_base.size());
  for (std::size_t c = 0; c < is_base.size(); ++c) {
    for (std::size_t o = 0; o < is_base.size(); ++o) {
      if (o != c && is_base[o]) donors[c].push_back(o);
    }
  }
  return donors;
}

PrimitiveBank hard_nearest_replace(const PrimitiveBank& bank, std::span<const ClassId> targets,
                                   std::span<const ClassId> donor_classes, double ratio,
                                   std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) fail(ErrorKind::InvalidInput, "ratio must lie in [0, 1]");
  std::vector<std::size_t> donor_idx;
  for (ClassId id : donor_classes) {
    if (std::find(targets.begin(), targets.end(), id) != targets.end()) {
      fail(ErrorKind::InvalidInput, "donor classes must be disjoint from targets");
    }
    donor_idx.push_back(bank.index_of(id));
  }
  PrimitiveBank out = bank;
  const int n = bank.primitives_per_class;
  const int count = static_cast<int>(std::ceil(ratio * n - 1e-12));
  if (count == 0) return out;
  const Matrix pool = donor_pool(bank, donor_idx);
  if (pool.rows() == 0) fail(ErrorKind::InvalidInput, "empty donor pool");

  Rng rng = make_rng(seed, "replacement");
  for (ClassId id : targets) {
    Matrix& block = out.blocks[out.index_of(id)];
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (int j = 0; j < count; ++j) {
      const int row = order[static_cast<std::size_t>(j)];
      Eigen::Index nearest = 0;
      (pool.rowwise() - block.row(row)).rowwise().squaredNorm().minCoeff(&nearest);
      block.row(row) = pool.row(nearest);
    }
  }
  return out;
}

}  // namespace compfscil
