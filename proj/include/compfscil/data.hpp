#pragma once

// Tensor files ("CKAT"), dataset manifests, and the synthetic compositional generator.
//
// Tensor layout, little-endian throughout:
//   bytes 0..3   magic "CKAT" (0x43 0x4B 0x41 0x54)
//   u32          version (1)
//   u32          dtype (1 = float32, 2 = float64)
//   u32          ndim
//   u32 x ndim   dims
//   payload      row-major values, product(dims) * sizeof(dtype) bytes

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "compfscil/cka.hpp"

namespace compfscil {

enum class DType : std::uint32_t { Float32 = 1, Float64 = 2 };

struct Tensor {
  std::vector<std::uint32_t> dims;
  DType dtype = DType::Float64;
  std::vector<double> values;

  std::size_t numel() const;
  /// Rows x cols tensor from a matrix.
  static Tensor from_matrix(const Matrix& m, DType dtype = DType::Float64);
  /// Interprets a 2-D tensor (or slice `index` of a 3-D tensor) as a matrix.
  Matrix matrix(std::size_t index = 0) const;
};

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
/// Reads a CKAT file, or a little-endian C-order float32/float64 .npy array.
Tensor read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Base label set, incremental label sets, and shots per novel class.
struct SessionSchedule {
  std::vector<ClassId> base;
  std::vector<std::vector<ClassId>> incremental;
  int shots = 5;

  std::size_t session_count() const { return 1 + incremental.size(); }
  const std::vector<ClassId>& classes(std::size_t session) const;
  /// Session in which `id` is introduced; throws InvalidInput if absent.
  int session_of(ClassId id) const;
  /// Every class introduced in sessions 0..session.
  std::vector<ClassId> classes_up_to(std::size_t session) const;
  void validate() const;
};

/// Ground truth for one synthetic sample: which patches are class-shared and which pool vector
/// each patch realizes (-1 for pure noise).
struct SampleAnnotation {
  std::vector<bool> shared;
  std::vector<int> pool_index;
};

struct SynthConfig {
  int pool_size = 30;
  int primitives_per_class = 4;
  int shared_patches = 10;
  int distractor_patches = 6;
  double noise = 0.1;
  int dim = 32;
  int base_classes = 20;
  int sessions = 2;
  int classes_per_session = 5;
  int shots = 5;
  int train_per_base_class = 30;
  int test_per_class = 50;
  std::uint64_t seed = 0;

  int patches() const { return shared_patches + distractor_patches; }
  void validate() const;
};

struct Dataset {
  SessionSchedule schedule;
  std::vector<FeatureMap> train;
  std::vector<FeatureMap> test;
  std::map<std::string, SampleAnnotation> annotations;
  std::map<ClassId, std::vector<int>> class_primitives;
  Matrix pool;

  std::vector<FeatureMap> train_session(int session) const;
  /// Test samples of every class introduced up to and including `session`.
  std::vector<FeatureMap> test_up_to(int session) const;
};

Dataset synth_generate(const SynthConfig& cfg);

/// Writes one 3-D tensor per (split, session) plus manifest.json.
void save_dataset(const std::filesystem::path& dir, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace compfscil
