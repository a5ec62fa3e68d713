#include "compfscil/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "compfscil/error.hpp"
#include "compfscil/random.hpp"

namespace compfscil {
namespace {

constexpr std::uint8_t kMagic[4] = {0x43, 0x4B, 0x41, 0x54};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[at + i]) << (8 * i);
  return v;
}

std::size_t dtype_size(DType dtype) { return dtype == DType::Float32 ? 4 : 8; }

Tensor decode_npy(std::span<const std::uint8_t> bytes) {
  // \x93NUMPY major minor header_len(u16 for v1, u32 for v2/3) header
  if (bytes.size() < 10) fail(ErrorKind::TruncatedPayload, "npy header truncated");
  const int major = bytes[6];
  std::size_t header_len = 0;
  std::size_t at = 0;
  if (major == 1) {
    header_len = static_cast<std::size_t>(bytes[8]) | (static_cast<std::size_t>(bytes[9]) << 8);
    at = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) fail(ErrorKind::TruncatedPayload, "npy header truncated");
    header_len = get_u32(bytes, 8);
    at = 12;
  } else {
    fail(ErrorKind::BadVersion, "unsupported npy version " + std::to_string(major));
  }
  if (bytes.size() < at + header_len) fail(ErrorKind::TruncatedPayload, "npy header truncated");
  const std::string header(reinterpret_cast<const char*>(bytes.data() + at), header_len);
  at += header_len;

  Tensor t;
  if (header.find("'<f4'") != std::string::npos) {
    t.dtype = DType::Float32;
  } else if (header.find("'<f8'") != std::string::npos) {
    t.dtype = DType::Float64;
  } else {
    fail(ErrorKind::UnknownDtype, "npy dtype must be <f4 or <f8");
  }
  if (header.find("'fortran_order': True") != std::string::npos) {
    fail(ErrorKind::InvalidInput, "fortran-ordered npy arrays are not supported");
  }
  const auto open = header.find('(', header.find("'shape'"));
  const auto close = header.find(')', open);
  if (open == std::string::npos || close == std::string::npos) {
    fail(ErrorKind::InvalidInput, "npy header has no shape");
  }
  std::string shape = header.substr(open + 1, close - open - 1);
  std::size_t pos = 0;
  while (pos < shape.size()) {
    const auto comma = shape.find(',', pos);
    const std::string item = shape.substr(pos, comma == std::string::npos ? std::string::npos
                                                                           : comma - pos);
    if (item.find_first_of("0123456789") != std::string::npos) {
      t.dims.push_back(static_cast<std::uint32_t>(std::stoul(item)));
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  const std::size_t n = t.numel();
  const std::size_t size = dtype_size(t.dtype);
  if (bytes.size() - at < n * size) fail(ErrorKind::TruncatedPayload, "npy payload truncated");
  t.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (t.dtype == DType::Float32) {
      t.values[i] = std::bit_cast<float>(get_u32(bytes, at + 4 * i));
    } else {
      t.values[i] = std::bit_cast<double>(get_u64(bytes, at + 8 * i));
    }
  }
  return t;
}

}  // namespace

std::size_t Tensor::numel() const {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, std::uint32_t d) { return a * d; });
}

Tensor Tensor::from_matrix(const Matrix& m, DType dtype) {
  Tensor t;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.dtype = dtype;
  t.values.assign(m.data(), m.data() + m.size());
  return t;
}

Matrix Tensor::matrix(std::size_t index) const {
  if (dims.size() == 2) {
    if (index != 0) fail(ErrorKind::InvalidInput, "2-D tensor has a single slice");
    Matrix m(dims[0], dims[1]);
    std::copy(values.begin(), values.end(), m.data());
    return m;
  }
  if (dims.size() == 3) {
    if (index >= dims[0]) fail(ErrorKind::InvalidInput, "slice index out of range");
    const std::size_t stride = static_cast<std::size_t>(dims[1]) * dims[2];
    Matrix m(dims[1], dims[2]);
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(index * stride), stride, m.data());
    return m;
  }
  fail(ErrorKind::InvalidInput, "expected a 2-D or 3-D tensor");
}

std::vector<std::uint8_t> encode_tensor(const Tensor& tensor) {
  if (tensor.dtype != DType::Float32 && tensor.dtype != DType::Float64) {
    fail(ErrorKind::UnknownDtype, "unknown dtype");
  }
  if (tensor.values.size() != tensor.numel()) {
    fail(ErrorKind::InvalidInput, "value count does not match dims");
  }
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(tensor.dtype));
  put_u32(out, static_cast<std::uint32_t>(tensor.dims.size()));
  for (std::uint32_t d : tensor.dims) put_u32(out, d);
  out.reserve(out.size() + tensor.values.size() * dtype_size(tensor.dtype));
  for (double v : tensor.values) {
    if (tensor.dtype == DType::Float32) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    fail(ErrorKind::BadMagic, "not a CKAT tensor");
  }
  if (bytes.size() < 16) fail(ErrorKind::TruncatedPayload, "header truncated");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kVersion) fail(ErrorKind::BadVersion, "version " + std::to_string(version));
  const std::uint32_t code = get_u32(bytes, 8);
  if (code != 1 && code != 2) fail(ErrorKind::UnknownDtype, "dtype code " + std::to_string(code));
  const std::uint32_t ndim = get_u32(bytes, 12);
  if (bytes.size() < 16 + 4ull * ndim) fail(ErrorKind::TruncatedPayload, "dims truncated");
  Tensor t;
  t.dtype = static_cast<DType>(code);
  for (std::uint32_t i = 0; i < ndim; ++i) t.dims.push_back(get_u32(bytes, 16 + 4 * i));
  const std::size_t at = 16 + 4ull * ndim;
  const std::size_t n = t.numel();
  const std::size_t size = dtype_size(t.dtype);
  if (bytes.size() - at != n * size) {
    fail(ErrorKind::TruncatedPayload, "payload is " + std::to_string(bytes.size() - at) +
                                          " bytes, expected " + std::to_string(n * size));
  }
  t.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (t.dtype == DType::Float32) {
      t.values[i] = std::bit_cast<float>(get_u32(bytes, at + 4 * i));
    } else {
      t.values[i] = std::bit_cast<double>(get_u64(bytes, at + 8 * i));
    }
  }
  return t;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  write_file(path, encode_tensor(tensor));
}

Tensor read_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  static constexpr std::uint8_t kNpy[6] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
  if (bytes.size() >= 6 && std::equal(kNpy, kNpy + 6, bytes.begin())) return decode_npy(bytes);
  return decode_tensor(bytes);
}

// --- schedule ---------------------------------------------------------------

const std::vector<ClassId>& SessionSchedule::classes(std::size_t session) const {
  if (session == 0) return base;
  if (session > incremental.size()) fail(ErrorKind::InvalidInput, "session out of range");
  return incremental[session - 1];
}

int SessionSchedule::session_of(ClassId id) const {
  for (std::size_t s = 0; s < session_count(); ++s) {
    const auto& ids = classes(s);
    if (std::find(ids.begin(), ids.end(), id) != ids.end()) return static_cast<int>(s);
  }
  fail(ErrorKind::InvalidInput, "class " + std::to_string(id) + " is not in the schedule");
}

std::vector<ClassId> SessionSchedule::classes_up_to(std::size_t session) const {
  std::vector<ClassId> out;
  for (std::size_t s = 0; s <= session && s < session_count(); ++s) {
    const auto& ids = classes(s);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

void SessionSchedule::validate() const {
  if (base.empty()) fail(ErrorKind::InvalidInput, "schedule has no base classes");
  if (shots < 1) fail(ErrorKind::InvalidInput, "shots must be at least 1");
  std::set<ClassId> seen;
  for (std::size_t s = 0; s < session_count(); ++s) {
    for (ClassId id : classes(s)) {
      if (!seen.insert(id).second) {
        fail(ErrorKind::InvalidInput, "class " + std::to_string(id) + " appears in two sessions");
      }
    }
  }
}

std::vector<FeatureMap> Dataset::train_session(int session) const {
  std::vector<FeatureMap> out;
  for (const auto& m : train) {
    if (m.session == session) out.push_back(m);
  }
  return out;
}

std::vector<FeatureMap> Dataset::test_up_to(int session) const {
  std::vector<FeatureMap> out;
  for (const auto& m : test) {
    if (m.session <= session) out.push_back(m);
  }
  return out;
}

// --- synthetic generator ----------------------------------------------------

void SynthConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) fail(ErrorKind::InvalidInput, what);
  };
  require(pool_size >= 1, "pool size must be positive");
  require(primitives_per_class >= 1 && primitives_per_class <= pool_size,
          "primitives per class must lie in [1, pool size]");
  require(shared_patches >= 0 && distractor_patches >= 0 && patches() >= 1,
          "need at least one patch per sample");
  require(noise >= 0.0, "noise must be nonnegative");
  require(dim >= 2, "need at least two channels");
  require(base_classes >= 1, "need at least one base class");
  require(sessions >= 0 && classes_per_session >= 1, "bad session layout");
  require(shots >= 1, "shots must be positive");
  require(train_per_base_class >= 1 && test_per_class >= 1, "sample counts must be positive");
}

namespace {

struct SynthClass {
  ClassId id;
  int session;
  std::vector<int> primitives;
};

std::vector<int> draw_subset(Rng& rng, int pool, int m) {
  std::vector<int> idx(static_cast<std::size_t>(pool));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(m));
  std::sort(idx.begin(), idx.end());
  return idx;
}

FeatureMap make_sample(const SynthConfig& cfg, const Matrix& pool, const SynthClass& cls,
                       const std::string& id, Rng& rng, SampleAnnotation& note) {
  std::normal_distribution<double> noise(0.0, cfg.noise > 0.0 ? cfg.noise : 1.0);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> pick_own(0, static_cast<int>(cls.primitives.size()) - 1);
  std::vector<int> others;
  for (int p = 0; p < cfg.pool_size; ++p) {
    if (std::find(cls.primitives.begin(), cls.primitives.end(), p) == cls.primitives.end()) {
      others.push_back(p);
    }
  }
  std::bernoulli_distribution pure_noise(others.empty() ? 1.0 : 0.5);

  FeatureMap map;
  map.sample_id = id;
  map.label = cls.id;
  map.session = cls.session;
  map.x.resize(cfg.patches(), cfg.dim);
  note.shared.assign(static_cast<std::size_t>(cfg.patches()), false);
  note.pool_index.assign(static_cast<std::size_t>(cfg.patches()), -1);

  auto noisy_copy = [&](int row, int pool_row) {
    for (int j = 0; j < cfg.dim; ++j) {
      const double jitter = cfg.noise > 0.0 ? noise(rng) : 0.0;
      map.x(row, j) = std::abs(pool(pool_row, j) + jitter);
    }
  };
  for (int r = 0; r < cfg.shared_patches; ++r) {
    const int p = cls.primitives[static_cast<std::size_t>(pick_own(rng))];
    noisy_copy(r, p);
    note.shared[static_cast<std::size_t>(r)] = true;
    note.pool_index[static_cast<std::size_t>(r)] = p;
  }
  for (int r = cfg.shared_patches; r < cfg.patches(); ++r) {
    if (pure_noise(rng)) {
      for (int j = 0; j < cfg.dim; ++j) map.x(r, j) = std::abs(unit(rng));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
      const int p = others[pick(rng)];
      noisy_copy(r, p);
      note.pool_index[static_cast<std::size_t>(r)] = p;
    }
  }
  // Shuffle patch order so shared patches are not positionally identifiable.
  std::vector<int> order(static_cast<std::size_t>(cfg.patches()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Matrix shuffled(map.x.rows(), map.x.cols());
  SampleAnnotation permuted = note;
  for (std::size_t r = 0; r < order.size(); ++r) {
    shuffled.row(static_cast<Eigen::Index>(r)) = map.x.row(order[r]);
    permuted.shared[r] = note.shared[static_cast<std::size_t>(order[r])];
    permuted.pool_index[r] = note.pool_index[static_cast<std::size_t>(order[r])];
  }
  map.x = std::move(shuffled);
  note = std::move(permuted);
  return map;
}

}  // namespace

Dataset synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  Dataset data;
  Rng pool_rng = make_rng(cfg.seed, "synth-pool");
  std::normal_distribution<double> unit(0.0, 1.0);
  data.pool.resize(cfg.pool_size, cfg.dim);
  for (Eigen::Index i = 0; i < data.pool.size(); ++i) data.pool.data()[i] = std::abs(unit(pool_rng));

  // Class primitive sets: distinct subsets; every incremental class reuses >= 1 base primitive.
  Rng class_rng = make_rng(cfg.seed, "synth-classes");
  std::vector<SynthClass> classes;
  std::set<std::vector<int>> used;
  std::set<int> base_union;
  ClassId next_id = 0;
  const int total_sessions = 1 + cfg.sessions;
  for (int s = 0; s < total_sessions; ++s) {
    const int count = s == 0 ? cfg.base_classes : cfg.classes_per_session;
    std::vector<ClassId> ids;
    for (int c = 0; c < count; ++c) {
      std::vector<int> prims;
      for (int attempt = 0;; ++attempt) {
        prims = draw_subset(class_rng, cfg.pool_size, cfg.primitives_per_class);
        const bool fresh = !used.contains(prims);
        const bool reuses =
            s == 0 || std::any_of(prims.begin(), prims.end(),
                                  [&](int p) { return base_union.contains(p); });
        if ((fresh || attempt >= 1000) && reuses) break;
      }
      used.insert(prims);
      if (s == 0) base_union.insert(prims.begin(), prims.end());
      classes.push_back({next_id, s, prims});
      data.class_primitives[next_id] = prims;
      ids.push_back(next_id++);
    }
    if (s == 0) {
      data.schedule.base = ids;
    } else {
      data.schedule.incremental.push_back(ids);
    }
  }
  data.schedule.shots = cfg.shots;

  for (const auto& cls : classes) {
    Rng rng = make_rng(cfg.seed, "synth-samples", static_cast<std::uint64_t>(cls.id));
    const int n_train = cls.session == 0 ? cfg.train_per_base_class : cfg.shots;
    for (int i = 0; i < n_train; ++i) {
      const std::string id = "train-s" + std::to_string(cls.session) + "-c" +
                             std::to_string(cls.id) + "-" + std::to_string(i);
      SampleAnnotation note;
      data.train.push_back(make_sample(cfg, data.pool, cls, id, rng, note));
      data.annotations.emplace(id, std::move(note));
    }
    for (int i = 0; i < cfg.test_per_class; ++i) {
      const std::string id = "test-s" + std::to_string(cls.session) + "-c" +
                             std::to_string(cls.id) + "-" + std::to_string(i);
      SampleAnnotation note;
      data.test.push_back(make_sample(cfg, data.pool, cls, id, rng, note));
      data.annotations.emplace(id, std::move(note));
    }
  }
  return data;
}

// --- manifest ---------------------------------------------------------------

namespace {

using nlohmann::json;

void save_split(const std::filesystem::path& dir, const std::vector<FeatureMap>& maps,
                const std::string& split, int sessions, json& records) {
  for (int s = 0; s < sessions; ++s) {
    std::vector<const FeatureMap*> group;
    for (const auto& m : maps) {
      if (m.session == s) group.push_back(&m);
    }
    if (group.empty()) continue;
    const auto rows = static_cast<std::uint32_t>(group.front()->x.rows());
    const auto cols = static_cast<std::uint32_t>(group.front()->x.cols());
    const bool uniform = std::all_of(group.begin(), group.end(), [&](const FeatureMap* m) {
      return m->x.rows() == rows && m->x.cols() == cols;
    });
    if (uniform) {
      const std::string name = split + "_s" + std::to_string(s) + ".ckat";
      Tensor t;
      t.dims = {static_cast<std::uint32_t>(group.size()), rows, cols};
      t.values.reserve(t.numel());
      for (std::size_t i = 0; i < group.size(); ++i) {
        t.values.insert(t.values.end(), group[i]->x.data(), group[i]->x.data() + group[i]->x.size());
        records.push_back({{"id", group[i]->sample_id},
                           {"path", name},
                           {"index", i},
                           {"label", group[i]->label},
                           {"session", s},
                           {"split", split}});
      }
      write_tensor(dir / name, t);
    } else {
      for (const FeatureMap* m : group) {
        const std::string name = "maps/" + m->sample_id + ".ckat";
        write_tensor(dir / name, Tensor::from_matrix(m->x));
        records.push_back({{"id", m->sample_id},
                           {"path", name},
                           {"label", m->label},
                           {"session", s},
                           {"split", split}});
      }
    }
  }
}

}  // namespace

void save_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir);
  const int sessions = static_cast<int>(data.schedule.session_count());
  json manifest;
  manifest["format"] = "compfscil-manifest";
  manifest["version"] = 1;
  json records = json::array();
  save_split(dir, data.train, "train", sessions, records);
  save_split(dir, data.test, "test", sessions, records);
  manifest["samples"] = std::move(records);

  json classes = json::array();
  for (std::size_t s = 0; s < data.schedule.session_count(); ++s) {
    for (ClassId id : data.schedule.classes(s)) {
      json entry = {{"id", id}, {"session", s}};
      if (auto it = data.class_primitives.find(id); it != data.class_primitives.end()) {
        entry["primitives"] = it->second;
      }
      classes.push_back(entry);
    }
  }
  manifest["classes"] = std::move(classes);
  manifest["shots"] = data.schedule.shots;

  json notes = json::object();
  for (const auto& [id, note] : data.annotations) {
    notes[id] = {{"shared", note.shared}, {"pool_index", note.pool_index}};
  }
  manifest["annotations"] = std::move(notes);
  if (data.pool.size() > 0) {
    write_tensor(dir / "pool.ckat", Tensor::from_matrix(data.pool));
    manifest["pool"] = "pool.ckat";
  }
  write_text(dir / "manifest.json", manifest.dump(1) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto bytes = read_file(dir / "manifest.json");
  json manifest;
  try {
    manifest = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidInput, std::string("manifest: ") + e.what());
  }
  Dataset data;
  try {
    std::map<int, std::vector<ClassId>> by_session;
    for (const auto& c : manifest.at("classes")) {
      const ClassId id = c.at("id").get<ClassId>();
      by_session[c.at("session").get<int>()].push_back(id);
      if (c.contains("primitives")) data.class_primitives[id] = c["primitives"].get<std::vector<int>>();
    }
    for (const auto& [s, ids] : by_session) {
      if (s == 0) {
        data.schedule.base = ids;
      } else {
        if (static_cast<std::size_t>(s) != data.schedule.incremental.size() + 1) {
          fail(ErrorKind::InvalidInput, "manifest sessions are not contiguous");
        }
        data.schedule.incremental.push_back(ids);
      }
    }
    data.schedule.shots = manifest.value("shots", 5);
    data.schedule.validate();

    std::map<std::string, Tensor> cache;
    for (const auto& r : manifest.at("samples")) {
      const std::string path = r.at("path").get<std::string>();
      auto it = cache.find(path);
      if (it == cache.end()) it = cache.emplace(path, read_tensor(dir / path)).first;
      FeatureMap m;
      m.sample_id = r.at("id").get<std::string>();
      m.label = r.at("label").get<ClassId>();
      m.session = r.at("session").get<int>();
      if (data.schedule.session_of(m.label) != m.session) {
        fail(ErrorKind::InvalidInput, "sample " + m.sample_id + " has an inconsistent session");
      }
      m.x = it->second.matrix(r.value("index", std::size_t{0}));
      const std::string split = r.at("split").get<std::string>();
      if (split == "train") {
        data.train.push_back(std::move(m));
      } else if (split == "test") {
        data.test.push_back(std::move(m));
      } else {
        fail(ErrorKind::InvalidInput, "unknown split " + split);
      }
    }
    if (manifest.contains("annotations")) {
      for (const auto& [id, note] : manifest["annotations"].items()) {
        SampleAnnotation a;
        a.shared = note.at("shared").get<std::vector<bool>>();
        a.pool_index = note.at("pool_index").get<std::vector<int>>();
        data.annotations.emplace(id, std::move(a));
      }
    }
    if (manifest.contains("pool")) data.pool = read_tensor(dir / manifest["pool"].get<std::string>()).matrix();
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidInput, std::string("manifest: ") + e.what());
  }
  return data;
}

}  // namespace compfscil
