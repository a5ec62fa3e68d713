#include "compfscil/training.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <string>

#include "compfscil/error.hpp"
#include "compfscil/random.hpp"

namespace compfscil {

using nlohmann::json;

int ModelState::session_of(ClassId id) const {
  for (const auto& r : registry) {
    if (r.id == id) return r.session;
  }
  fail(ErrorKind::InvalidInput, "class " + std::to_string(id) + " is not registered");
}

std::vector<bool> ModelState::base_flags() const {
  std::vector<bool> flags;
  flags.reserve(bank.size());
  for (ClassId id : bank.classes) flags.push_back(session_of(id) == 0);
  return flags;
}

std::vector<ClassId> ModelState::classes_up_to(int session) const {
  std::vector<ClassId> out;
  for (const auto& r : registry) {
    if (r.session <= session) out.push_back(r.id);
  }
  return out;
}

OptimizerState OptimizerState::zeros_like(const PrimitiveBank& bank,
                                          const ClassifierWeights& weights, double lr,
                                          double momentum) {
  OptimizerState opt;
  opt.lr = lr;
  opt.momentum = momentum;
  for (const auto& b : bank.blocks) opt.primitive_velocity.push_back(Matrix::Zero(b.rows(), b.cols()));
  opt.classifier_velocity = Matrix::Zero(weights.rows.rows(), weights.rows.cols());
  return opt;
}

void sgd_step(Matrix& param, const Matrix& grad, Matrix& velocity, double lr, double momentum) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols() ||
      param.rows() != velocity.rows() || param.cols() != velocity.cols()) {
    fail(ErrorKind::InvalidInput, "sgd_step shape mismatch");
  }
  velocity = momentum * velocity + grad;
  param -= lr * velocity;
}

void sgd_step(PrimitiveBank& bank, ClassifierWeights& weights, const Gradients& grad,
              OptimizerState& opt, const TrainableMask& mask) {
  if (grad.primitives.size() != bank.size() || opt.primitive_velocity.size() != bank.size() ||
      mask.primitive_rows.size() != bank.size()) {
    fail(ErrorKind::InvalidInput, "sgd_step shape mismatch");
  }
  for (std::size_t c = 0; c < bank.size(); ++c) {
    Matrix& block = bank.blocks[c];
    if (grad.primitives[c].rows() != block.rows() || grad.primitives[c].cols() != block.cols()) {
      fail(ErrorKind::InvalidInput, "sgd_step shape mismatch");
    }
    for (Eigen::Index r = 0; r < block.rows(); ++r) {
      if (!mask.primitive_rows[c][static_cast<std::size_t>(r)]) continue;
      auto v = opt.primitive_velocity[c].row(r);
      v = opt.momentum * v + grad.primitives[c].row(r);
      block.row(r) -= opt.lr * v;
    }
  }
  if (grad.classifier.rows() != weights.rows.rows() ||
      opt.classifier_velocity.rows() != weights.rows.rows()) {
    fail(ErrorKind::InvalidInput, "sgd_step shape mismatch");
  }
  for (Eigen::Index r = 0; r < weights.rows.rows(); ++r) {
    if (static_cast<std::size_t>(r) >= mask.classifier_rows.size() ||
        !mask.classifier_rows[static_cast<std::size_t>(r)]) {
      continue;
    }
    auto v = opt.classifier_velocity.row(r);
    v = opt.momentum * v + grad.classifier.row(r);
    weights.rows.row(r) -= opt.lr * v;
  }
}

RowVector class_mean_prototype(std::span<const FeatureMap> maps, ClassId label) {
  RowVector sum;
  int count = 0;
  for (const auto& m : maps) {
    if (m.label != label) continue;
    const RowVector f = pooled_feature(m.x);
    const double norm = f.norm();
    if (norm == 0.0) continue;
    if (count == 0) sum = RowVector::Zero(f.size());
    sum += f / norm;
    ++count;
  }
  if (count == 0) fail(ErrorKind::InvalidInput, "no usable samples for class " + std::to_string(label));
  return sum / count;
}

namespace {

ClassifierWeights init_classifier(std::span<const ClassId> classes, std::span<const FeatureMap> maps,
                                  int dim, const TrainOptions& options, std::uint64_t seed) {
  ClassifierWeights w;
  w.classes.assign(classes.begin(), classes.end());
  w.rows.resize(static_cast<Eigen::Index>(classes.size()), dim);
  w.frozen.assign(classes.size(), false);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto row = static_cast<Eigen::Index>(c);
    if (options.classifier_init == ClassifierInit::ClassMean) {
      w.rows.row(row) = class_mean_prototype(maps, classes[c]);
    } else {
      Rng rng = make_rng(seed, "init-classifier", static_cast<std::uint64_t>(classes[c]));
      std::normal_distribution<double> normal(0.0, options.classifier_sigma);
      for (int j = 0; j < dim; ++j) w.rows(row, j) = normal(rng);
    }
  }
  return w;
}

int map_width(std::span<const FeatureMap> maps) {
  if (maps.empty()) fail(ErrorKind::InvalidInput, "no training samples");
  const auto d = maps.front().x.cols();
  for (const auto& m : maps) {
    if (m.x.cols() != d) fail(ErrorKind::InvalidInput, "feature maps have mixed channel counts");
    if (!m.x.allFinite()) fail(ErrorKind::InvalidInput, "non-finite feature map " + m.sample_id);
  }
  return static_cast<int>(d);
}

std::vector<double> run_epochs(ModelState& state, std::span<const FeatureMap> data, int epochs,
                               int batch_size, const LossConfig& config, const TrainableMask& mask,
                               int session, int threads) {
  const DonorMap donors =
      config.lambda_rcmp != 0.0 ? default_donors(state.base_flags()) : DonorMap(state.bank.size());
  OptimizerState opt =
      OptimizerState::zeros_like(state.bank, state.weights, state.hp.lr, state.hp.momentum);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(state.hp.seed, "shuffle", static_cast<std::uint64_t>(session));
  const std::size_t step = batch_size > 0 ? static_cast<std::size_t>(batch_size) : data.size();

  std::vector<double> history;
  std::vector<const FeatureMap*> batch;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    if (step < data.size()) std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t start = 0; start < data.size(); start += step) {
      const std::size_t stop = std::min(data.size(), start + step);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(&data[order[i]]);
      const LossAndGrad lg =
          total_loss_and_grad(batch, state.bank, state.weights, donors, config, mask, threads);
      sum += lg.loss.total * static_cast<double>(batch.size());
      sgd_step(state.bank, state.weights, lg.grad, opt, mask);
    }
    history.push_back(sum / static_cast<double>(data.size()));
  }
  return history;
}

}  // namespace

ModelState train_base(std::span<const FeatureMap> data, std::span<const ClassId> base_classes,
                      const Hyperparams& hp, const TrainOptions& options) {
  if (base_classes.empty()) fail(ErrorKind::InvalidInput, "no base classes");
  const std::set<ClassId> wanted(base_classes.begin(), base_classes.end());
  if (wanted.size() != base_classes.size()) fail(ErrorKind::InvalidInput, "duplicate base class");
  std::set<ClassId> present;
  for (const auto& m : data) {
    if (!wanted.contains(m.label)) {
      fail(ErrorKind::InvalidInput, "sample " + m.sample_id + " has non-base label " +
                                        std::to_string(m.label));
    }
    present.insert(m.label);
  }
  for (ClassId id : base_classes) {
    if (!present.contains(id)) {
      fail(ErrorKind::InvalidInput, "base class " + std::to_string(id) + " has no samples");
    }
  }
  const int dim = map_width(data);

  ModelState state;
  state.hp = hp;
  state.bank = init_primitive_bank(base_classes, hp.primitives, dim, options.primitive_init, data,
                                   hp.seed);
  state.weights = init_classifier(base_classes, data, dim, options, hp.seed);
  for (ClassId id : base_classes) state.registry.push_back({id, 0});

  const LossConfig config = loss_config(hp);
  const TrainableMask mask = TrainableMask::from_frozen(state.bank, state.weights);
  state.epoch_losses.push_back(
      run_epochs(state, data, hp.base_epochs, hp.batch_size, config, mask, 0, options.threads));

  std::fill(state.bank.frozen.begin(), state.bank.frozen.end(), true);
  std::fill(state.weights.frozen.begin(), state.weights.frozen.end(), true);
  state.sessions_seen = 1;
  return state;
}

ModelState train_incremental(const ModelState& state, std::span<const FeatureMap> shots,
                             const TrainOptions& options) {
  const auto base = std::count_if(state.registry.begin(), state.registry.end(),
                                  [](const ClassRecord& r) { return r.session == 0; });
  if (base == 0) fail(ErrorKind::InvalidInput, "incremental training needs a base session");
  const int dim = map_width(shots);
  if (dim != state.bank.dim) fail(ErrorKind::InvalidInput, "shot width does not match the model");

  std::vector<ClassId> fresh;
  for (const auto& m : shots) {
    if (state.bank.contains(m.label)) {
      fail(ErrorKind::InvalidInput,
           "shot label " + std::to_string(m.label) + " collides with a registered class");
    }
    if (std::find(fresh.begin(), fresh.end(), m.label) == fresh.end()) fresh.push_back(m.label);
  }
  std::sort(fresh.begin(), fresh.end());

  ModelState next = state;
  const int session = state.sessions_seen;
  next.bank = extend_bank(state.bank, fresh, options.primitive_init, shots, state.hp.seed);
  std::fill(next.weights.frozen.begin(), next.weights.frozen.end(), true);
  const ClassifierWeights added = init_classifier(fresh, shots, dim, options, state.hp.seed);
  const auto old_rows = next.weights.rows.rows();
  next.weights.rows.conservativeResize(old_rows + added.rows.rows(), Eigen::NoChange);
  next.weights.rows.bottomRows(added.rows.rows()) = added.rows;
  next.weights.classes.insert(next.weights.classes.end(), fresh.begin(), fresh.end());
  next.weights.frozen.insert(next.weights.frozen.end(), fresh.size(), !state.hp.incremental_cls);
  for (ClassId id : fresh) next.registry.push_back({id, session});

  LossConfig config = loss_config(state.hp);
  if (!state.hp.incremental_cls) config.lambda_cls = 0.0;
  const TrainableMask mask = TrainableMask::from_frozen(next.bank, next.weights);
  std::vector<double> history;
  if (!fresh.empty() && state.hp.incremental_epochs > 0) {
    history = run_epochs(next, shots, state.hp.incremental_epochs, 0, config, mask, session,
                         options.threads);
  }
  next.epoch_losses.push_back(std::move(history));

  std::fill(next.bank.frozen.begin(), next.bank.frozen.end(), true);
  std::fill(next.weights.frozen.begin(), next.weights.frozen.end(), true);
  next.sessions_seen = session + 1;
  return next;
}

// --- serialization -------------------------------------------------------------

json hyperparams_to_json(const Hyperparams& hp) {
  return {{"tau", hp.tau},
          {"alpha", hp.alpha},
          {"gamma", hp.gamma},
          {"lambda_cmp", hp.lambda_cmp},
          {"lambda_rcmp", hp.lambda_rcmp},
          {"primitives", hp.primitives},
          {"lr", hp.lr},
          {"momentum", hp.momentum},
          {"base_epochs", hp.base_epochs},
          {"incremental_epochs", hp.incremental_epochs},
          {"batch_size", hp.batch_size},
          {"seed", hp.seed},
          {"incremental_cls", hp.incremental_cls},
          {"stop_attention_grad", hp.stop_attention_grad}};
}

Hyperparams hyperparams_from_json(const json& j, Hyperparams hp) {
  if (!j.is_object()) fail(ErrorKind::InvalidInput, "hyperparameters must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "tau") hp.tau = value.get<double>();
      else if (key == "alpha") hp.alpha = value.get<double>();
      else if (key == "gamma") hp.gamma = value.get<double>();
      else if (key == "lambda_cmp") hp.lambda_cmp = value.get<double>();
      else if (key == "lambda_rcmp") hp.lambda_rcmp = value.get<double>();
      else if (key == "primitives") hp.primitives = value.get<int>();
      else if (key == "lr") hp.lr = value.get<double>();
      else if (key == "momentum") hp.momentum = value.get<double>();
      else if (key == "base_epochs") hp.base_epochs = value.get<int>();
      else if (key == "incremental_epochs") hp.incremental_epochs = value.get<int>();
      else if (key == "batch_size") hp.batch_size = value.get<int>();
      else if (key == "seed") hp.seed = value.get<std::uint64_t>();
      else if (key == "incremental_cls") hp.incremental_cls = value.get<bool>();
      else if (key == "stop_attention_grad") hp.stop_attention_grad = value.get<bool>();
      else fail(ErrorKind::InvalidInput, "unknown hyperparameter '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidInput, std::string("hyperparameters: ") + e.what());
  }
  if (!(hp.tau > 0.0)) fail(ErrorKind::InvalidInput, "tau must be positive");
  if (!(hp.alpha > 0.0 && hp.alpha <= 1.0)) fail(ErrorKind::InvalidInput, "alpha must lie in (0, 1]");
  if (!(hp.gamma > 0.0)) fail(ErrorKind::InvalidInput, "gamma must be positive");
  if (hp.lambda_cmp < 0.0 || hp.lambda_rcmp < 0.0) fail(ErrorKind::InvalidInput, "negative loss weight");
  if (hp.primitives < 1) fail(ErrorKind::InvalidInput, "primitives must be positive");
  if (hp.lr < 0.0) fail(ErrorKind::InvalidInput, "lr must be nonnegative");
  if (!(hp.momentum >= 0.0 && hp.momentum < 1.0)) fail(ErrorKind::InvalidInput, "momentum must lie in [0, 1)");
  if (hp.base_epochs < 0 || hp.incremental_epochs < 0) fail(ErrorKind::InvalidInput, "negative epochs");
  return hp;
}

void save_checkpoint(const std::filesystem::path& dir, const ModelState& state) {
  std::filesystem::create_directories(dir);
  Tensor bank;
  bank.dims = {static_cast<std::uint32_t>(state.bank.size()),
               static_cast<std::uint32_t>(state.bank.primitives_per_class),
               static_cast<std::uint32_t>(state.bank.dim)};
  for (const auto& b : state.bank.blocks) bank.values.insert(bank.values.end(), b.data(), b.data() + b.size());
  write_tensor(dir / "bank.ckat", bank);
  write_text(dir / "bank.json",
             json{{"classes", state.bank.classes}, {"frozen", state.bank.frozen}}.dump(1) + "\n");
  write_tensor(dir / "classifier.ckat", Tensor::from_matrix(state.weights.rows));

  json registry = json::array();
  for (const auto& r : state.registry) registry.push_back({{"id", r.id}, {"session", r.session}});
  json doc = {
      {"format", "compfscil-checkpoint"},
      {"version", 1},
      {"hyperparams", hyperparams_to_json(state.hp)},
      {"registry", registry},
      {"classifier_classes", state.weights.classes},
      {"classifier_frozen", state.weights.frozen},
      {"sessions_seen", state.sessions_seen},
      {"rng", {{"seed", state.hp.seed},
               {"streams", {"init", "init-classifier", "shuffle"}},
               {"next_session_index", state.sessions_seen}}},
      {"epoch_losses", state.epoch_losses},
  };
  write_text(dir / "state.json", doc.dump(1) + "\n");
}

ModelState load_checkpoint(const std::filesystem::path& dir) {
  auto parse = [](const std::filesystem::path& p) {
    const auto bytes = read_file(p);
    try {
      return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
      fail(ErrorKind::InvalidInput, p.string() + ": " + e.what());
    }
  };
  const json bank_meta = parse(dir / "bank.json");
  const json doc = parse(dir / "state.json");
  const Tensor bank = read_tensor(dir / "bank.ckat");
  const Tensor classifier = read_tensor(dir / "classifier.ckat");
  if (bank.dims.size() != 3 || classifier.dims.size() != 2) {
    fail(ErrorKind::InvalidInput, "checkpoint tensors have unexpected rank");
  }
  ModelState state;
  try {
    state.bank.classes = bank_meta.at("classes").get<std::vector<ClassId>>();
    state.bank.frozen = bank_meta.at("frozen").get<std::vector<bool>>();
    state.bank.primitives_per_class = static_cast<int>(bank.dims[1]);
    state.bank.dim = static_cast<int>(bank.dims[2]);
    if (state.bank.classes.size() != bank.dims[0] || state.bank.frozen.size() != bank.dims[0]) {
      fail(ErrorKind::InvalidInput, "bank sidecar does not match bank tensor");
    }
    for (std::size_t c = 0; c < bank.dims[0]; ++c) state.bank.blocks.push_back(bank.matrix(c));
    state.weights.classes = doc.at("classifier_classes").get<std::vector<ClassId>>();
    state.weights.frozen = doc.at("classifier_frozen").get<std::vector<bool>>();
    state.weights.rows = classifier.matrix();
    state.hp = hyperparams_from_json(doc.at("hyperparams"));
    state.sessions_seen = doc.at("sessions_seen").get<int>();
    for (const auto& r : doc.at("registry")) {
      state.registry.push_back({r.at("id").get<ClassId>(), r.at("session").get<int>()});
    }
    state.epoch_losses = doc.at("epoch_losses").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidInput, std::string("checkpoint: ") + e.what());
  }
  return state;
}

}  // namespace compfscil
