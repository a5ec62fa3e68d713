#include "compfscil/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "compfscil/error.hpp"
#include "compfscil/protocol.hpp"
#include "compfscil/random.hpp"

namespace compfscil {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "1.0.0";
constexpr const char* kDataEnv = "COMPFSCIL_DATA";

// Hyperparameter flags; each is applied only when given on the command line.
struct HpFlags {
  double tau = 0, alpha = 0, gamma = 0, lambda_cmp = 0, lambda_rcmp = 0, lambda = 0, lr = 0,
         momentum = 0;
  int primitives = 0, base_epochs = 0, inc_epochs = 0, batch_size = 0;
  std::uint64_t seed = 0;
  bool no_inc_cls = false, stop_attention_grad = false;
  std::vector<std::pair<CLI::Option*, std::function<void(Hyperparams&)>>> setters;

  void attach(CLI::App* app) {
    auto add = [&](const std::string& name, auto& field, const std::string& help,
                   std::function<void(Hyperparams&)> apply) {
      setters.emplace_back(app->add_option(name, field, help), std::move(apply));
    };
    add("--tau", tau, "softmax temperature", [this](Hyperparams& h) { h.tau = tau; });
    add("--alpha", alpha, "power transform exponent in (0, 1]",
        [this](Hyperparams& h) { h.alpha = alpha; });
    add("--gamma", gamma, "replacement attention sharpness",
        [this](Hyperparams& h) { h.gamma = gamma; });
    add("--lambda", lambda, "sets both composition loss weights",
        [this](Hyperparams& h) { h.lambda_cmp = h.lambda_rcmp = lambda; });
    add("--lambda-cmp", lambda_cmp, "composition loss weight",
        [this](Hyperparams& h) { h.lambda_cmp = lambda_cmp; });
    add("--lambda-rcmp", lambda_rcmp, "replaced-composition loss weight",
        [this](Hyperparams& h) { h.lambda_rcmp = lambda_rcmp; });
    add("--primitives", primitives, "primitives per class",
        [this](Hyperparams& h) { h.primitives = primitives; });
    add("--lr", lr, "learning rate", [this](Hyperparams& h) { h.lr = lr; });
    add("--momentum", momentum, "SGD momentum", [this](Hyperparams& h) { h.momentum = momentum; });
    add("--base-epochs", base_epochs, "base-session epochs",
        [this](Hyperparams& h) { h.base_epochs = base_epochs; });
    add("--inc-epochs", inc_epochs, "incremental-session epochs",
        [this](Hyperparams& h) { h.incremental_epochs = inc_epochs; });
    add("--batch-size", batch_size, "base-session mini-batch size",
        [this](Hyperparams& h) { h.batch_size = batch_size; });
    add("--seed", seed, "seed for every random substream", [this](Hyperparams& h) { h.seed = seed; });
    setters.emplace_back(app->add_flag("--no-inc-cls", no_inc_cls,
                                       "train only primitives in incremental sessions"),
                         [](Hyperparams& h) { h.incremental_cls = false; });
    setters.emplace_back(app->add_flag("--stop-attention-grad", stop_attention_grad,
                                       "treat replacement attention as constant"),
                         [](Hyperparams& h) { h.stop_attention_grad = true; });
  }

  void apply(Hyperparams& hp) const {
    for (const auto& [opt, fn] : setters) {
      if (opt->count() > 0) fn(hp);
    }
  }
};

struct Common {
  std::string preset;
  std::string config;
  int threads = 1;
  std::string init = "kmeans";
};

Hyperparams apply_preset(Hyperparams hp, const std::string& preset) {
  if (preset.empty() || preset == "miniimagenet-like") {
    if (!preset.empty()) {
      hp.lambda_cmp = hp.lambda_rcmp = 2.0;
      hp.alpha = 0.8;
    }
  } else if (preset == "cifar-like") {
    hp.lambda_cmp = hp.lambda_rcmp = 2.0;
    hp.alpha = 0.6;
  } else if (preset == "cub-like") {
    hp.lambda_cmp = hp.lambda_rcmp = 0.01;
    hp.alpha = 0.5;
  } else {
    fail(ErrorKind::InvalidInput, "unknown preset '" + preset + "'");
  }
  return hp;
}

json read_json(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    fail(ErrorKind::InvalidInput, path.string() + ": " + e.what());
  }
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  json cfg = read_json(path);
  if (!cfg.is_object()) fail(ErrorKind::InvalidInput, "config file must hold a JSON object");
  for (const auto& [key, value] : cfg.items()) {
    if (key != "hyperparams" && key != "synth") {
      fail(ErrorKind::InvalidInput, "unknown config key '" + key + "'");
    }
  }
  return cfg;
}

Hyperparams resolve_hp(Hyperparams base, const Common& common, const HpFlags& flags) {
  base = apply_preset(base, common.preset);
  const json cfg = load_config(common.config);
  if (cfg.contains("hyperparams")) base = hyperparams_from_json(cfg["hyperparams"], base);
  flags.apply(base);
  return hyperparams_from_json(json::object(), base);  // validation only
}

TrainOptions train_options(const Common& common) {
  TrainOptions options;
  options.threads = common.threads;
  if (common.init == "kmeans") {
    options.primitive_init.kind = InitScheme::Kind::KMeans;
  } else if (common.init == "gaussian") {
    options.primitive_init.kind = InitScheme::Kind::Gaussian;
  } else {
    fail(ErrorKind::InvalidInput, "unknown init scheme '" + common.init + "'");
  }
  return options;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

json provenance(const std::string& command, const json& config, std::uint64_t seed) {
  return {{"command", command},
          {"config", config},
          {"seed", seed},
          {"versions", {{"compfscil", kVersion},
                        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                      std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                      std::to_string(EIGEN_MINOR_VERSION)},
                        {"compiler", __VERSION__}}},
          {"timestamp", timestamp()}};
}

void write_json(const fs::path& path, const json& doc) { write_text(path, doc.dump(1) + "\n"); }

// Reports stay byte-stable across identical runs; the provenance record goes next to them.
void write_report(const fs::path& path, const json& doc, const json& record) {
  write_json(path, doc);
  fs::path sidecar = path;
  sidecar.replace_extension(".provenance.json");
  write_json(sidecar, record);
}

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  std::string text(buf, res.ptr);
  if (text.find_first_of(".eEn") == std::string::npos) text += ".0";
  return text;
}

std::string data_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kDataEnv)) return env;
  fail(ErrorKind::InvalidInput, std::string("no --data given and ") + kDataEnv + " is unset");
}

SynthConfig synth_preset(const std::string& name) {
  SynthConfig cfg;
  if (name.empty() || name == "synth-default") return cfg;
  if (name == "synth-small") {
    cfg.base_classes = 6;
    cfg.sessions = 2;
    cfg.classes_per_session = 2;
    cfg.train_per_base_class = 10;
    cfg.test_per_class = 10;
    cfg.pool_size = 12;
    cfg.dim = 16;
    cfg.shared_patches = 6;
    cfg.distractor_patches = 2;
    return cfg;
  }
  fail(ErrorKind::InvalidInput, "unknown dataset preset '" + name + "'");
}

SynthConfig synth_from_json(const json& j, SynthConfig cfg) {
  for (const auto& [key, v] : j.items()) {
    if (key == "pool_size") cfg.pool_size = v.get<int>();
    else if (key == "primitives_per_class") cfg.primitives_per_class = v.get<int>();
    else if (key == "shared_patches") cfg.shared_patches = v.get<int>();
    else if (key == "distractor_patches") cfg.distractor_patches = v.get<int>();
    else if (key == "noise") cfg.noise = v.get<double>();
    else if (key == "dim") cfg.dim = v.get<int>();
    else if (key == "base_classes") cfg.base_classes = v.get<int>();
    else if (key == "sessions") cfg.sessions = v.get<int>();
    else if (key == "classes_per_session") cfg.classes_per_session = v.get<int>();
    else if (key == "shots") cfg.shots = v.get<int>();
    else if (key == "train_per_base_class") cfg.train_per_base_class = v.get<int>();
    else if (key == "test_per_class") cfg.test_per_class = v.get<int>();
    else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
    else fail(ErrorKind::InvalidInput, "unknown synth key '" + key + "'");
  }
  return cfg;
}

json synth_to_json(const SynthConfig& c) {
  return {{"pool_size", c.pool_size},
          {"primitives_per_class", c.primitives_per_class},
          {"shared_patches", c.shared_patches},
          {"distractor_patches", c.distractor_patches},
          {"noise", c.noise},
          {"dim", c.dim},
          {"base_classes", c.base_classes},
          {"sessions", c.sessions},
          {"classes_per_session", c.classes_per_session},
          {"shots", c.shots},
          {"train_per_base_class", c.train_per_base_class},
          {"test_per_class", c.test_per_class},
          {"seed", c.seed}};
}

void add_common(CLI::App* app, Common& common, bool with_hp_preset) {
  app->add_option("--threads", common.threads, "worker threads (1 is bit-reproducible)")
      ->check(CLI::PositiveNumber);
  app->add_option("--config", common.config, "JSON config file {hyperparams, synth}");
  if (with_hp_preset) {
    app->add_option("--preset", common.preset, "miniimagenet-like | cifar-like | cub-like");
    app->add_option("--init", common.init, "primitive initialization: kmeans | gaussian");
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compositional few-shot class-incremental heads over patch feature maps",
               "compfscil"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  // gen
  Common gen_common;
  std::string gen_out;
  std::uint64_t gen_seed = 0;
  double gen_noise = 0;
  auto* gen = app.add_subcommand("gen", "generate a synthetic compositional dataset");
  add_common(gen, gen_common, false);
  gen->add_option("--preset", gen_common.preset, "synth-default | synth-small");
  gen->add_option("--out", gen_out, "output directory")->required();
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed, "generator seed");
  auto* gen_noise_opt = gen->add_option("--noise", gen_noise, "patch noise standard deviation");

  // train-base
  Common tb_common;
  HpFlags tb_flags;
  std::string tb_data, tb_out;
  auto* train_base_cmd = app.add_subcommand("train-base", "train the base session");
  add_common(train_base_cmd, tb_common, true);
  tb_flags.attach(train_base_cmd);
  train_base_cmd->add_option("--data", tb_data, "dataset directory (default $COMPFSCIL_DATA)");
  train_base_cmd->add_option("--out", tb_out, "checkpoint directory")->required();

  // train-inc
  Common ti_common;
  HpFlags ti_flags;
  std::string ti_data, ti_ckpt, ti_out;
  int ti_session = -1;
  auto* train_inc_cmd = app.add_subcommand("train-inc", "train the next incremental session");
  add_common(train_inc_cmd, ti_common, true);
  ti_flags.attach(train_inc_cmd);
  train_inc_cmd->add_option("--data", ti_data, "dataset directory (default $COMPFSCIL_DATA)");
  train_inc_cmd->add_option("--ckpt", ti_ckpt, "input checkpoint")->required();
  train_inc_cmd->add_option("--out", ti_out, "output checkpoint")->required();
  train_inc_cmd->add_option("--session", ti_session, "session to train (default: next)");

  // eval
  Common ev_common;
  std::string ev_data, ev_ckpt, ev_out, ev_head = "composition";
  auto* eval_cmd = app.add_subcommand("eval", "per-session accuracies and PD");
  add_common(eval_cmd, ev_common, false);
  eval_cmd->add_option("--data", ev_data, "dataset directory (default $COMPFSCIL_DATA)");
  eval_cmd->add_option("--ckpt", ev_ckpt, "checkpoint directory")->required();
  eval_cmd->add_option("--head", ev_head, "composition | baseline | allmatch | maxmatch");
  eval_cmd->add_option("--out", ev_out, "report path (default <ckpt>/eval_<head>.json)");

  // sweep
  Common sw_common;
  HpFlags sw_flags;
  std::string sw_data, sw_out;
  std::vector<int> sw_counts{1, 4, 16};
  auto* sweep_cmd = app.add_subcommand("sweep", "train and evaluate per primitive count");
  add_common(sweep_cmd, sw_common, true);
  sw_flags.attach(sweep_cmd);
  sweep_cmd->add_option("--data", sw_data, "dataset directory (default $COMPFSCIL_DATA)");
  sweep_cmd->add_option("--counts", sw_counts, "primitive counts")->delimiter(',');
  sweep_cmd->add_option("--out", sw_out, "output directory")->required();

  // importance
  Common im_common;
  std::string im_data, im_ckpt, im_out, im_export;
  std::vector<int> im_keep;
  bool im_true_label = false;
  int im_top_k = 10;
  auto* importance_cmd =
      app.add_subcommand("importance", "importance-filtered accuracy and patch ranking");
  add_common(importance_cmd, im_common, false);
  importance_cmd->add_option("--data", im_data, "dataset directory (default $COMPFSCIL_DATA)");
  importance_cmd->add_option("--ckpt", im_ckpt, "checkpoint directory")->required();
  importance_cmd->add_option("--keep", im_keep, "patch keep counts (default 1,n/4,n/2,n)")
      ->delimiter(',');
  importance_cmd->add_flag("--true-label", im_true_label, "rank against the true class");
  importance_cmd->add_option("--export", im_export, "write composition retrieval JSON here");
  importance_cmd->add_option("--top-k", im_top_k, "patches per class in the retrieval export");
  importance_cmd->add_option("--out", im_out, "output JSON (default <ckpt>/importance.json)");

  // reuse-eval
  Common re_common;
  std::string re_data, re_ckpt, re_out;
  std::vector<double> re_ratios{0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 1.0};
  std::uint64_t re_seed = 0;
  auto* reuse_cmd = app.add_subcommand("reuse-eval", "novel accuracy retention under replacement");
  add_common(reuse_cmd, re_common, false);
  reuse_cmd->add_option("--data", re_data, "dataset directory (default $COMPFSCIL_DATA)");
  reuse_cmd->add_option("--ckpt", re_ckpt, "checkpoint directory")->required();
  reuse_cmd->add_option("--ratios", re_ratios, "replacement ratios in [0, 1]")->delimiter(',');
  reuse_cmd->add_option("--seed", re_seed, "replacement seed");
  reuse_cmd->add_option("--out", re_out, "output JSON (default <ckpt>/reuse.json)");

  // compare-reps
  std::string cr_a, cr_b;
  auto* compare_cmd = app.add_subcommand("compare-reps", "linear CKA between two representations");
  compare_cmd->add_option("a", cr_a, "b x d_h tensor")->required();
  compare_cmd->add_option("b", cr_b, "b x d_g tensor")->required();

  // bench
  Common bn_common;
  std::string bn_ckpt, bn_data;
  int bn_classes = 100, bn_primitives = 16, bn_dim = 512, bn_patches = 64, bn_samples = 100,
      bn_reps = 5;
  std::uint64_t bn_seed = 0;
  auto* bench_cmd = app.add_subcommand("bench", "composition scoring time per 100 maps");
  add_common(bench_cmd, bn_common, false);
  bench_cmd->add_option("--ckpt", bn_ckpt, "benchmark a trained model instead of random data");
  bench_cmd->add_option("--data", bn_data, "dataset for --ckpt (default $COMPFSCIL_DATA)");
  bench_cmd->add_option("--classes", bn_classes, "random model: classes");
  bench_cmd->add_option("--primitives", bn_primitives, "random model: primitives per class");
  bench_cmd->add_option("--dim", bn_dim, "random model: channels");
  bench_cmd->add_option("--patches", bn_patches, "random maps: patches");
  bench_cmd->add_option("--samples", bn_samples, "maps per timing");
  bench_cmd->add_option("--repetitions", bn_reps, "timings; the median is reported");
  bench_cmd->add_option("--seed", bn_seed, "seed for random data");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    if (gen->parsed()) {
      SynthConfig cfg = synth_preset(gen_common.preset);
      const json file = load_config(gen_common.config);
      if (file.contains("synth")) cfg = synth_from_json(file["synth"], cfg);
      if (gen_seed_opt->count()) cfg.seed = gen_seed;
      if (gen_noise_opt->count()) cfg.noise = gen_noise;
      const Dataset data = synth_generate(cfg);
      save_dataset(gen_out, data);
      write_json(fs::path(gen_out) / "provenance.json",
                 provenance("gen", {{"synth", synth_to_json(cfg)}}, cfg.seed));
      out << "wrote " << data.train.size() << " train and " << data.test.size()
          << " test maps to " << gen_out << "\n";
      return 0;
    }
    if (train_base_cmd->parsed()) {
      const Hyperparams hp = resolve_hp({}, tb_common, tb_flags);
      const Dataset data = load_dataset(data_dir(tb_data));
      const ModelState state = train_base(data.train_session(0), data.schedule.base, hp,
                                          train_options(tb_common));
      save_checkpoint(tb_out, state);
      write_json(fs::path(tb_out) / "provenance.json",
                 provenance("train-base", {{"hyperparams", hyperparams_to_json(hp)},
                                           {"init", tb_common.init}}, hp.seed));
      const auto& losses = state.epoch_losses.front();
      out << "base session: " << state.bank.size() << " classes";
      if (!losses.empty()) out << ", loss " << losses.front() << " -> " << losses.back();
      out << "\n";
      return 0;
    }
    if (train_inc_cmd->parsed()) {
      ModelState state = load_checkpoint(ti_ckpt);
      state.hp = resolve_hp(state.hp, ti_common, ti_flags);
      const Dataset data = load_dataset(data_dir(ti_data));
      const int session = ti_session >= 0 ? ti_session : state.sessions_seen;
      if (session != state.sessions_seen) {
        fail(ErrorKind::InvalidInput, "checkpoint expects session " +
                                          std::to_string(state.sessions_seen) + ", got " +
                                          std::to_string(session));
      }
      if (static_cast<std::size_t>(session) >= data.schedule.session_count()) {
        fail(ErrorKind::InvalidInput, "dataset has no session " + std::to_string(session));
      }
      const ModelState next =
          train_incremental(state, data.train_session(session), train_options(ti_common));
      save_checkpoint(ti_out, next);
      write_json(fs::path(ti_out) / "provenance.json",
                 provenance("train-inc", {{"hyperparams", hyperparams_to_json(next.hp)},
                                          {"session", session},
                                          {"init", ti_common.init}}, next.hp.seed));
      out << "session " << session << ": " << next.bank.size() << " classes registered\n";
      return 0;
    }
    if (eval_cmd->parsed()) {
      const ModelState state = load_checkpoint(ev_ckpt);
      const Dataset data = load_dataset(data_dir(ev_data));
      const Head head = parse_head(ev_head);
      const EvalReport report = evaluate_dataset(state, data, head, ev_common.threads);
      const fs::path path = ev_out.empty() ? fs::path(ev_ckpt) / ("eval_" + ev_head + ".json")
                                           : fs::path(ev_out);
      write_report(path, report_to_json(report),
                   provenance("eval", {{"head", ev_head}, {"ckpt", ev_ckpt}}, state.hp.seed));
      out << report_to_table(report);
      return 0;
    }
    if (sweep_cmd->parsed()) {
      const Hyperparams hp = resolve_hp({}, sw_common, sw_flags);
      const Dataset data = load_dataset(data_dir(sw_data));
      const auto rows = primitive_count_sweep(data, sw_counts, hp, train_options(sw_common));
      json table = json::array();
      out << "primitives  last-overall      PD\n";
      for (const auto& r : rows) {
        table.push_back({{"primitives", r.primitives}, {"report", report_to_json(r.report)}});
        out << std::setw(10) << r.primitives << "  " << std::setw(12) << std::fixed
            << std::setprecision(2) << r.report.sessions.back().overall << "  " << std::setw(6)
            << r.report.pd << "\n";
      }
      write_report(fs::path(sw_out) / "sweep.json", {{"rows", table}},
                   provenance("sweep", {{"hyperparams", hyperparams_to_json(hp)},
                                        {"counts", sw_counts}}, hp.seed));
      return 0;
    }
    if (importance_cmd->parsed()) {
      const ModelState state = load_checkpoint(im_ckpt);
      const Dataset data = load_dataset(data_dir(im_data));
      const auto test = data.test_up_to(state.sessions_seen - 1);
      if (test.empty()) fail(ErrorKind::InvalidInput, "no test samples");
      std::vector<int> keep = im_keep;
      if (keep.empty()) {
        const int n = static_cast<int>(test.front().x.rows());
        for (int k : {1, n / 4, n / 2, n}) {
          if (k >= 1 && std::find(keep.begin(), keep.end(), k) == keep.end()) keep.push_back(k);
        }
      }
      const auto curve =
          importance_filter_eval(state, test, keep, im_true_label, im_common.threads);
      json doc;
      json points = json::array();
      out << "keep  accuracy\n";
      for (const auto& p : curve) {
        points.push_back({{"keep", p.keep}, {"accuracy", p.accuracy}});
        out << std::setw(4) << p.keep << "  " << std::fixed << std::setprecision(2) << p.accuracy
            << "\n";
      }
      doc["curve"] = points;
      if (!data.annotations.empty()) {
        const double a = importance_auc(state, test, data.annotations, im_true_label);
        doc["shared_patch_auc"] = a;
        out << "shared-patch AUC " << std::setprecision(4) << a << "\n";
      }
      if (!im_export.empty()) write_json(im_export, composition_retrieval(state, test, im_top_k));
      write_report(im_out.empty() ? fs::path(im_ckpt) / "importance.json" : fs::path(im_out), doc,
                   provenance("importance", {{"ckpt", im_ckpt}, {"keep", keep},
                                             {"true_label", im_true_label}}, state.hp.seed));
      return 0;
    }
    if (reuse_cmd->parsed()) {
      const ModelState state = load_checkpoint(re_ckpt);
      const Dataset data = load_dataset(data_dir(re_data));
      const auto test = data.test_up_to(state.sessions_seen - 1);
      const auto curve = reuse_retention_eval(state, test, re_ratios, re_seed, re_common.threads);
      json points = json::array();
      out << "ratio  novel-acc  retention\n";
      for (const auto& p : curve) {
        points.push_back({{"ratio", p.ratio},
                          {"novel_accuracy", p.novel_accuracy},
                          {"retention", p.retention}});
        out << std::fixed << std::setprecision(2) << std::setw(5) << p.ratio << "  "
            << std::setw(9) << p.novel_accuracy << "  " << std::setw(9) << p.retention << "\n";
      }
      write_report(re_out.empty() ? fs::path(re_ckpt) / "reuse.json" : fs::path(re_out),
                   {{"curve", points}},
                   provenance("reuse-eval", {{"ckpt", re_ckpt}, {"ratios", re_ratios}}, re_seed));
      return 0;
    }
    if (compare_cmd->parsed()) {
      const Matrix a = read_tensor(cr_a).matrix();
      const Matrix b = read_tensor(cr_b).matrix();
      out << format_real(cka_rc(a, b)) << "\n";
      err << provenance("compare-reps", {{"a", cr_a}, {"b", cr_b}}, 0).dump() << "\n";
      return 0;
    }
    if (bench_cmd->parsed()) {
      ModelState state;
      std::vector<FeatureMap> maps;
      if (!bn_ckpt.empty()) {
        state = load_checkpoint(bn_ckpt);
        const Dataset data = load_dataset(data_dir(bn_data));
        const auto test = data.test_up_to(state.sessions_seen - 1);
        for (std::size_t i = 0; i < test.size() && maps.size() < static_cast<std::size_t>(bn_samples); ++i) {
          maps.push_back(test[i]);
        }
      } else {
        Rng rng = make_rng(bn_seed, "bench");
        std::normal_distribution<double> normal(0.0, 1.0);
        state.bank.primitives_per_class = bn_primitives;
        state.bank.dim = bn_dim;
        for (int c = 0; c < bn_classes; ++c) {
          Matrix block(bn_primitives, bn_dim);
          for (Eigen::Index i = 0; i < block.size(); ++i) block.data()[i] = normal(rng);
          state.bank.classes.push_back(c);
          state.bank.blocks.push_back(std::move(block));
          state.bank.frozen.push_back(true);
          state.registry.push_back({c, 0});
        }
        for (int s = 0; s < bn_samples; ++s) {
          FeatureMap m;
          m.x.resize(bn_patches, bn_dim);
          for (Eigen::Index i = 0; i < m.x.size(); ++i) m.x.data()[i] = std::abs(normal(rng));
          maps.push_back(std::move(m));
        }
      }
      const double seconds = throughput_bench(state, maps, bn_reps);
      out << std::setprecision(6) << seconds << " s for " << maps.size() << " maps ("
          << seconds * 100.0 / static_cast<double>(std::max<std::size_t>(maps.size(), 1))
          << " s / 100 images)\n";
      err << provenance("bench", {{"classes", state.bank.size()}, {"samples", maps.size()}}, bn_seed)
                 .dump()
          << "\n";
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace compfscil
