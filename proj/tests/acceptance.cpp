// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "compfscil/cka.hpp"
#include "compfscil/data.hpp"
#include "compfscil/error.hpp"
#include "compfscil/losses.hpp"
#include "compfscil/primitives.hpp"
#include "compfscil/protocol.hpp"
#include "compfscil/training.hpp"
#include "oracles.hpp"

using namespace compfscil;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

int failures = 0;

void report(int id, bool pass, const std::string& title, const std::string& detail) {
  std::printf("criterion %2d: %s  %s  [%s]\n", id, pass ? "PASS" : "FAIL", title.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

struct Pair {
  Matrix x;
  Matrix z;
};

std::vector<Pair> random_pairs(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> rows_x(1, 64);
  std::uniform_int_distribution<int> rows_z(1, 16);
  std::uniform_int_distribution<int> cols(2, 128);
  std::vector<Pair> pairs;
  pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int d = cols(rng);
    Pair p;
    p.x = oracle::random_matrix(rng, rows_x(rng), d);
    p.z = oracle::random_matrix(rng, rows_z(rng), d);
    if (i % 2 == 1) {
      p.x = p.x.cwiseAbs();
      p.z = p.z.cwiseAbs();
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void criterion_cka_identities(const std::vector<Pair>& pairs) {
  const auto start = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  double range_violation = 0.0, symmetry = 0.0, self = 0.0, scaling = 0.0, mixing = 0.0,
         permutation = 0.0, oracle_gap = 0.0;
  for (const auto& p : pairs) {
    const double v = linear_cka(p.x, p.z);
    range_violation = std::max({range_violation, -v, v - 1.0});
    symmetry = std::max(symmetry, std::abs(v - linear_cka(p.z, p.x)));
    self = std::max(self, std::abs(linear_cka(p.x, p.x) - 1.0));
    const double c = (rng() % 2 == 0 ? -1.0 : 1.0) * scale(rng);
    scaling = std::max(scaling, std::abs(linear_cka(c * p.x, p.z) - v) / std::max(std::abs(v), 1e-300));
    const Matrix q = oracle::random_orthogonal(rng, p.x.rows());
    mixing = std::max(mixing, std::abs(linear_cka(q * p.x, p.z) - v));
    std::vector<int> perm(static_cast<std::size_t>(p.x.cols()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Eigen::PermutationMatrix<Eigen::Dynamic> pm(p.x.cols());
    for (std::size_t j = 0; j < perm.size(); ++j) pm.indices()[static_cast<Eigen::Index>(j)] = perm[j];
    permutation = std::max(permutation, std::abs(linear_cka(p.x * pm, p.z * pm) - v));
    oracle_gap = std::max(oracle_gap, std::abs(v - oracle::linear_cka(p.x, p.z)));
  }
  const double elapsed = seconds_since(start);
  const bool pass = range_violation <= 1e-9 && symmetry <= 1e-12 && self <= 1e-9 &&
                    scaling <= 1e-12 && mixing <= 1e-9 && permutation <= 1e-12 &&
                    oracle_gap <= 1e-9 && elapsed < 10.0;
  char detail[512];
  std::snprintf(detail, sizeof detail,
                "%zu pairs; range %.1e, symmetry %.1e, self %.1e, scale(rel) %.1e, mixing %.1e, "
                "channel perm %.1e, vs explicit-H oracle %.1e; %.2f s",
                pairs.size(), std::max(range_violation, 0.0), symmetry, self, scaling, mixing,
                permutation, oracle_gap, elapsed);
  report(1, pass, "CKA identity suite", detail);
}

void criterion_decompositions(const std::vector<Pair>& pairs) {
  double importance_gap = 0.0, weights_gap = 0.0, negative = 0.0;
  for (const auto& p : pairs) {
    const double v = linear_cka(p.x, p.z);
    const Vector imp = patch_importance(p.x, p.z);
    importance_gap = std::max(importance_gap, std::abs(imp.sum() - v));
    negative = std::max(negative, -imp.minCoeff());
    const Matrix w = match_weights(p.x, p.z).w;
    const Matrix dots = center_rows(p.x) * center_rows(p.z).transpose();
    weights_gap = std::max(weights_gap, std::abs(w.cwiseProduct(dots).sum() - v));
  }
  const bool pass = importance_gap <= 1e-9 && weights_gap <= 1e-9 && negative <= 0.0;
  report(2, pass, "decomposition identities",
         fmt("sum importance %.1e, sum W^A (X~.Z~) %.1e, min importance %.1e", importance_gap,
             weights_gap, -negative));
}

void criterion_hand_values() {
  Matrix a(2, 2), b(1, 2), c(1, 3), d(1, 3);
  a << 1, 0, 0, 1;
  b << 2, 0;
  c << 1, 0, 0;
  d << 0, 1, 0;
  const double v1 = linear_cka(a, b);
  const double v2 = linear_cka(c, d);
  const bool pass = std::abs(v1 - 1.0) <= 1e-12 && std::abs(v2 - 0.25) <= 1e-12;
  report(3, pass, "hand-oracle CKA values", fmt("%.15f (want 1), %.15f (want 0.25)", v1, v2));
}

void criterion_allmatch(const std::vector<Pair>& pairs) {
  double gap = 0.0;
  std::size_t used = 0;
  for (const auto& p : pairs) {
    const double lhs = allmatch_similarity(p.x, p.z, MatchMode::Mean);
    gap = std::max(gap, std::abs(lhs - oracle::averaged_normalized_dot(p.x, p.z)));
    ++used;
  }
  report(4, gap <= 1e-9, "mean-mode allmatch identity",
         fmt("%.0f pairs, max gap %.1e", static_cast<double>(used), gap));
}

struct GradInstance {
  std::vector<FeatureMap> maps;
  std::vector<const FeatureMap*> batch;
  PrimitiveBank bank;
  ClassifierWeights weights;
  DonorMap donors;
};

GradInstance gradient_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> classes(2, 4), prims(1, 3), dim(3, 6), rows(1, 5), batch(1, 3);
  GradInstance g;
  const int k = classes(rng);
  const int n_prim = prims(rng);
  const int d = dim(rng);
  const int n = rows(rng);
  g.bank.primitives_per_class = n_prim;
  g.bank.dim = d;
  g.weights.rows = oracle::random_matrix(rng, k, d);
  for (int c = 0; c < k; ++c) {
    g.bank.classes.push_back(c);
    g.bank.blocks.push_back(oracle::random_matrix(rng, n_prim, d));
    g.bank.frozen.push_back(false);
    g.weights.classes.push_back(c);
    g.weights.frozen.push_back(false);
  }
  const int b = batch(rng);
  for (int s = 0; s < b; ++s) {
    FeatureMap m;
    m.label = static_cast<ClassId>(rng() % static_cast<std::uint64_t>(k));
    m.x = oracle::random_matrix(rng, n, d).cwiseAbs();
    g.maps.push_back(std::move(m));
  }
  for (const auto& m : g.maps) g.batch.push_back(&m);
  std::vector<bool> is_base(static_cast<std::size_t>(k), true);
  if (k > 2) is_base.back() = false;
  g.donors = default_donors(is_base);
  return g;
}

double gradient_error(const GradInstance& g, const LossConfig& config) {
  const TrainableMask mask = TrainableMask::from_frozen(g.bank, g.weights);
  const LossAndGrad lg = total_loss_and_grad(g.batch, g.bank, g.weights, g.donors, config, mask);
  PrimitiveBank bank = g.bank;
  ClassifierWeights weights = g.weights;
  const auto f = [&](const Vector& theta) {
    unpack_parameters(theta, bank, weights);
    return total_loss(g.batch, bank, weights, g.donors, config);
  };
  const Vector numeric = central_diff_grad(f, pack_parameters(g.bank, g.weights), 1e-5);
  return max_relative_error(pack_gradients(lg.grad), numeric);
}

void criterion_gradients() {
  const auto start = Clock::now();
  const double alphas[] = {0.5, 0.8, 1.0};
  const double taus[] = {1.0, 8.0, 16.0};
  const double gammas[] = {1.0, 16.0, 64.0};
  const char* names[] = {"L_cls", "L_cmp", "L_rcmp", "total"};
  double worst[4] = {0, 0, 0, 0};
  for (int i = 0; i < 100; ++i) {
    const GradInstance g = gradient_instance(5000 + static_cast<std::uint64_t>(i));
    LossConfig base;
    base.alpha = alphas[i % 3];
    base.tau = taus[(i / 3) % 3];
    base.gamma = gammas[(i / 9) % 3];
    for (int term = 0; term < 4; ++term) {
      LossConfig cfg = base;
      cfg.lambda_cls = term == 0 || term == 3 ? 1.0 : 0.0;
      cfg.lambda_cmp = term == 1 ? 1.0 : (term == 3 ? 2.0 : 0.0);
      cfg.lambda_rcmp = term == 2 ? 1.0 : (term == 3 ? 2.0 : 0.0);
      worst[term] = std::max(worst[term], gradient_error(g, cfg));
    }
  }
  const double elapsed = seconds_since(start);
  const double max_err = *std::max_element(worst, worst + 4);
  char detail[256];
  std::snprintf(detail, sizeof detail, "100 instances; max rel err %s %.1e, %s %.1e, %s %.1e, %s %.1e; %.2f s",
                names[0], worst[0], names[1], worst[1], names[2], worst[2], names[3], worst[3],
                elapsed);
  report(5, max_err <= 1e-4 && elapsed < 60.0, "analytic gradients vs central differences", detail);
}

void criterion_attention() {
  std::mt19937_64 rng(606);
  double worst = 0.0;
  int checked = 0;
  while (checked < 200) {
    const Matrix targets = 2.0 * oracle::random_matrix(rng, 4, 6);
    const Matrix donors = 2.0 * oracle::random_matrix(rng, 1 + static_cast<int>(rng() % 12), 6);
    Matrix nearest(targets.rows(), targets.cols());
    bool ok = true;
    for (Eigen::Index i = 0; i < targets.rows() && ok; ++i) {
      const Vector dist = (donors.rowwise() - targets.row(i)).rowwise().squaredNorm();
      Eigen::Index best = 0;
      const double d0 = dist.minCoeff(&best);
      for (Eigen::Index k = 0; k < dist.size(); ++k) {
        if (k != best && dist[k] - d0 < 0.5) ok = false;
      }
      nearest.row(i) = donors.row(best);
    }
    if (!ok) continue;
    const auto r = attention_replace(targets, donors, 64.0);
    worst = std::max(worst, (r.replaced - nearest).cwiseAbs().maxCoeff());
    ++checked;
  }
  report(6, worst <= 1e-6, "attention sharpness at gamma 64",
         fmt("%.0f instances with gaps >= 0.5, max deviation %.1e", checked, worst));
}

std::vector<FeatureMap> novel_only(const ModelState& st, const std::vector<FeatureMap>& test) {
  std::vector<FeatureMap> out;
  for (const auto& m : test) {
    if (st.session_of(m.label) > 0) out.push_back(m);
  }
  return out;
}

struct SessionRun {
  ModelState final_state;
  bool frozen_ok = true;
};

SessionRun run_with_checks(const Dataset& data, const Hyperparams& hp) {
  SessionRun run;
  ModelState state = train_base(data.train_session(0), data.schedule.base, hp);
  for (std::size_t s = 1; s < data.schedule.session_count(); ++s) {
    const ModelState next = train_incremental(state, data.train_session(static_cast<int>(s)));
    for (std::size_t c = 0; c < state.bank.size(); ++c) {
      run.frozen_ok = run.frozen_ok && next.bank.blocks[c] == state.bank.blocks[c] &&
                      next.bank.classes[c] == state.bank.classes[c];
    }
    run.frozen_ok = run.frozen_ok &&
                    next.weights.rows.topRows(state.weights.rows.rows()) == state.weights.rows;
    state = next;
  }
  run.final_state = std::move(state);
  return run;
}

bool same_directory(const fs::path& a, const fs::path& b) {
  std::size_t count = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    ++count;
    const fs::path other = b / entry.path().filename();
    if (!fs::exists(other) || read_file(entry.path()) != read_file(other)) return false;
  }
  return count > 0;
}

struct SeedResult {
  double composition = 0.0;
  double baseline = 0.0;
  double retention = 0.0;
  double retention_no_rcmp = 0.0;
  double auc = 0.0;
};

void synthetic_criteria() {
  const std::uint64_t seeds[] = {0, 1, 2};
  std::vector<SeedResult> results;
  double experiment_seconds = 0.0;
  bool frozen_ok = true;
  bool deterministic = true;
  const std::vector<double> ratios{0.5};
  const fs::path scratch = fs::temp_directory_path() / "compfscil_acceptance";

  for (std::uint64_t seed : seeds) {
    SynthConfig cfg;
    cfg.seed = seed;
    Hyperparams hp;
    hp.seed = seed;

    const auto start = Clock::now();
    const Dataset data = synth_generate(cfg);
    SessionRun run = run_with_checks(data, hp);
    frozen_ok = frozen_ok && run.frozen_ok;
    const ModelState& st = run.final_state;
    const EvalReport comp = evaluate_dataset(st, data, Head::Composition);
    const EvalReport base = evaluate_dataset(st, data, Head::Baseline);
    experiment_seconds += seconds_since(start);

    SeedResult r;
    r.composition = comp.sessions.back().overall;
    r.baseline = base.sessions.back().overall;
    const auto test = data.test_up_to(st.sessions_seen - 1);
    const auto novel = novel_only(st, test);
    r.retention = reuse_retention_eval(st, novel, ratios, seed).front().retention;
    r.auc = importance_auc(st, test, data.annotations);

    Hyperparams hp0 = hp;
    hp0.lambda_rcmp = 0.0;
    const ModelState st0 = run_sessions(data, hp0);
    r.retention_no_rcmp = reuse_retention_eval(st0, novel, ratios, seed).front().retention;
    results.push_back(r);

    if (seed == seeds[0]) {
      const SessionRun again = run_with_checks(data, hp);
      fs::remove_all(scratch);
      save_checkpoint(scratch / "a", st);
      save_checkpoint(scratch / "b", again.final_state);
      deterministic = same_directory(scratch / "a", scratch / "b") &&
                      report_to_json(comp).dump() ==
                          report_to_json(evaluate_dataset(again.final_state, data, Head::Composition)).dump();
      fs::remove_all(scratch);
    }
    std::printf("  seed %llu: composition %.2f, baseline %.2f, retention %.2f vs %.2f (lambda2=0), "
                "auc %.4f\n",
                static_cast<unsigned long long>(seed), r.composition, r.baseline, r.retention,
                r.retention_no_rcmp, r.auc);
  }

  auto mean = [&](double SeedResult::*field) {
    double sum = 0.0;
    for (const auto& r : results) sum += r.*field;
    return sum / static_cast<double>(results.size());
  };

  report(7, frozen_ok && deterministic, "freezing and determinism",
         std::string("prior-session parameters bit-identical: ") + (frozen_ok ? "yes" : "no") +
             ", repeated run checkpoints and report byte-identical: " +
             (deterministic ? "yes" : "no"));

  const double gain = mean(&SeedResult::composition) - mean(&SeedResult::baseline);
  report(8, gain >= 5.0 && experiment_seconds < 300.0, "synthetic composition vs baseline",
         fmt("mean final overall %.2f vs %.2f, gain %.2f points; 3 seeds in %.1f s",
             mean(&SeedResult::composition), mean(&SeedResult::baseline), gain, experiment_seconds));

  const double with = mean(&SeedResult::retention);
  const double without = mean(&SeedResult::retention_no_rcmp);
  report(9, with >= without, "reuse retention at 50% replacement",
         fmt("mean retention lambda2=2: %.2f, lambda2=0: %.2f", with, without));

  const double auc = mean(&SeedResult::auc);
  report(10, auc >= 0.8, "importance ranking of shared patches", fmt("mean AUC %.4f", auc));
}

void criterion_metric_arithmetic() {
  const std::vector<double> tab2{82.78, 78.20, 74.31, 70.91, 67.44, 64.94, 62.83, 60.98, 59.00};
  const std::vector<double> tab4{79.57, 74.55, 70.79, 67.43, 64.60, 62.01, 59.58};
  const double pd2 = performance_drop(tab2);
  const double pd4 = performance_drop(tab4);
  auto at_table_precision = [](double v) { return std::round(v * 100.0) / 100.0; };
  const bool pass = std::abs(pd2 - 23.78) <= 1e-12 && std::abs(pd4 - 19.99) <= 1e-12 &&
                    at_table_precision(pd2) == 23.78 && at_table_precision(pd4) == 19.99;
  report(11, pass, "performance drop arithmetic",
         fmt("%.15g (want 23.78), %.15g (want 19.99)", pd2, pd4));
}

void criterion_throughput() {
  std::mt19937_64 rng(1212);
  ModelState st;
  st.hp.alpha = 0.8;
  st.bank.primitives_per_class = 16;
  st.bank.dim = 512;
  st.weights.rows = oracle::random_matrix(rng, 100, 512);
  for (int c = 0; c < 100; ++c) {
    st.bank.classes.push_back(c);
    st.bank.blocks.push_back(oracle::random_matrix(rng, 16, 512).cwiseAbs());
    st.bank.frozen.push_back(true);
    st.weights.classes.push_back(c);
    st.weights.frozen.push_back(true);
    st.registry.push_back({c, 0});
  }
  st.sessions_seen = 1;
  std::vector<FeatureMap> maps(100);
  for (auto& m : maps) m.x = oracle::random_matrix(rng, 64, 512).cwiseAbs();
  const double median = throughput_bench(st, maps, 5);
  report(12, median <= 1.0, "composition scoring throughput",
         fmt("100 maps, S=64, d=512, 100 classes, N=16: median %.3f s of 5", median));
}

void criterion_tensor_format() {
  Tensor golden;
  golden.dims = {1, 2};
  golden.dtype = DType::Float32;
  golden.values = {1.0, 2.0};
  const std::vector<std::uint8_t> expected{0x43, 0x4B, 0x41, 0x54, 0x01, 0x00, 0x00, 0x00,
                                           0x01, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00,
                                           0x01, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00,
                                           0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40};
  const bool golden_ok = encode_tensor(golden) == expected;

  std::mt19937_64 rng(1313);
  std::normal_distribution<double> normal(0.0, 100.0);
  const fs::path dir = fs::temp_directory_path() / "compfscil_acceptance_tensors";
  fs::remove_all(dir);
  int round_trips = 0;
  for (int i = 0; i < 100; ++i) {
    Tensor t;
    t.dtype = i % 2 == 0 ? DType::Float32 : DType::Float64;
    const int nd = 1 + i % 3;
    for (int k = 0; k < nd; ++k) t.dims.push_back(static_cast<std::uint32_t>(1 + rng() % 7));
    t.values.resize(t.numel());
    for (double& v : t.values) v = t.dtype == DType::Float32 ? static_cast<float>(normal(rng)) : normal(rng);
    const fs::path path = dir / ("t" + std::to_string(i) + ".ckat");
    write_tensor(path, t);
    const Tensor back = read_tensor(path);
    if (back.dims == t.dims && back.dtype == t.dtype &&
        std::memcmp(back.values.data(), t.values.data(), t.values.size() * sizeof(double)) == 0) {
      ++round_trips;
    }
  }
  fs::remove_all(dir);

  auto kind_of = [](std::vector<std::uint8_t> bytes) {
    try {
      decode_tensor(bytes);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::Io;
  };
  auto truncated = expected;
  truncated.pop_back();
  auto magic = expected;
  magic[1] = 0;
  auto version = expected;
  version[4] = 9;
  const bool errors_ok = kind_of(truncated) == ErrorKind::TruncatedPayload &&
                         kind_of(magic) == ErrorKind::BadMagic &&
                         kind_of(version) == ErrorKind::BadVersion;
  report(13, golden_ok && round_trips == 100 && errors_ok, "tensor format",
         std::string("golden bytes ") + (golden_ok ? "match" : "differ") + ", " +
             std::to_string(round_trips) + "/100 bit-exact round trips, corruption errors " +
             (errors_ok ? "raised" : "missing"));
}

}  // namespace

int main() {
  const auto start = Clock::now();
  try {
    const auto pairs = random_pairs(1000, 2024);
    criterion_cka_identities(pairs);
    criterion_decompositions(pairs);
    criterion_hand_values();
    criterion_allmatch(pairs);
    criterion_gradients();
    criterion_attention();
    synthetic_criteria();
    criterion_metric_arithmetic();
    criterion_throughput();
    criterion_tensor_format();
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::printf("%d criteria failed; total %.1f s\n", failures, seconds_since(start));
  return failures == 0 ? 0 : 1;
}
