// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Pass criterion numbers as arguments to run a subset.

#include <sys/wait.h>

#include <chrono>
#include <cstring>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "avsal/avsal.hpp"
#include "oracles.hpp"

using namespace avsal;
using TD = Tensor<double>;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

void fail(Outcome& o, const std::string& why) {
  if (o.pass) o.detail = why;
  o.pass = false;
}

char buf[512];
template <class... A>
std::string fmt(const char* f, A... a) {
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TD rnd(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  return rng.uniform_tensor<double>(std::move(s), 1.0);
}

bool bit_equal(const TD& a, const TD& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

void zero(TD t) {
  for (auto& x : t.mutable_data()) x = 0.0;
}

// ------------------------------------------------------------------ 1

Outcome gradient_suite() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::size_t entries = 0;
  const auto reports = run_gradcheck_suite("", 1, 5);
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_error);
    entries += r.entries;
    if (!r.passed || r.seeds < 5) fail(o, r.name + ": " + r.worst);
  }
  const double secs = since(t0);
  if (secs >= 300) fail(o, fmt("took %.0f s", secs));
  if (o.pass) {
    o.detail = fmt("%zu checks x 5 seeds, %zu entries, max rel error %.2e < 1e-4, %.1f s", reports.size(), entries,
                   worst, secs);
  }
  return o;
}

// ------------------------------------------------------------------ 2

Outcome oracle_equivalence() {
  Outcome o;
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t C = 1 + rng.next() % 4, Co = 1 + rng.next() % 4;
    const Triple k{1 + rng.next() % 3, 1 + rng.next() % 4, 1 + rng.next() % 4};
    const Triple s{1 + rng.next() % 2, 1 + rng.next() % 3, 1 + rng.next() % 3};
    const Triple p{rng.next() % 2, rng.next() % 3, rng.next() % 3};
    const Shape xs{1 + rng.next() % 2, C, k[0] + rng.next() % 4, k[1] + rng.next() % 6, k[2] + rng.next() % 6};
    const auto x = rnd(xs, rng.next()), w = rnd({Co, C, k[0], k[1], k[2]}, rng.next()), b = rnd({Co}, rng.next());
    const auto y = conv3d(x, w, b, s, p);
    const auto ref = oracle::conv3d(x, w, b, s, p);
    if (y.numel() != ref.size() || std::memcmp(y.data().data(), ref.data(), ref.size() * sizeof(double)) != 0) {
      fail(o, fmt("conv3d differs in configuration %d", trial));
    }
  }
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t C = 1 + trial % 3, Co = 2 + trial % 2;
    const auto x = rnd({1 + trial % 2u, C, 2, 5 + trial % 3u, 6}, 300 + trial);
    const auto w = rnd({Co, C, 1, 3, 3}, 310 + trial), b = rnd({Co}, 320 + trial);
    TD off({x.dim(0), 18, 2, x.dim(3), 6}, 0.0);
    if (!bit_equal(deform_conv3d(x, off, w, b, {1, 1}, {1, 1}), conv3d(x, w, b, {1, 1, 1}, {0, 1, 1}))) {
      fail(o, fmt("deformable conv with zero offsets differs in trial %d", trial));
    }
  }
  if (o.pass) o.detail = "50 conv3d configurations bit-exact; zero-offset deformable conv == conv3d on 5 inputs";
  return o;
}

// ------------------------------------------------------------------ 3

// [N, C 2^i, T/2, H/4/2^i, W/4/2^i], written out independently.
Shape law(const Shape& clip, std::size_t C, std::size_t i) {
  const std::size_t f = 4 * (std::size_t{1} << i);
  return {clip[0], C * (std::size_t{1} << i), clip[2] / 2, clip[3] / f, clip[4] / f};
}

Outcome shape_law() {
  Outcome o;
  NoGradGuard<double> guard;
  {
    Rng rng(3);
    VisualEncoder<double> enc({3, 96, {0, 0, 0, 0}}, rng);
    const Shape clip{1, 3, 32, 224, 384};
    const std::array<Shape, 4> want{Shape{1, 96, 16, 56, 96}, Shape{1, 192, 16, 28, 48}, Shape{1, 384, 16, 14, 24},
                                    Shape{1, 768, 16, 7, 12}};
    const auto levels = enc(TD(clip, 0.5));
    for (std::size_t i = 0; i < 4; ++i) {
      if (levels[i].shape() != want[i] || law(clip, 96, i) != want[i]) {
        fail(o, "reference clip level " + std::to_string(i + 1) + " is " + to_string(levels[i].shape()));
      }
    }
  }
  Rng rng(4);
  VisualEncoder<double> enc({3, 4, {1, 1, 2, 1}}, rng);
  std::mt19937_64 g(5);
  for (int k = 0; k < 20; ++k) {
    const Shape clip{1, 3, 2 * (1 + g() % 4), 32 * (1 + g() % 3), 32 * (1 + g() % 4)};
    const auto levels = enc(rnd(clip, 400 + k));
    for (std::size_t i = 0; i < 4; ++i) {
      if (levels[i].shape() != law(clip, 4, i)) fail(o, "clip " + to_string(clip) + " level " + std::to_string(i + 1));
    }
  }
  if (o.pass) o.detail = "32x224x384 gives [96,16,56,96] [192,16,28,48] [384,16,14,24] [768,16,7,12]; 20 random clips";
  return o;
}

// ------------------------------------------------------------------ 4

Outcome residual_identities() {
  Outcome o;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Rng rng(seed);
    Lteb<double> lteb(6, {4, 2, 2}, rng);
    zero(lteb.modulation().out_conv().weight());
    zero(lteb.modulation().out_conv().bias());
    const auto x = rnd({2, 6, 2, 8, 8}, 10 + seed);
    if (!bit_equal(lteb(x), x)) fail(o, "LTEB with zero modulation changed its input");

    Amfb<double> amfb(6, 5, 0.0, rng);
    amfb.eval();
    amfb.force_scores(std::array<double, 3>{1, 0, 0});
    const auto f = rnd({2, 6, 2, 8, 8}, 20 + seed), a = rnd({2, 2, 5}, 30 + seed);
    const auto y = amfb(f, a);
    if (!bit_equal(y, amfb.local()(f))) fail(o, "AMFB with scores (1,0,0) differs from the local stream");

    const auto z = rnd({2, 7, 2, 5, 6}, 40 + seed);
    for (auto boundary : {ShiftBoundary::kCyclic, ShiftBoundary::kZero}) {
      for (std::size_t axis : {3u, 4u}) {
        const auto s = channel_group_shift(z, axis, {-1, 0, 1}, boundary);
        const auto back = channel_group_shift(s, axis, {1, 0, -1}, boundary);
        if (boundary == ShiftBoundary::kCyclic && !bit_equal(back, z)) fail(o, "DLTFB cyclic shift did not invert");
        if (boundary == ShiftBoundary::kZero) {
          // Only the band pushed off the edge is lost.
          const auto again = channel_group_shift(back, axis, {-1, 0, 1}, boundary);
          if (!bit_equal(again, s)) fail(o, "DLTFB zero shift is not idempotent after unshift");
        }
      }
    }
  }
  if (o.pass) o.detail = "LTEB identity, AMFB local selection and DLTFB shift/unshift bit-exact on 3 seeds";
  return o;
}

// ------------------------------------------------------------------ 5

Outcome metric_identities() {
  Outcome o;
  const double eps = 1e-7;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    std::vector<double> s(256);
    for (auto& v : s) v = rng.uniform(0.01, 1.0);
    const double total = std::accumulate(s.begin(), s.end(), 0.0);
    for (auto& v : s) v /= total;
    std::vector<double> fix(s.size(), 0.0), sep(s.size(), 0.2);
    for (std::size_t i = seed % 7; i < s.size(); i += 7) fix[i] = sep[i] = 0.9;
    const double c = metrics::cc(s, s), sm = metrics::sim(s, s), auc = metrics::auc_judd(sep, fix);
    const double flat = metrics::auc_judd(std::vector<double>(s.size(), 0.4), fix);
    const double nss = metrics::nss(s, std::vector<double>(s.size(), 1.0));
    const double kl = metrics::kl(s, s, eps), kl_t = kl_div(TD({256}, s), TD({256}, s), eps).item();
    if (std::abs(c - 1) > 1e-12) fail(o, fmt("CC(s,s) = %.17g", c));
    if (std::abs(sm - 1) > 1e-12) fail(o, fmt("SIM(s,s) = %.17g", sm));
    if (auc != 1.0) fail(o, fmt("AUC-J of a separator = %.17g", auc));
    if (flat != 0.5) fail(o, fmt("AUC-J of a constant = %.17g", flat));
    if (std::abs(nss) > 1e-12) fail(o, fmt("NSS with all fixations = %.3g", nss));
    if (kl > 2 * eps || kl_t > 2 * eps) fail(o, fmt("kl(s,s) = %.3g", std::max(kl, kl_t)));
  }
  if (o.pass) o.detail = "CC, SIM, AUC-J, NSS and KL identities hold on 10 random maps";
  return o;
}

// ------------------------------------------------------------------ 6, 7

struct Trained {
  EvalReport report;
  TrainResult result;
  std::vector<std::vector<double>> params;
  double seconds = 0;
};

RunConfig ci_config() { return load_config(std::string(AVSAL_CONFIG_DIR) + "/ci.cfg"); }

struct Splits {
  std::vector<PreparedSample<double>> train, val;
};

const Splits& ci_splits() {
  static const Splits s = [] {
    const auto cfg = ci_config();
    return Splits{prepare_samples<double>(synthetic_split(cfg.data, false), cfg.data.synth, cfg.model.mel),
                  prepare_samples<double>(synthetic_split(cfg.data, true), cfg.data.synth, cfg.model.mel)};
  }();
  return s;
}

Trained train_ci(bool audio, bool converge = false) {
  RunConfig cfg = ci_config();
  cfg.model.use_audio = audio;
  if (converge) {
    // Twice the epochs over the same number of decay steps; early stopping ends it.
    cfg.train.epochs *= 2;
    cfg.train.lr_every *= 2;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto& d = ci_splits();
  SaliencyModel<double> model(cfg.model);
  Trained t;
  t.result = train(model, d.train, d.val, cfg.train);
  t.report = evaluate(model, d.val, false, cfg.train.loss.eps);
  for (auto& [_, p] : model.named_parameters()) t.params.push_back(p.to_vector());
  t.seconds = since(t0);
  return t;
}

Outcome convergence() {
  Outcome o;
  const auto cfg = ci_config();
  const auto a = train_ci(true), b = train_ci(true);
  const auto& m = a.report.mean;
  if (cfg.data.train_samples != 200 || cfg.data.synth.frames != 16 || cfg.data.synth.height != 32 ||
      cfg.data.synth.width != 32 || cfg.train.epochs > 10) {
    fail(o, "ci.cfg does not describe the 200-sample 16x32x32 corpus within 10 epochs");
  }
  if (!(m.cc > 0.8)) fail(o, fmt("val CC %.4f <= 0.8", m.cc));
  if (!(m.auc_judd > 0.9)) fail(o, fmt("val AUC-J %.4f <= 0.9", m.auc_judd));
  if (a.seconds >= 1800) fail(o, fmt("took %.0f s", a.seconds));
  bool same = a.params == b.params && a.result.history.size() == b.result.history.size();
  for (std::size_t e = 0; same && e < a.result.history.size(); ++e) {
    same = a.result.history[e].train_loss == b.result.history[e].train_loss &&
           a.result.history[e].val.cc == b.result.history[e].val.cc;
  }
  if (!same) fail(o, "a second run with the same seed differs");
  if (o.pass) {
    o.detail = fmt("val CC %.4f, AUC-J %.4f after %zu epochs (best %zu), %.0f s; rerun bit-identical", m.cc, m.auc_judd,
                   a.result.history.size(), a.result.best_epoch, a.seconds);
  }
  return o;
}

Outcome audio_ablation() {
  Outcome o;
  const auto v = train_ci(false, true).report;
  const auto f = train_ci(true, true).report;
  const double decides = f.mean_audio_decides.cc - v.mean_audio_decides.cc;
  const double irrelevant = std::abs(f.mean_audio_irrelevant.cc - v.mean_audio_irrelevant.cc);
  if (f.n_audio_decides == 0 || f.n_audio_decides == f.per_sample.size()) fail(o, "validation split lacks a subset");
  const bool d_ok = decides > 0.1, i_ok = irrelevant < 0.05;
  if (!d_ok) fail(o, "audio-decides gap too small");
  if (!i_ok) fail(o, "audio-irrelevant gap too large");
  o.detail = fmt("audio-decides CC %.4f vs visual %.4f (gap %.4f %s 0.1); audio-irrelevant %.4f vs %.4f (|gap| %.4f %s 0.05)",
                 f.mean_audio_decides.cc, v.mean_audio_decides.cc, decides, d_ok ? ">" : "<=",
                 f.mean_audio_irrelevant.cc, v.mean_audio_irrelevant.cc, irrelevant, i_ok ? "<" : ">=");
  return o;
}

// ------------------------------------------------------------------ 8, 9

const fs::path kRoot = fs::temp_directory_path() / "avsal_acceptance";
const std::string kTiny =
    " --config " AVSAL_CONFIG_DIR "/ci.cfg --set data.train_samples=2 --set data.val_samples=2"
    " --set data.frames=4 --set model.base_channels=4 --set model.fused_channels=4 --set model.tokens=2"
    " --set model.audio_dim=8 --set model.decoder_min_channels=2 --set train.epochs=1 --set train.patience=1";

int cli(const std::string& args) {
  const std::string cmd = std::string(AVSAL_CLI) + " " + args + " > " + (kRoot / "cli.log").string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string out(const std::string& name) { return (kRoot / name).string(); }

struct Row {
  std::string variant;
  std::size_t total, component;
};

std::vector<Row> ablation_rows(const std::string& dir) {
  std::ifstream f(kRoot / dir / "ablation.json");
  const auto j = nlohmann::json::parse(f)["rows"];
  std::vector<Row> rows;
  for (const auto& r : j) rows.push_back({r["variant"], r["params_total"], r["params_component"]});
  return rows;
}

// Independent count: each stack step is a 3x3x3 conv halving channels (not
// below the floor), closed by a 1x1x1 head.
std::size_t stack_params(std::size_t c, std::size_t steps, std::size_t floor) {
  std::size_t n = 0;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t next = std::max(c / 2, std::min(floor, c));
    n += next * c * 27 + next;
    c = next;
  }
  return n + c + 1;
}

std::size_t decoder_params(const std::string& mode, std::size_t c, std::size_t floor) {
  if (mode == "one") return 4 * c * c + c + stack_params(c, 2, floor);
  if (mode == "unet") return 3 * (2 * c * c * 27 + c) + stack_params(c, 2, floor);
  std::size_t n = 4 * 9 + 1;
  for (std::size_t i = 0; i < 4; ++i) n += stack_params(c, i + 2, floor);
  return n;
}

Outcome ablation_machinery() {
  Outcome o;
  const std::map<std::string, std::size_t> counts{{"block_placement", 12}, {"fusion_method", 3}, {"decoder_mode", 3}};
  std::map<std::string, std::map<std::string, std::size_t>> comp;
  for (const auto& [axis, n] : counts) {
    if (cli("ablate" + kTiny + " --axis " + axis + " --out-dir " + out("ablate_" + axis)) != 0) {
      fail(o, "ablate --axis " + axis + " failed");
      continue;
    }
    const auto rows = ablation_rows("ablate_" + axis);
    if (rows.size() != n) fail(o, fmt("%s has %zu variants, want %zu", axis.c_str(), rows.size(), n));
    for (const auto& r : rows) {
      comp[axis][r.variant] = r.component;
      // Everything outside the ablated component is shared by all variants.
      if (r.total - r.component != rows[0].total - rows[0].component) fail(o, axis + ": shared part differs");
    }
  }
  if (!o.pass) return o;
  auto& bp = comp["block_placement"];
  std::size_t lteb7 = 0, dltfb5 = 0;
  for (const auto& [v, c] : bp) {
    lteb7 += v.rfind("LTEB", 0) == 0 || v == "none";
    dltfb5 += v.rfind("DLTFB", 0) == 0;
  }
  if (lteb7 != 7 || dltfb5 != 5) fail(o, fmt("placement columns %zu + %zu, want 7 + 5", lteb7, dltfb5));
  if (bp["none"] != 0) fail(o, "placement 'none' has block parameters");
  if (bp["LTEB:1,2,3,4"] != bp["LTEB:1"] + bp["LTEB:2"] + bp["LTEB:3"] + bp["LTEB:4"] ||
      bp["LTEB:2,3,4"] != bp["LTEB:2"] + bp["LTEB:3"] + bp["LTEB:4"] ||
      bp["DLTFB:1,2,3,4"] != bp["DLTFB:1"] + bp["DLTFB:2"] + bp["DLTFB:3"] + bp["DLTFB:4"]) {
    fail(o, "multi-stage placements do not add up per stage");
  }
  for (const auto& [v, c] : comp["fusion_method"]) {
    if (c == 0) fail(o, "fusion " + v + " has no parameters");
  }
  for (const auto& [v, c] : comp["decoder_mode"]) {
    const std::size_t want = decoder_params(v, 4, 2);
    if (c != want) fail(o, fmt("decoder %s has %zu parameters, want %zu", v.c_str(), c, want));
  }
  // Reference width, counted without building the model.
  const auto paper = load_config(std::string(AVSAL_CONFIG_DIR) + "/paper.cfg").model;
  const std::size_t C = paper.fused_channels, fl = paper.decoder_min_channels;
  const std::size_t one = decoder_params("one", C, fl), multi = decoder_params("multi", C, fl),
                    unet = decoder_params("unet", C, fl);
  Rng rng(1);
  if (Decoder<float>(DecoderMode::kMulti, C, fl, rng).parameter_count() != multi) fail(o, "multi decoder count");
  if (!(one < multi)) fail(o, "multi decoder is not larger than the single decoder");
  if (o.pass) {
    o.detail = fmt("12 placement / 3 fusion / 3 decoder variants; C*=%zu decoders one %zu < multi %zu (unet %zu)", C,
                   one, multi, unet);
  }
  return o;
}

Outcome determinism() {
  Outcome o;
  const std::string ck = " --checkpoint " + out("det_train/checkpoint.bin");
  if (cli("train" + kTiny + " --out-dir " + out("det_train")) != 0) return {false, "train failed"};
  if (cli("generate" + kTiny + " --split val --out-dir " + out("det_corpus")) != 0) return {false, "generate failed"};
  const std::string clip = out("det_corpus/val/sample_0001");
  const std::vector<std::pair<std::string, std::string>> runs{
      {"det_eval", "eval" + ck},
      {"det_eval_data", "eval" + ck + " --data " + out("det_corpus/val")},
      {"det_predict", "predict" + ck + " --clip " + clip + " --audio " + clip + "/audio.wav --format png --overlay"},
      {"det_gradcheck", "gradcheck --filter loss --seeds 2"},
      {"det_ablate", "ablate" + kTiny + " --axis fusion_method"}};
  for (const auto& [dir, args] : runs) {
    if (cli(args + " --out-dir " + out(dir)) != 0) fail(o, dir + " failed");
  }
  std::size_t replayed = 0;
  for (const char* dir : {"det_train", "det_corpus", "det_eval", "det_eval_data", "det_predict", "det_gradcheck",
                          "det_ablate"}) {
    const int rc = cli("replay --manifest " + out(std::string(dir) + "/manifest.json") + " --out-dir " +
                       out(std::string(dir) + "_replay"));
    if (rc != 0) fail(o, fmt("replay of %s exited %d", dir, rc));
    replayed += rc == 0;
  }
  if (o.pass) o.detail = fmt("%zu runs (train, generate, eval x2, predict, gradcheck, ablate) replayed bit-exactly", replayed);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},       {"oracle equivalence", oracle_equivalence},
      {"shape law", shape_law},                 {"residual identities", residual_identities},
      {"metric identities", metric_identities}, {"convergence", convergence},
      {"audio ablation", audio_ablation},       {"ablation machinery", ablation_machinery},
      {"determinism", determinism}};
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
