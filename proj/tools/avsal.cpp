// avsal: train, evaluate, predict, gradcheck, ablate, replay, generate.

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "run_io.hpp"

namespace avsal::cli {

struct Options {
  std::string config, checkpoint, out_dir, precision, data, split = "val", predictor = "model";
  std::string clip, audio, format = "pgm", axis, variants, filter, manifest;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  bool no_audio = false, overlay = false;
  std::size_t seeds = 5;
  std::vector<std::string> argv;
};

/// Output files of one command, relative to the output directory.
struct Outputs {
  fs::path dir;
  std::vector<std::string> files, logs;
  void add(const std::string& name) { files.push_back(name); }
};

inline RunConfig resolve_config(const Options& o, const std::optional<Checkpoint>& ck = std::nullopt) {
  RunConfig cfg;
  if (!o.config.empty()) cfg = load_config(o.config);
  else if (ck) cfg = parse_config(ck->manifest);
  else throw ConfigError("--config", "a config file is required");
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set", "expected key=value, got '" + s + "'");
    set_key(cfg, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
  }
  if (o.seed) set_key(cfg, "seed", std::to_string(*o.seed));
  if (!o.precision.empty()) set_key(cfg, "run.precision", o.precision);
  validate(cfg);
  return cfg;
}

inline void finish(const Options& o, const std::string& command, const RunConfig* cfg, const Outputs& out,
                   const std::string& started) {
  RunManifest m;
  m.command = command;
  m.argv = o.argv;
  if (cfg) {
    m.config_text = to_text(*cfg);
    m.seed = cfg->seed;
    m.precision = to_string(cfg->precision);
  } else {
    m.seed = o.seed.value_or(1);
    m.precision = "f64";
  }
  m.started = started;
  m.finished = utc_now();
  m.outputs = out.files;
  m.logs = out.logs;
  write_text(out.dir / "manifest.json", m.to_json().dump(2) + "\n");
  std::cout << "wrote " << (out.dir / "manifest.json").string() << "\n";
}

template <class T>
std::unique_ptr<SaliencyModel<T>> model_from(const RunConfig& cfg, const std::optional<Checkpoint>& ck) {
  auto model = std::make_unique<SaliencyModel<T>>(cfg.model);
  if (ck) load_parameters(*model, *ck);
  return model;
}

template <class T>
std::vector<PreparedSample<T>> dataset(const Options& o, const RunConfig& cfg) {
  if (!o.data.empty()) return read_corpus<T>(o.data, cfg);
  if (o.split != "val" && o.split != "train") throw ConfigError("--split", "expected train or val");
  return prepare_samples<T>(synthetic_split(cfg.data, o.split == "val"), cfg.data.synth, cfg.model.mel);
}

// ---------------------------------------------------------------- train

template <class T>
int train_cmd(const Options& o, RunConfig cfg, Outputs& out) {
  if (o.no_audio) set_key(cfg, "train.phase", "visual");
  if (cfg.train.phase == Phase::kVisual) set_key(cfg, "model.use_audio", "false");
  validate(cfg);
  const auto tr = prepare_samples<T>(synthetic_split(cfg.data, false), cfg.data.synth, cfg.model.mel);
  const auto va = prepare_samples<T>(synthetic_split(cfg.data, true), cfg.data.synth, cfg.model.mel);
  SaliencyModel<T> model(cfg.model);
  std::cout << "parameters " << model.parameter_count() << ", train " << tr.size() << ", val " << va.size()
            << ", precision " << to_string(cfg.precision) << "\n";
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = train(model, tr, va, cfg.train, [&](const EpochRecord& e) {
    std::printf("epoch %2zu [%s] lr %.3g loss %.5f val cc %.4f nss %.3f auc_j %.4f sim %.4f (%.0fs)\n", e.epoch,
                e.phase.c_str(), e.lr, e.train_loss, e.val.cc, e.val.nss, e.val.auc_judd, e.val.sim,
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    std::fflush(stdout);
  });
  save_checkpoint((out.dir / "checkpoint.bin").string(), model, to_text(cfg));
  write_text(out.dir / "config.cfg", to_text(cfg));
  write_text(out.dir / "history.json", history_json(res).dump(2) + "\n");
  write_text(out.dir / "history.csv", history_csv(res));
  const auto rep = evaluate(model, va, false, cfg.train.loss.eps);
  write_text(out.dir / "val_metrics.json", report_json(rep).dump(2) + "\n");
  for (const char* f : {"checkpoint.bin", "config.cfg", "history.json", "history.csv", "val_metrics.json"}) out.add(f);
  std::printf("best epoch %zu, val cc %.4f (audio-decides %.4f, audio-irrelevant %.4f)\n", res.best_epoch,
              rep.mean.cc, rep.mean_audio_decides.cc, rep.mean_audio_irrelevant.cc);
  return 0;
}

// ---------------------------------------------------------------- eval

template <class T>
std::vector<double> predictor_map(const Options& o, SaliencyModel<T>* model, const PreparedSample<T>& s) {
  if (o.predictor == "model") return predict_map(*model, s, o.no_audio);
  if (o.predictor == "oracle") return s.density;
  if (o.predictor == "fixations") return s.fixations;
  if (o.predictor == "constant") return std::vector<double>(s.density.size(), 0.5);
  throw ConfigError("--predictor", "expected model, oracle, fixations or constant");
}

template <class T>
int eval_cmd(const Options& o, const RunConfig& cfg, const std::optional<Checkpoint>& ck, Outputs& out) {
  std::unique_ptr<SaliencyModel<T>> model;
  if (o.predictor == "model") {
    if (!ck) throw ConfigError("--checkpoint", "required with --predictor model");
    model = model_from<T>(cfg, ck);
    model->eval();
  }
  const auto set = dataset<T>(o, cfg);
  EvalReport r;
  for (const auto& s : set) {
    r.per_sample.push_back(metrics::evaluate(predictor_map(o, model.get(), s), s.density, s.fixations,
                                             cfg.train.loss.eps));
    r.audio_decides.push_back(s.audio_decides);
    r.n_audio_decides += s.audio_decides ? 1 : 0;
  }
  r.mean = average(r.per_sample, r.audio_decides, false, true);
  r.mean_audio_decides = average(r.per_sample, r.audio_decides, true, false);
  r.mean_audio_irrelevant = average(r.per_sample, r.audio_decides, false, false);
  write_text(out.dir / "metrics.json", report_json(r).dump(2) + "\n");
  write_text(out.dir / "metrics.csv", report_csv(r));
  out.add("metrics.json");
  out.add("metrics.csv");
  std::printf("%zu samples: cc %.4f nss %.4f auc_j %.4f sim %.4f kl %.4f\n", set.size(), r.mean.cc, r.mean.nss,
              r.mean.auc_judd, r.mean.sim, r.mean.kl);
  if (r.n_audio_decides > 0 && r.n_audio_decides < set.size()) {
    std::printf("audio-decides cc %.4f, audio-irrelevant cc %.4f\n", r.mean_audio_decides.cc,
                r.mean_audio_irrelevant.cc);
  }
  return 0;
}

// ---------------------------------------------------------------- predict

template <class T>
int predict_cmd(const Options& o, const RunConfig& cfg, const std::optional<Checkpoint>& ck, Outputs& out) {
  if (o.format != "pgm" && o.format != "png") throw ConfigError("--format", "expected pgm or png");
  auto model = model_from<T>(cfg, ck);
  model->eval();
  const auto clip = read_clip(o.clip);
  const Tensor<T> x({1, 3, clip.frames, clip.height, clip.width}, std::vector<T>(clip.video.begin(), clip.video.end()));
  std::vector<Tensor<T>> audio;
  const bool mute = o.no_audio;
  if (cfg.model.use_audio && !mute) {
    if (o.audio.empty()) throw ConfigError("--audio", "the model has an audio branch; pass --audio or --no-audio");
    audio.push_back(stft_logmel<T>(read_audio_for(o.audio, cfg.model.mel.sample_rate), cfg.model.mel).segments);
  }
  std::vector<double> s;
  {
    NoGradGuard<T> guard;
    const auto sal = model->forward(x, audio, mute).saliency;
    s.assign(sal.data().begin(), sal.data().end());
  }
  const std::string name = "saliency." + o.format;
  write_image((out.dir / name).string(), saliency_to_gray(s, clip.height, clip.width));
  std::string csv;
  for (std::size_t y = 0; y < clip.height; ++y) {
    for (std::size_t xx = 0; xx < clip.width; ++xx) csv += (xx ? "," : "") + real(s[y * clip.width + xx]);
    csv += "\n";
  }
  write_text(out.dir / "saliency.csv", csv);
  out.add(name);
  out.add("saliency.csv");
  if (o.overlay) {
    write_png((out.dir / "overlay.png").string(), overlay(clip.last_frame, s));
    out.add("overlay.png");
  }
  std::printf("%zux%zu map from %zu frames -> %s\n", clip.width, clip.height, clip.frames,
              (out.dir / name).string().c_str());
  return 0;
}

// ---------------------------------------------------------------- gradcheck

inline int gradcheck_cmd(const Options& o, Outputs& out) {
  const std::uint64_t first = o.seed.value_or(1);
  bool ok = true;
  std::size_t n = 0;
  json cases = json::array();
  run_gradcheck_suite(o.filter, first, o.seeds, [&](const GradCaseReport& r) {
    std::printf("%-24s max rel error %.3e over %zu entries, %zu seeds  %s  (%.2fs)\n", r.name.c_str(),
                r.max_rel_error, r.entries, r.seeds, r.passed ? "PASS" : "FAIL", r.seconds);
    if (!r.passed) std::printf("  worst: %s\n", r.worst.c_str());
    std::fflush(stdout);
    ok = ok && r.passed;
    ++n;
    cases.push_back({{"name", r.name}, {"seeds", r.seeds}, {"entries", r.entries},
                     {"max_rel_error", r.max_rel_error}, {"worst", r.worst}, {"passed", r.passed}});
  });
  if (n == 0) throw ConfigError("--filter", "no check matches '" + o.filter + "'");
  json j = {{"first_seed", first}, {"seeds", o.seeds}, {"tolerance", GradCheckOptions{}.tolerance},
            {"passed", ok}, {"cases", cases}};
  write_text(out.dir / "gradcheck.json", j.dump(2) + "\n");
  out.add("gradcheck.json");
  std::printf("%s: %zu checks\n", ok ? "all passed" : "FAILED", n);
  return ok ? 0 : static_cast<int>(ExitCode::kNumeric);
}

// ---------------------------------------------------------------- ablate

struct AblationAxis {
  std::string key;
  std::vector<std::string> variants;
};

inline AblationAxis ablation_axis(const std::string& axis) {
  if (axis == "fusion_method") return {"model.fusion", {"concat", "cross_attention", "amfb"}};
  if (axis == "decoder_mode") return {"model.decoder", {"one", "unet", "multi"}};
  if (axis == "block_placement") {
    return {"model.placement",
            {"none", "LTEB:1", "LTEB:2", "LTEB:3", "LTEB:4", "LTEB:2,3,4", "LTEB:1,2,3,4", "DLTFB:1", "DLTFB:2",
             "DLTFB:3", "DLTFB:4", "DLTFB:1,2,3,4"}};
  }
  throw ConfigError("--axis", "expected block_placement, fusion_method or decoder_mode, got '" + axis + "'");
}

template <class T>
std::size_t component_parameters(SaliencyModel<T>& m, const std::string& axis) {
  const std::string prefix = axis == "fusion_method" ? "fusion." : axis == "decoder_mode" ? "decoder." : "blocks.";
  std::size_t n = 0;
  for (auto& [name, t] : m.named_parameters())
    if (name.rfind(prefix, 0) == 0) n += t.numel();
  return n;
}

template <class T>
int ablate_cmd(const Options& o, const RunConfig& base, Outputs& out) {
  auto axis = ablation_axis(o.axis);
  if (!o.variants.empty()) {
    axis.variants.clear();
    std::stringstream ss(o.variants);
    std::string v;
    while (std::getline(ss, v, '|')) axis.variants.push_back(detail::trim(v));
  }
  const auto tr = prepare_samples<T>(synthetic_split(base.data, false), base.data.synth, base.model.mel);
  const auto va = prepare_samples<T>(synthetic_split(base.data, true), base.data.synth, base.model.mel);
  struct Row {
    std::string variant;
    std::size_t total, component, best_epoch;
    metrics::Scores val;
  };
  std::vector<Row> rows;
  for (const auto& v : axis.variants) {
    RunConfig cfg = base;
    set_key(cfg, axis.key, v);
    validate(cfg);
    SaliencyModel<T> model(cfg.model);
    Row row{v, model.parameter_count(), component_parameters(model, o.axis), 0, {}};
    std::printf("%s = %s: %zu parameters (%zu in the ablated component)\n", axis.key.c_str(), v.c_str(), row.total,
                row.component);
    std::fflush(stdout);
    const auto res = train(model, tr, va, cfg.train);
    row.best_epoch = res.best_epoch;
    row.val = evaluate(model, va, false, cfg.train.loss.eps).mean;
    std::printf("  val cc %.4f nss %.3f auc_j %.4f sim %.4f\n", row.val.cc, row.val.nss, row.val.auc_judd,
                row.val.sim);
    rows.push_back(row);
  }
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rows[a].val.cc > rows[b].val.cc; });
  std::string csv = "rank,variant,params_total,params_component,cc,nss,auc_judd,sim,kl,best_epoch\n";
  json j = json::array();
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& r = rows[order[k]];
    csv += std::to_string(k + 1) + ",\"" + r.variant + "\"," + std::to_string(r.total) + "," +
           std::to_string(r.component) + "," + scores_csv(r.val) + "," + std::to_string(r.best_epoch) + "\n";
    j.push_back({{"rank", k + 1}, {"variant", r.variant}, {"params_total", r.total},
                 {"params_component", r.component}, {"val", scores_json(r.val)}, {"best_epoch", r.best_epoch}});
  }
  write_text(out.dir / "ablation.csv", csv);
  write_text(out.dir / "ablation.json", json{{"axis", o.axis}, {"key", axis.key}, {"rows", j}}.dump(2) + "\n");
  out.add("ablation.csv");
  out.add("ablation.json");
  std::cout << csv;
  return 0;
}

// ---------------------------------------------------------------- generate

inline int generate_cmd(const Options& o, const RunConfig& cfg, Outputs& out) {
  std::vector<std::string> splits;
  if (o.split == "both") splits = {"train", "val"};
  else if (o.split == "train" || o.split == "val") splits = {o.split};
  else throw ConfigError("--split", "expected train, val or both");
  for (const auto& sp : splits) {
    const auto samples = synthetic_split(cfg.data, sp == "val");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "sample_%04zu", i);
      write_sample(out.dir / sp / name, samples[i], cfg.data.synth);
    }
    std::printf("%s: %zu samples in %s\n", sp.c_str(), samples.size(), (out.dir / sp).string().c_str());
  }
  return 0;
}

// ---------------------------------------------------------------- dispatch

int run(std::vector<std::string> args);

inline bool same_bytes(const fs::path& a, const fs::path& b) {
  if (!fs::exists(a) || !fs::exists(b)) return false;
  return read_text(a) == read_text(b);
}

inline int replay_cmd(const Options& o) {
  const fs::path manifest_path = o.manifest;
  const auto m = load_manifest(manifest_path);
  const fs::path orig = manifest_path.parent_path();
  const fs::path dir = o.out_dir.empty() ? orig / "replay" : fs::path(o.out_dir);
  fs::create_directories(dir);
  std::vector<std::string> args = m.argv;
  if (args.empty() || args[0] == "replay") throw IoError("manifest does not describe a replayable command");
  auto set_opt = [&](const std::string& flag, const std::string& value) {
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
      if (args[i] == flag) {
        args[i + 1] = value;
        return;
      }
    }
    args.push_back(flag);
    args.push_back(value);
  };
  if (!m.config_text.empty()) {
    write_text(dir / "replayed_config.cfg", m.config_text);
    set_opt("--config", (dir / "replayed_config.cfg").string());
  }
  set_opt("--out-dir", dir.string());
  std::cout << "replaying '" << m.command << "' into " << dir.string() << "\n";
  const int code = run(args);
  if (code != 0) return code;
  bool ok = true;
  for (const auto& f : m.outputs) {
    const bool same = same_bytes(orig / f, dir / f);
    std::printf("  %-20s %s\n", f.c_str(), same ? "identical" : "DIFFERS");
    ok = ok && same;
  }
  std::printf("%s\n", ok ? "replay reproduced all outputs bit-exactly" : "replay MISMATCH");
  return ok ? 0 : static_cast<int>(ExitCode::kNumeric);
}

template <class F>
int with_precision(const RunConfig& cfg, F&& f) {
  return cfg.precision == Precision::kF32 ? f(float{}) : f(double{});
}

inline int run(std::vector<std::string> args) {
  CLI::App app{"Audio-visual saliency: training, evaluation and diagnostics", "avsal"};
  app.require_subcommand(1);
  app.set_version_flag("--version", code_version());
  Options o;
  o.argv = args;

  auto common = [&](CLI::App* s, bool config_required) {
    s->add_option("--config", o.config, "run config (key = value lines)");
    if (config_required) s->get_option("--config")->required();
    s->add_option("--out-dir", o.out_dir, "output directory (default $AVSAL_OUTPUT_ROOT/<command>)");
    s->add_option("--seed", o.seed, "overrides the config seed");
    s->add_option("--precision", o.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    s->add_option("--set", o.sets, "key=value config override (repeatable)");
  };
  auto* train = app.add_subcommand("train", "train a model on the synthetic corpus");
  common(train, true);
  train->add_flag("--no-audio", o.no_audio, "train the visual-only model");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  common(eval, false);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file");
  eval->add_option("--data", o.data, "corpus directory written by 'generate' (default: synthetic split)");
  eval->add_option("--split", o.split, "synthetic split: train or val");
  eval->add_option("--predictor", o.predictor, "model, oracle, fixations or constant");
  eval->add_flag("--no-audio", o.no_audio, "replace audio features by zeros");

  auto* predict = app.add_subcommand("predict", "saliency map for a clip");
  common(predict, false);
  predict->add_option("--checkpoint", o.checkpoint, "checkpoint file (omit for an untrained model)")
      ;
  predict->add_option("--clip", o.clip, "directory of frames (.ppm/.pgm/.png, name order)")->required();
  predict->add_option("--audio", o.audio, "16-bit PCM mono WAV");
  predict->add_option("--format", o.format, "pgm or png");
  predict->add_flag("--overlay", o.overlay, "also write overlay.png over the last frame");
  predict->add_flag("--no-audio", o.no_audio, "replace audio features by zeros");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every backward rule");
  gradcheck->add_option("--filter", o.filter, "only checks whose name contains this");
  gradcheck->add_option("--seed", o.seed, "first seed (default 1)");
  gradcheck->add_option("--seeds", o.seeds, "seeds per check")->check(CLI::PositiveNumber);
  gradcheck->add_option("--out-dir", o.out_dir, "output directory");

  auto* ablate = app.add_subcommand("ablate", "train and rank the variants of one ablation axis");
  common(ablate, true);
  ablate->add_option("--axis", o.axis, "block_placement, fusion_method or decoder_mode")->required();
  ablate->add_option("--variants", o.variants, "'|'-separated values replacing the default variants");

  auto* replay = app.add_subcommand("replay", "re-run a command from its manifest and compare outputs");
  replay->add_option("--manifest", o.manifest, "manifest.json of an earlier run")->required();
  replay->add_option("--out-dir", o.out_dir, "output directory (default <run>/replay)");

  auto* generate = app.add_subcommand("generate", "write the synthetic corpus to disk");
  common(generate, true);
  generate->add_option("--split", o.split, "train, val or both");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kConfig);
  }

  try {
    const std::string started = utc_now();
    if (replay->parsed()) return replay_cmd(o);
    const std::string command = app.get_subcommands()[0]->get_name();
    Outputs out;
    out.dir = prepare_out_dir(o.out_dir, command);
    if (gradcheck->parsed()) {
      const int code = gradcheck_cmd(o, out);
      finish(o, command, nullptr, out, started);
      return code;
    }
    std::optional<Checkpoint> ck;
    if (!o.checkpoint.empty()) ck = read_checkpoint(o.checkpoint);
    const RunConfig cfg = resolve_config(o, ck);
    int code = 0;
    if (train->parsed()) {
      code = with_precision(cfg, [&](auto t) { return train_cmd<decltype(t)>(o, cfg, out); });
    } else if (eval->parsed()) {
      code = with_precision(cfg, [&](auto t) { return eval_cmd<decltype(t)>(o, cfg, ck, out); });
    } else if (predict->parsed()) {
      code = with_precision(cfg, [&](auto t) { return predict_cmd<decltype(t)>(o, cfg, ck, out); });
    } else if (ablate->parsed()) {
      code = with_precision(cfg, [&](auto t) { return ablate_cmd<decltype(t)>(o, cfg, out); });
    } else if (generate->parsed()) {
      code = generate_cmd(o, cfg, out);
    }
    finish(o, command, &cfg, out, started);
    return code;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kFailure);
  }
}

}  // namespace avsal::cli

int main(int argc, char** argv) { return avsal::cli::run(std::vector<std::string>(argv + 1, argv + argc)); }
