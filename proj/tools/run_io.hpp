#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsal/avsal.hpp"

namespace avsal::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

#ifndef AVSAL_GIT_REV
#define AVSAL_GIT_REV "unknown"
#endif

inline std::string code_version() { return std::string(AVSAL_VERSION) + "+" + AVSAL_GIT_REV; }

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// $AVSAL_OUTPUT_ROOT, else ./runs.
inline fs::path output_root() {
  const char* env = std::getenv("AVSAL_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

inline fs::path prepare_out_dir(const std::string& requested, const std::string& command) {
  const fs::path dir = requested.empty() ? output_root() / command : fs::path(requested);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

inline std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Everything needed to re-run a command. `outputs` lists files whose bytes
/// are a pure function of the inputs; `logs` are informational.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_text;
  std::uint64_t seed = 0;
  std::string precision;
  std::string started, finished;
  std::vector<std::string> outputs, logs;

  json to_json() const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config_text;
    j["seed"] = seed;
    j["precision"] = precision;
    j["code_version"] = code_version();
    j["timestamps"] = {{"started", started}, {"finished", finished}};
    j["outputs"] = outputs;
    j["logs"] = logs;
    return j;
  }

  static RunManifest from_json(const json& j) {
    RunManifest m;
    try {
      m.command = j.at("command").get<std::string>();
      m.argv = j.at("argv").get<std::vector<std::string>>();
      m.config_text = j.at("config").get<std::string>();
      m.seed = j.at("seed").get<std::uint64_t>();
      m.precision = j.at("precision").get<std::string>();
      m.outputs = j.at("outputs").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
      throw IoError(std::string("malformed manifest: ") + e.what());
    }
    return m;
  }
};

inline RunManifest load_manifest(const fs::path& path) {
  try {
    return RunManifest::from_json(json::parse(read_text(path)));
  } catch (const json::parse_error& e) {
    throw IoError("'" + path.string() + "': " + e.what());
  }
}

inline json scores_json(const metrics::Scores& s) {
  return {{"cc", s.cc}, {"nss", s.nss}, {"auc_judd", s.auc_judd}, {"sim", s.sim}, {"kl", s.kl}};
}

inline std::string scores_csv(const metrics::Scores& s) {
  return real(s.cc) + "," + real(s.nss) + "," + real(s.auc_judd) + "," + real(s.sim) + "," + real(s.kl);
}

inline json history_json(const TrainResult& r) {
  json h = json::array();
  for (const auto& e : r.history) {
    h.push_back({{"epoch", e.epoch}, {"phase", e.phase}, {"lr", e.lr}, {"train_loss", e.train_loss},
                 {"val", scores_json(e.val)}});
  }
  return {{"best_epoch", r.best_epoch}, {"best_val_cc", r.best_val_cc}, {"stopped_early", r.stopped_early},
          {"epochs", h}};
}

inline std::string history_csv(const TrainResult& r) {
  std::string out = "epoch,phase,lr,train_loss,cc,nss,auc_judd,sim,kl\n";
  for (const auto& e : r.history) {
    out += std::to_string(e.epoch) + "," + e.phase + "," + real(e.lr) + "," + real(e.train_loss) + "," +
           scores_csv(e.val) + "\n";
  }
  return out;
}

inline json report_json(const EvalReport& r) {
  json per = json::array();
  for (std::size_t i = 0; i < r.per_sample.size(); ++i) {
    json s = scores_json(r.per_sample[i]);
    s["index"] = i;
    s["audio_decides"] = static_cast<bool>(r.audio_decides[i]);
    per.push_back(s);
  }
  return {{"samples", r.per_sample.size()},
          {"mean", scores_json(r.mean)},
          {"audio_decides", {{"count", r.n_audio_decides}, {"mean", scores_json(r.mean_audio_decides)}}},
          {"audio_irrelevant",
           {{"count", r.per_sample.size() - r.n_audio_decides}, {"mean", scores_json(r.mean_audio_irrelevant)}}},
          {"per_sample", per}};
}

inline std::string report_csv(const EvalReport& r) {
  std::string out = "sample,audio_decides,cc,nss,auc_judd,sim,kl\n";
  for (std::size_t i = 0; i < r.per_sample.size(); ++i) {
    out += std::to_string(i) + "," + (r.audio_decides[i] ? "1" : "0") + "," + scores_csv(r.per_sample[i]) + "\n";
  }
  out += "mean,," + scores_csv(r.mean) + "\n";
  return out;
}

// On-disk corpus: one directory per sample holding frame_NNN.ppm, audio.wav,
// fixations.pgm and meta.json.

inline void write_sample(const fs::path& dir, const SyntheticSample& s, const SyntheticConfig& cfg) {
  fs::create_directories(dir);
  const std::size_t Tn = cfg.frames, H = cfg.height, W = cfg.width;
  for (std::size_t t = 0; t < Tn; ++t) {
    Image img{W, H, 3, std::vector<std::uint8_t>(H * W * 3)};
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t c = 0; c < 3; ++c)
          img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(255.0 * s.video[((c * Tn + t) * H + y) * W + x]));
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.ppm", t);
    write_pnm((dir / name).string(), img);
  }
  write_wav((dir / "audio.wav").string(), s.audio);
  Image fix{W, H, 1, std::vector<std::uint8_t>(H * W)};
  for (std::size_t i = 0; i < H * W; ++i) fix.pixels[i] = s.fixations[i] > 0 ? 255 : 0;
  write_pnm((dir / "fixations.pgm").string(), fix);
  json meta = {{"audio_decides", s.audio_decides},
               {"target", {s.target[0], s.target[1]}},
               {"av_correlation", s.av_correlation}};
  write_text(dir / "meta.json", meta.dump(2) + "\n");
}

/// Image files of a directory in name order.
inline std::vector<fs::path> frame_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm" || ext == ".png") && e.path().stem() != "fixations") {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no frames (.ppm/.pgm/.png) in '" + dir.string() + "'");
  return files;
}

struct LoadedClip {
  std::vector<double> video;  // [3, T, H, W] in [0, 1]
  std::size_t frames = 0, height = 0, width = 0;
  Image last_frame;
};

inline LoadedClip read_clip(const fs::path& dir) {
  LoadedClip c;
  const auto files = frame_files(dir);
  std::vector<Image> imgs;
  for (const auto& f : files) imgs.push_back(read_image(f.string()));
  c.frames = imgs.size();
  c.height = imgs[0].height;
  c.width = imgs[0].width;
  for (std::size_t k = 0; k < imgs.size(); ++k) {
    if (imgs[k].height != c.height || imgs[k].width != c.width) {
      throw IoError("'" + files[k].string() + "': frame size differs from the first frame");
    }
  }
  if (c.frames % 2 != 0 || c.height % 32 != 0 || c.width % 32 != 0) {
    throw IoError("clip '" + dir.string() + "' is " + std::to_string(c.frames) + "x" + std::to_string(c.height) +
                  "x" + std::to_string(c.width) + "; need an even frame count and H, W divisible by 32");
  }
  const std::size_t Tn = c.frames, H = c.height, W = c.width;
  c.video.resize(3 * Tn * H * W);
  for (std::size_t t = 0; t < Tn; ++t)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        for (std::size_t ch = 0; ch < 3; ++ch)
          c.video[((ch * Tn + t) * H + y) * W + x] =
              imgs[t].at(y, x, imgs[t].channels == 3 ? ch : 0) / 255.0;
  c.last_frame = imgs.back();
  return c;
}

inline AudioClip read_audio_for(const fs::path& path, int sample_rate) {
  auto clip = read_wav(path.string());
  return clip.sample_rate == sample_rate ? clip : resample_linear(clip, sample_rate);
}

template <class T>
PreparedSample<T> read_sample(const fs::path& dir, const RunConfig& cfg) {
  const auto clip = read_clip(dir);
  PreparedSample<T> p;
  p.clip = Tensor<T>({1, 3, clip.frames, clip.height, clip.width},
                     std::vector<T>(clip.video.begin(), clip.video.end()));
  p.audio = stft_logmel<T>(read_audio_for(dir / "audio.wav", cfg.model.mel.sample_rate), cfg.model.mel).segments;
  const auto fix = read_pnm((dir / "fixations.pgm").string());
  if (fix.width != clip.width || fix.height != clip.height || fix.channels != 1) {
    throw IoError("'" + (dir / "fixations.pgm").string() + "': size does not match the frames");
  }
  p.fixations.resize(fix.pixels.size());
  for (std::size_t i = 0; i < fix.pixels.size(); ++i) p.fixations[i] = fix.pixels[i] > 0 ? 1.0 : 0.0;
  p.density = metrics::density_from_fixations(p.fixations, clip.height, clip.width, cfg.data.synth.density_sigma);
  p.gt = Tensor<T>({1, 1, 1, clip.height, clip.width}, std::vector<T>(p.density.begin(), p.density.end()));
  if (fs::exists(dir / "meta.json")) {
    try {
      p.audio_decides = json::parse(read_text(dir / "meta.json")).value("audio_decides", false);
    } catch (const json::exception& e) {
      throw IoError("'" + (dir / "meta.json").string() + "': " + e.what());
    }
  }
  return p;
}

template <class T>
std::vector<PreparedSample<T>> read_corpus(const fs::path& dir, const RunConfig& cfg) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<fs::path> samples;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) samples.push_back(e.path());
  std::sort(samples.begin(), samples.end());
  if (samples.empty()) throw IoError("no sample directories in '" + dir.string() + "'");
  std::vector<PreparedSample<T>> out;
  for (const auto& s : samples) out.push_back(read_sample<T>(s, cfg));
  return out;
}

}  // namespace avsal::cli
