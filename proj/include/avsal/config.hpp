#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "avsal/model.hpp"
#include "avsal/train.hpp"

namespace avsal {

enum class Precision { kF32, kF64 };

inline Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::kF32;
  if (s == "f64") return Precision::kF64;
  throw ConfigError("run.precision", "expected f32 or f64, got '" + s + "'");
}

inline std::string to_string(Precision p) { return p == Precision::kF32 ? "f32" : "f64"; }

/// Everything a run needs. `seed` drives parameter init and sample order;
/// the corpus has its own `data.seed`.
struct RunConfig {
  ModelConfig model;
  DataConfig data;
  TrainConfig train;
  Precision precision = Precision::kF64;
  std::uint64_t seed = 0;

  /// Pushes shared fields into the sub-configs (seed, audio sample rate).
  void sync() {
    model.init_seed = seed;
    train.seed = seed + 1;
    data.synth.sample_rate = model.mel.sample_rate;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class I>
I parse_integer(const std::string& key, const std::string& v) {
  I out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key, "expected an integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key, "expected a number, got '" + v + "'");
  return out;
}

inline bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

template <class I>
std::vector<I> parse_list(const std::string& key, const std::string& v) {
  std::vector<I> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_integer<I>(key, trim(item)));
  if (out.empty()) throw ConfigError(key, "empty list");
  return out;
}

template <class I>
std::string join(const std::vector<I>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

/// Shortest text that parses back to the same double.
inline std::string real_text(double x) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

struct ConfigKey {
  std::string name;
  bool required;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define AVSAL_KEY_INT(KEY, REQ, FIELD)                                                              \
  ConfigKey{KEY, REQ,                                                                               \
            [](RunConfig& c, const std::string& v) {                                                \
              c.FIELD = parse_integer<std::remove_cvref_t<decltype(c.FIELD)>>(KEY, v);             \
            },                                                                                      \
            [](const RunConfig& c) { return std::to_string(c.FIELD); }}
#define AVSAL_KEY_REAL(KEY, REQ, FIELD)                                                            \
  ConfigKey{KEY, REQ, [](RunConfig& c, const std::string& v) { c.FIELD = parse_real(KEY, v); },   \
            [](const RunConfig& c) { return real_text(static_cast<double>(c.FIELD)); }}
#define AVSAL_KEY_FLAG(KEY, REQ, FIELD)                                                            \
  ConfigKey{KEY, REQ, [](RunConfig& c, const std::string& v) { c.FIELD = parse_flag(KEY, v); },   \
            [](const RunConfig& c) { return std::string(c.FIELD ? "true" : "false"); }}

inline const std::vector<ConfigKey>& schema() {
  static const std::vector<ConfigKey> keys = {
      AVSAL_KEY_INT("seed", false, seed),
      {"run.precision", false,
       [](RunConfig& c, const std::string& v) { c.precision = parse_precision(v); },
       [](const RunConfig& c) { return to_string(c.precision); }},

      AVSAL_KEY_INT("data.train_samples", true, data.train_samples),
      AVSAL_KEY_INT("data.val_samples", true, data.val_samples),
      AVSAL_KEY_INT("data.seed", false, data.seed),
      AVSAL_KEY_INT("data.frames", false, data.synth.frames),
      AVSAL_KEY_INT("data.height", false, data.synth.height),
      AVSAL_KEY_INT("data.width", false, data.synth.width),
      AVSAL_KEY_REAL("data.fps", false, data.synth.fps),
      AVSAL_KEY_REAL("data.audio_decides_fraction", false, data.synth.audio_decides_fraction),
      AVSAL_KEY_REAL("data.blob_sigma", false, data.synth.blob_sigma),
      AVSAL_KEY_REAL("data.noise", false, data.synth.noise),
      AVSAL_KEY_INT("data.fixations", false, data.synth.fixations),
      AVSAL_KEY_REAL("data.fixation_sigma", false, data.synth.fixation_sigma),
      AVSAL_KEY_REAL("data.density_sigma", false, data.synth.density_sigma),
      AVSAL_KEY_REAL("data.f_low", false, data.synth.f_low),
      AVSAL_KEY_REAL("data.f_high", false, data.synth.f_high),

      AVSAL_KEY_INT("audio.sample_rate", false, model.mel.sample_rate),
      AVSAL_KEY_INT("audio.n_fft", false, model.mel.n_fft),
      AVSAL_KEY_INT("audio.hop", false, model.mel.hop),
      AVSAL_KEY_INT("audio.n_mels", false, model.mel.n_mels),
      AVSAL_KEY_REAL("audio.f_min", false, model.mel.f_min),
      AVSAL_KEY_REAL("audio.f_max", false, model.mel.f_max),
      AVSAL_KEY_INT("audio.segment_width", false, model.mel.segment_width),
      AVSAL_KEY_REAL("audio.overlap_ms", false, model.mel.overlap_ms),
      AVSAL_KEY_REAL("audio.eps", false, model.mel.eps),

      AVSAL_KEY_INT("model.base_channels", false, model.encoder.base_channels),
      {"model.blocks", false,
       [](RunConfig& c, const std::string& v) {
         const auto b = parse_list<std::size_t>("model.blocks", v);
         if (b.size() != 4) throw ConfigError("model.blocks", "expected 4 counts");
         std::copy(b.begin(), b.end(), c.model.encoder.blocks.begin());
       },
       [](const RunConfig& c) {
         return join(std::vector<std::size_t>(c.model.encoder.blocks.begin(), c.model.encoder.blocks.end()));
       }},
      AVSAL_KEY_INT("model.fused_channels", false, model.fused_channels),
      AVSAL_KEY_FLAG("model.f1_adds_f3", false, model.f1_adds_f3),
      {"model.placement", false,
       [](RunConfig& c, const std::string& v) { c.model.placement = format_placement(parse_placement(v)); },
       [](const RunConfig& c) { return c.model.placement; }},
      AVSAL_KEY_INT("model.tokens", false, model.tokens.count),
      AVSAL_KEY_INT("model.token_height", false, model.tokens.height),
      AVSAL_KEY_INT("model.token_width", false, model.tokens.width),
      {"model.shift_displacements", false,
       [](RunConfig& c, const std::string& v) {
         c.model.shift.displacements = parse_list<int>("model.shift_displacements", v);
       },
       [](const RunConfig& c) { return join(c.model.shift.displacements); }},
      {"model.shift_boundary", false,
       [](RunConfig& c, const std::string& v) {
         if (v == "cyclic") c.model.shift.boundary = ShiftBoundary::kCyclic;
         else if (v == "zero") c.model.shift.boundary = ShiftBoundary::kZero;
         else throw ConfigError("model.shift_boundary", "expected cyclic or zero, got '" + v + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.model.shift.boundary == ShiftBoundary::kCyclic ? "cyclic" : "zero");
       }},
      AVSAL_KEY_FLAG("model.use_audio", false, model.use_audio),
      {"model.fusion", false,
       [](RunConfig& c, const std::string& v) { c.model.fusion = parse_fusion_mode(v); },
       [](const RunConfig& c) { return to_string(c.model.fusion); }},
      {"model.fusion_levels", false,
       [](RunConfig& c, const std::string& v) {
         c.model.fusion_levels.fill(false);
         if (v == "none") return;
         for (auto l : parse_list<std::size_t>("model.fusion_levels", v)) {
           if (l < 1 || l > 4) throw ConfigError("model.fusion_levels", "levels are 1..4");
           c.model.fusion_levels[l - 1] = true;
         }
       },
       [](const RunConfig& c) {
         std::vector<std::size_t> l;
         for (std::size_t i = 0; i < 4; ++i)
           if (c.model.fusion_levels[i]) l.push_back(i + 1);
         return l.empty() ? std::string("none") : join(l);
       }},
      AVSAL_KEY_REAL("model.max_offset", false, model.max_offset),
      {"model.audio_channels", false,
       [](RunConfig& c, const std::string& v) {
         c.model.audio_channels = parse_list<std::size_t>("model.audio_channels", v);
       },
       [](const RunConfig& c) { return join(c.model.audio_channels); }},
      AVSAL_KEY_INT("model.audio_dim", false, model.audio_dim),
      {"model.decoder", false,
       [](RunConfig& c, const std::string& v) { c.model.decoder = parse_decoder_mode(v); },
       [](const RunConfig& c) { return to_string(c.model.decoder); }},
      AVSAL_KEY_INT("model.decoder_min_channels", false, model.decoder_min_channels),

      AVSAL_KEY_REAL("train.lr", true, train.lr),
      AVSAL_KEY_REAL("train.lr_factor", false, train.lr_factor),
      AVSAL_KEY_INT("train.lr_every", false, train.lr_every),
      AVSAL_KEY_INT("train.epochs", true, train.epochs),
      AVSAL_KEY_INT("train.patience", false, train.patience),
      AVSAL_KEY_INT("train.batch_size", false, train.batch_size),
      AVSAL_KEY_REAL("train.lambda_kl", false, train.loss.lambda_kl),
      AVSAL_KEY_REAL("train.lambda_cc", false, train.loss.lambda_cc),
      AVSAL_KEY_REAL("train.eps", false, train.loss.eps),
      {"train.kl_form", false,
       [](RunConfig& c, const std::string& v) {
         if (v == "printed") c.train.loss.form = KlForm::kPrinted;
         else if (v == "textbook") c.train.loss.form = KlForm::kTextbook;
         else throw ConfigError("train.kl_form", "expected printed or textbook, got '" + v + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.train.loss.form == KlForm::kPrinted ? "printed" : "textbook");
       }},
      {"train.phase", false,
       [](RunConfig& c, const std::string& v) { c.train.phase = parse_phase(v); },
       [](const RunConfig& c) { return to_string(c.train.phase); }},
      AVSAL_KEY_FLAG("train.freeze_visual", false, train.freeze_visual),
      AVSAL_KEY_INT("train.visual_epochs", false, train.visual_epochs),
  };
  return keys;
}

#undef AVSAL_KEY_INT
#undef AVSAL_KEY_REAL
#undef AVSAL_KEY_FLAG

}  // namespace detail

/// Semantic checks across fields. Throws ConfigError naming the first bad key.
inline void validate(const RunConfig& c) {
  auto need = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(key, what);
  };
  need(c.train.lr > 0, "train.lr", "must be positive");
  need(c.train.epochs > 0, "train.epochs", "must be at least 1");
  need(c.train.patience <= c.train.epochs, "train.patience", "must not exceed train.epochs");
  need(c.train.batch_size > 0, "train.batch_size", "must be at least 1");
  need(c.train.lr_every > 0, "train.lr_every", "must be at least 1");
  need(c.train.loss.eps > 0, "train.eps", "must be positive");
  need(c.data.train_samples > 0, "data.train_samples", "must be at least 1");
  need(c.data.val_samples > 0, "data.val_samples", "must be at least 1");
  need(c.data.synth.frames >= 2 && c.data.synth.frames % 2 == 0, "data.frames", "must be even and >= 2");
  need(c.data.synth.height >= 32 && c.data.synth.height % 32 == 0, "data.height", "must be a multiple of 32");
  need(c.data.synth.width >= 32 && c.data.synth.width % 32 == 0, "data.width", "must be a multiple of 32");
  need(c.data.synth.fps > 0, "data.fps", "must be positive");
  need(c.data.synth.audio_decides_fraction >= 0 && c.data.synth.audio_decides_fraction <= 1,
       "data.audio_decides_fraction", "must be in [0, 1]");
  need(c.data.synth.fixations > 0, "data.fixations", "must be at least 1");
  need(c.data.synth.f_high < c.model.mel.sample_rate / 2.0, "data.f_high", "must be below Nyquist");
  need(c.model.encoder.base_channels >= 2 && c.model.encoder.base_channels % 2 == 0,
       "model.base_channels", "must be even and >= 2");
  need(c.model.fused_channels > 0, "model.fused_channels", "must be positive");
  need(c.model.tokens.count > 0 && c.model.tokens.height > 0 && c.model.tokens.width > 0,
       "model.tokens", "token bank dimensions must be positive");
  need(!c.model.shift.displacements.empty(), "model.shift_displacements", "empty");
  need(c.model.max_offset >= 0, "model.max_offset", "must be >= 0");
  need(!c.model.audio_channels.empty(), "model.audio_channels", "empty");
  need(c.model.audio_dim > 0, "model.audio_dim", "must be positive");
  need(c.model.decoder_min_channels > 0, "model.decoder_min_channels", "must be positive");
  need(c.model.mel.sample_rate > 0, "audio.sample_rate", "must be positive");
  need(c.model.mel.segment_width >= 2, "audio.segment_width", "must be at least 2");
  need(c.model.mel.n_mels >= 2, "audio.n_mels", "must be at least 2");
}

/// Parses `key = value` lines; `#` starts a comment. Unknown, duplicate and
/// missing required keys are ConfigErrors.
inline RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::map<std::string, const detail::ConfigKey*> index;
  for (const auto& k : detail::schema()) index[k.name] = &k;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(line, "line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigError(key, "unknown key");
    if (!seen.insert(key).second) throw ConfigError(key, "duplicate key");
    if (value.empty()) throw ConfigError(key, "missing value");
    it->second->set(c, value);
  }
  for (const auto& k : detail::schema())
    if (k.required && !seen.count(k.name)) throw ConfigError(k.name, "required field missing");
  c.sync();
  validate(c);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

/// Every key in schema order; parse_config(to_text(c)) reproduces c.
inline std::string to_text(const RunConfig& c) {
  std::string out;
  for (const auto& k : detail::schema()) out += k.name + " = " + k.get(c) + "\n";
  return out;
}

/// (key, value) pairs in schema order.
inline std::vector<std::pair<std::string, std::string>> to_pairs(const RunConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : detail::schema()) out.emplace_back(k.name, k.get(c));
  return out;
}

/// Applies one `key = value` override on top of an existing config.
inline void set_key(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& k : detail::schema()) {
    if (k.name == key) {
      k.set(c, value);
      c.sync();
      return;
    }
  }
  throw ConfigError(key, "unknown key");
}

}  // namespace avsal
