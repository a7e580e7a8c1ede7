#pragma once

#include <algorithm>
#include <charconv>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trialign/error.hpp"
#include "trialign/synth.hpp"

namespace trialign {

// One contrastive training stage. `losses` names the active terms; each
// stage accepts exactly its scheduled set (checked in validate), so a config
// that e.g. assigns the triplet term to stage 1 is rejected up front.
// Ablations instead zero the triplet weight (train.alpha = 0).
struct StageConfig {
  int steps = 0;
  int batch = 0;
  double tau0 = 0.2;
  double tau_min = 0.1;
  double tau_max = 1e4;
  std::vector<std::string> losses;
};

inline std::vector<std::string> stage_scheduled_losses(int stage_no) {
  switch (stage_no) {
    case 1: return {"pair_2d_3d"};
    case 2: return {"pair_img_2d", "pair_img_3d", "triplet"};
    case 3: return {"pair_2d_3d", "pair_img_2d", "pair_img_3d", "triplet", "task"};
  }
  throw_invalid_input("stage_scheduled_losses: stage must be 1, 2 or 3");
}

struct ModelConfig {
  int embed_dim = 64;
  std::vector<int> enc_hidden{256, 256};
  std::vector<int> dec_hidden{256, 256};
  bool use_tokens = true;
};

struct TrainSettings {
  uint64_t seed = 1;
  double lr = 1e-4;
  double alpha = 1.0;          // weight of the triplet term
  double gap_threshold = 1e-6; // eigen-gap below which a triplet's gradient is skipped
};

struct TrainConfig {
  SynthConfig data;
  ModelConfig model;
  TrainSettings train;
  StageConfig stage1, stage2, stage3;

  static TrainConfig defaults() {
    TrainConfig c;
    c.stage1 = {1500, 256, 1.0 / 14.0, 1e-2, 1e4, stage_scheduled_losses(1)};
    c.stage2 = {1000, 64, 0.2, 0.1, 1e4, stage_scheduled_losses(2)};
    c.stage3 = {1000, 64, 0.2, 0.2, 1e4, stage_scheduled_losses(3)};
    return c;
  }

  void validate() const {
    data.validate();
    if (model.embed_dim < 3) throw_invalid_input("config: model.embed_dim must be >= 3");
    for (int h : model.enc_hidden)
      if (h < 1) throw_invalid_input("config: model.enc_hidden entries must be positive");
    for (int h : model.dec_hidden)
      if (h < 1) throw_invalid_input("config: model.dec_hidden entries must be positive");
    if (!(train.lr > 0.0)) throw_invalid_input("config: train.lr must be positive");
    if (train.alpha < 0.0) throw_invalid_input("config: train.alpha must be non-negative");
    if (!(train.gap_threshold >= 0.0))
      throw_invalid_input("config: train.gap_threshold must be non-negative");
    auto check_stage = [](const StageConfig& s, int stage_no, const char* name) {
      if (s.steps < 0) throw_invalid_input(std::string("config: ") + name + ".steps must be >= 0");
      if (s.batch < 2) throw_invalid_input(std::string("config: ") + name + ".batch must be >= 2");
      if (!(s.tau_min > 0.0) || !(s.tau_max >= s.tau_min))
        throw_invalid_input(std::string("config: ") + name + " temperature bounds invalid");
      if (s.tau0 < s.tau_min || s.tau0 > s.tau_max)
        throw_invalid_input(std::string("config: ") + name + ".tau0 outside its bounds");
      const auto scheduled = stage_scheduled_losses(stage_no);
      for (const auto& term : s.losses)
        if (std::find(scheduled.begin(), scheduled.end(), term) == scheduled.end())
          throw_invalid_input(std::string("config: ") + name + ".losses includes '" + term +
                              "', which is not scheduled for this stage");
      for (const auto& term : scheduled)
        if (std::find(s.losses.begin(), s.losses.end(), term) == s.losses.end())
          throw_invalid_input(std::string("config: ") + name + ".losses is missing scheduled term '" +
                              term + "'");
      if (s.losses.size() != scheduled.size())
        throw_invalid_input(std::string("config: ") + name + ".losses contains duplicates");
    };
    check_stage(stage1, 1, "stage1");
    check_stage(stage2, 2, "stage2");
    check_stage(stage3, 3, "stage3");
  }
};

// ---- parsing ---------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view v, std::string_view key) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end)
    throw_invalid_input("config: key '" + std::string(key) + "' expects a number, got '" +
                        std::string(v) + "'");
  return out;
}

inline int64_t parse_int(std::string_view v, std::string_view key) {
  int64_t out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end)
    throw_invalid_input("config: key '" + std::string(key) + "' expects an integer, got '" +
                        std::string(v) + "'");
  return out;
}

inline uint64_t parse_u64(std::string_view v, std::string_view key) {
  uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end)
    throw_invalid_input("config: key '" + std::string(key) +
                        "' expects an unsigned integer, got '" + std::string(v) + "'");
  return out;
}

inline bool parse_bool(std::string_view v, std::string_view key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw_invalid_input("config: key '" + std::string(key) + "' expects true/false, got '" +
                      std::string(v) + "'");
}

inline std::vector<int> parse_int_list(std::string_view v, std::string_view key) {
  std::vector<int> out;
  size_t start = 0;
  while (start <= v.size()) {
    size_t comma = v.find(',', start);
    if (comma == std::string_view::npos) comma = v.size();
    const std::string_view item = trim(v.substr(start, comma - start));
    if (!item.empty()) out.push_back(static_cast<int>(parse_int(item, key)));
    if (comma == v.size()) break;
    start = comma + 1;
  }
  return out;
}

inline std::vector<std::string> parse_string_list(std::string_view v) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= v.size()) {
    size_t comma = v.find(',', start);
    if (comma == std::string_view::npos) comma = v.size();
    const std::string_view item = trim(v.substr(start, comma - start));
    if (!item.empty()) out.emplace_back(item);
    if (comma == v.size()) break;
    start = comma + 1;
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string format_int_list(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace detail

// Assigns one dotted key ("section.key") to its typed field; unknown keys
// are rejected so typos never pass silently.
inline void apply_override(TrainConfig& c, std::string_view key, std::string_view value) {
  using namespace detail;
  const std::string_view v = trim(value);
  auto as_int = [&](int lo = INT32_MIN) {
    const int64_t x = parse_int(v, key);
    if (x < lo || x > INT32_MAX) throw_invalid_input("config: key '" + std::string(key) + "' out of range");
    return static_cast<int>(x);
  };

  if (key == "data.n_samples") c.data.n_samples = as_int();
  else if (key == "data.test_fraction") c.data.test_fraction = parse_double(v, key);
  else if (key == "data.joints") c.data.joints = as_int();
  else if (key == "data.img_feat_dim") c.data.img_feat_dim = as_int();
  else if (key == "data.img_hidden") c.data.img_hidden = as_int();
  else if (key == "data.nuisance_dim") c.data.nuisance_dim = as_int();
  else if (key == "data.nuisance_amp") c.data.nuisance_amp = parse_double(v, key);
  else if (key == "data.cam_dist_min") c.data.cam_dist_min = parse_double(v, key);
  else if (key == "data.cam_dist_max") c.data.cam_dist_max = parse_double(v, key);
  else if (key == "data.cam_elev_max") c.data.cam_elev_max = parse_double(v, key);
  else if (key == "data.focal") c.data.focal = parse_double(v, key);
  else if (key == "data.seed") c.data.seed = parse_u64(v, key);
  else if (key == "model.embed_dim") c.model.embed_dim = as_int();
  else if (key == "model.enc_hidden") c.model.enc_hidden = parse_int_list(v, key);
  else if (key == "model.dec_hidden") c.model.dec_hidden = parse_int_list(v, key);
  else if (key == "model.use_tokens") c.model.use_tokens = parse_bool(v, key);
  else if (key == "train.seed") c.train.seed = parse_u64(v, key);
  else if (key == "train.lr") c.train.lr = parse_double(v, key);
  else if (key == "train.alpha") c.train.alpha = parse_double(v, key);
  else if (key == "train.gap_threshold") c.train.gap_threshold = parse_double(v, key);
  else if (key == "stage1.steps") c.stage1.steps = as_int();
  else if (key == "stage1.batch") c.stage1.batch = as_int();
  else if (key == "stage1.tau0") c.stage1.tau0 = parse_double(v, key);
  else if (key == "stage1.tau_min") c.stage1.tau_min = parse_double(v, key);
  else if (key == "stage1.tau_max") c.stage1.tau_max = parse_double(v, key);
  else if (key == "stage1.losses") c.stage1.losses = parse_string_list(v);
  else if (key == "stage2.steps") c.stage2.steps = as_int();
  else if (key == "stage2.batch") c.stage2.batch = as_int();
  else if (key == "stage2.tau0") c.stage2.tau0 = parse_double(v, key);
  else if (key == "stage2.tau_min") c.stage2.tau_min = parse_double(v, key);
  else if (key == "stage2.tau_max") c.stage2.tau_max = parse_double(v, key);
  else if (key == "stage2.losses") c.stage2.losses = parse_string_list(v);
  else if (key == "stage3.steps") c.stage3.steps = as_int();
  else if (key == "stage3.batch") c.stage3.batch = as_int();
  else if (key == "stage3.tau0") c.stage3.tau0 = parse_double(v, key);
  else if (key == "stage3.tau_min") c.stage3.tau_min = parse_double(v, key);
  else if (key == "stage3.tau_max") c.stage3.tau_max = parse_double(v, key);
  else if (key == "stage3.losses") c.stage3.losses = parse_string_list(v);
  else throw_invalid_input("config: unknown key '" + std::string(key) + "'");
}

// INI-style text: [section] headers, key = value lines, # or ; comments.
// Starts from defaults, so a config file only needs the keys it changes.
inline TrainConfig parse_config_text(std::string_view text) {
  using namespace detail;
  TrainConfig c = TrainConfig::defaults();
  std::string section;
  size_t pos = 0;
  int line_no = 0;
  while (pos <= text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = trim(text.substr(pos, eol - pos));
    ++line_no;
    pos = eol + 1;
    if (line.empty() || line.front() == '#' || line.front() == ';') {
      if (pos > text.size()) break;
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']')
        throw_invalid_input("config: malformed section header on line " + std::to_string(line_no));
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section.empty())
        throw_invalid_input("config: empty section name on line " + std::to_string(line_no));
    } else {
      const size_t eq = line.find('=');
      if (eq == std::string_view::npos)
        throw_invalid_input("config: expected 'key = value' on line " + std::to_string(line_no));
      const std::string_view key = trim(line.substr(0, eq));
      const std::string_view val = trim(line.substr(eq + 1));
      if (key.empty())
        throw_invalid_input("config: empty key on line " + std::to_string(line_no));
      if (section.empty())
        throw_invalid_input("config: key '" + std::string(key) + "' appears before any [section]");
      apply_override(c, section + "." + std::string(key), val);
    }
    if (pos > text.size()) break;
  }
  return c;
}

inline TrainConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_invalid_input("config: cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

// Canonical rendering: fixed section and key order, full-precision numbers.
// Equal configs therefore always serialize to identical bytes.
inline std::string serialize_config(const TrainConfig& c) {
  using namespace detail;
  std::string s;
  auto kv = [&](const char* k, const std::string& v) {
    s += k;
    s += " = ";
    s += v;
    s += "\n";
  };
  s += "[data]\n";
  kv("n_samples", std::to_string(c.data.n_samples));
  kv("test_fraction", format_double(c.data.test_fraction));
  kv("joints", std::to_string(c.data.joints));
  kv("img_feat_dim", std::to_string(c.data.img_feat_dim));
  kv("img_hidden", std::to_string(c.data.img_hidden));
  kv("nuisance_dim", std::to_string(c.data.nuisance_dim));
  kv("nuisance_amp", format_double(c.data.nuisance_amp));
  kv("cam_dist_min", format_double(c.data.cam_dist_min));
  kv("cam_dist_max", format_double(c.data.cam_dist_max));
  kv("cam_elev_max", format_double(c.data.cam_elev_max));
  kv("focal", format_double(c.data.focal));
  kv("seed", std::to_string(c.data.seed));
  s += "\n[model]\n";
  kv("embed_dim", std::to_string(c.model.embed_dim));
  kv("enc_hidden", format_int_list(c.model.enc_hidden));
  kv("dec_hidden", format_int_list(c.model.dec_hidden));
  kv("use_tokens", c.model.use_tokens ? "true" : "false");
  s += "\n[train]\n";
  kv("seed", std::to_string(c.train.seed));
  kv("lr", format_double(c.train.lr));
  kv("alpha", format_double(c.train.alpha));
  kv("gap_threshold", format_double(c.train.gap_threshold));
  const StageConfig* stages[3] = {&c.stage1, &c.stage2, &c.stage3};
  for (int i = 0; i < 3; ++i) {
    s += "\n[stage" + std::to_string(i + 1) + "]\n";
    kv("steps", std::to_string(stages[i]->steps));
    kv("batch", std::to_string(stages[i]->batch));
    kv("tau0", format_double(stages[i]->tau0));
    kv("tau_min", format_double(stages[i]->tau_min));
    kv("tau_max", format_double(stages[i]->tau_max));
    std::string terms;
    for (size_t t = 0; t < stages[i]->losses.size(); ++t) {
      if (t) terms += ",";
      terms += stages[i]->losses[t];
    }
    kv("losses", terms);
  }
  return s;
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t config_fingerprint(const TrainConfig& c) { return fnv1a64(serialize_config(c)); }

}  // namespace trialign
