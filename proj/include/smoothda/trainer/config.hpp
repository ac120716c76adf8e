/*
 * Copyright 2026 The smoothda Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Experiment configuration: typed fields, JSON round trip, validation and
// `key.path=value` overrides.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "smoothda/error.hpp"
#include "smoothda/momentum.hpp"
#include "smoothda/nets.hpp"
#include "smoothda/objectives.hpp"
#include "smoothda/synthdata.hpp"

namespace smoothda::train {

using Json = nlohmann::ordered_json;

struct OptimConfig {
  double lr_fc = 6e-5;      // AdamW on F and C
  double weight_decay = 0.01;
  double lr_ds = 1e-4;      // Adam on D and S
  std::int64_t fc_warmup_steps = 50;
  double poly_power = 0.9;
};

struct LossConfig {
  double lambda_adv = 0.01;
  double lambda_target = 1.0;
  bool saturating_generator = false;
};

struct ScheduleConfig {
  std::int64_t warmup_iters = 1000;
  std::int64_t iters_per_round = 2000;
  std::int64_t rounds = 3;

  std::int64_t total() const { return warmup_iters + rounds * iters_per_round; }
};

struct DataConfig {
  data::DomainSpec spec;
  std::size_t n_source = 256;
  std::size_t n_target = 256;
  std::size_t n_test = 64;
  data::AugmentConfig augment;
};

struct DiagConfig {
  std::size_t probe_size = 8;
  std::int64_t track_stride = 1;  // 0 disables tracking
  bool track_discriminator = true;
  bool track_student = false;
  std::size_t tail = 500;  // iterations averaged for summary change values
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t batch_size = 4;  // per domain
  std::string output_dir;
  nets::ExtractorConfig extractor;
  std::size_t head_hidden = 64;
  nets::DiscriminatorMode discriminator = nets::DiscriminatorMode::binary;
  bool dynamic_weights = false;
  SmoothingConfig smoothing;
  OptimConfig optim;
  LossConfig loss;
  ScheduleConfig schedule;
  DataConfig data;
  DiagConfig diagnostics;

  std::size_t num_classes() const { return data.spec.num_common; }
  bool has_discriminator() const { return discriminator != nets::DiscriminatorMode::none; }
  bool has_similarity() const { return dynamic_weights; }

  obj::AdvVariant adv_variant() const {
    switch (discriminator) {
      case nets::DiscriminatorMode::none: return obj::AdvVariant::none;
      case nets::DiscriminatorMode::binary: return dynamic_weights ? obj::AdvVariant::wbin : obj::AdvVariant::bin;
      case nets::DiscriminatorMode::class_level:
        return dynamic_weights ? obj::AdvVariant::wcls : obj::AdvVariant::cls;
    }
    return obj::AdvVariant::none;
  }

  /// Throws ConfigError naming the offending field.
  void validate() const {
    if (schedule.rounds < 1) throw ConfigError("schedule.rounds must be at least 1");
    if (schedule.warmup_iters < 0 || schedule.iters_per_round < 1)
      throw ConfigError("schedule: warmup_iters must be >= 0 and iters_per_round >= 1");
    if (discriminator == nets::DiscriminatorMode::none && dynamic_weights)
      throw ConfigError("dynamic_weights requires a discriminator: with discriminator=none there is no adversarial "
                        "loss to weight");
    if (discriminator == nets::DiscriminatorMode::none && smoothing.mo_fa)
      throw ConfigError("smoothing.mo_fa requires a discriminator: with discriminator=none no network consumes "
                        "momentum target features");
    smoothing.validate();
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(optim.lr_fc > 0) || !(optim.lr_ds > 0)) throw ConfigError("optim: learning rates must be positive");
    if (optim.weight_decay < 0) throw ConfigError("optim.weight_decay must be >= 0");
    if (optim.fc_warmup_steps < 0) throw ConfigError("optim.fc_warmup_steps must be >= 0");
    if (loss.lambda_adv < 0 || loss.lambda_target < 0) throw ConfigError("loss weights must be >= 0");
    data.spec.validate();
    if (data.n_source < batch_size || data.n_target < batch_size)
      throw ConfigError("data: n_source and n_target must be at least batch_size");
    if (data.n_test == 0) throw ConfigError("data.n_test must be positive");
    if (data.augment.scale_min <= 0 || data.augment.scale_min > data.augment.scale_max)
      throw ConfigError("data.augment: need 0 < scale_min <= scale_max");
    if (diagnostics.probe_size == 0) throw ConfigError("diagnostics.probe_size must be positive");
    if (diagnostics.track_stride < 0) throw ConfigError("diagnostics.track_stride must be >= 0");
    if (extractor.image_h != data.spec.image_h || extractor.image_w != data.spec.image_w)
      throw ConfigError("extractor image size must match data image size");
    extractor.validate();
    if (head_hidden == 0) throw ConfigError("model.head_hidden must be positive");
  }
};

// --- JSON -------------------------------------------------------------------------

inline Json to_json(const ExperimentConfig& c) {
  const auto& s = c.data.spec;
  const auto& a = c.data.augment;
  return Json{
      {"seed", c.seed},
      {"batch_size", c.batch_size},
      {"output_dir", c.output_dir},
      {"model",
       {{"kind", std::string(nets::to_string(c.extractor.kind))},
        {"patch_size", c.extractor.patch_size},
        {"window_size", c.extractor.window_size},
        {"embed_dim", c.extractor.embed_dim},
        {"depth", c.extractor.depth},
        {"heads", c.extractor.heads},
        {"mlp_ratio", c.extractor.mlp_ratio},
        {"head_hidden", c.head_hidden}}},
      {"discriminator", std::string(nets::to_string(c.discriminator))},
      {"dynamic_weights", c.dynamic_weights},
      {"smoothing", {{"mo_pl", c.smoothing.mo_pl}, {"mo_fa", c.smoothing.mo_fa}, {"m", c.smoothing.m}}},
      {"optim",
       {{"lr_fc", c.optim.lr_fc},
        {"weight_decay", c.optim.weight_decay},
        {"lr_ds", c.optim.lr_ds},
        {"fc_warmup_steps", c.optim.fc_warmup_steps},
        {"poly_power", c.optim.poly_power}}},
      {"loss",
       {{"lambda_adv", c.loss.lambda_adv},
        {"lambda_target", c.loss.lambda_target},
        {"saturating_generator", c.loss.saturating_generator}}},
      {"schedule",
       {{"warmup_iters", c.schedule.warmup_iters},
        {"iters_per_round", c.schedule.iters_per_round},
        {"rounds", c.schedule.rounds}}},
      {"data",
       {{"num_common", s.num_common},
        {"source_private", s.include_source_private},
        {"target_private", s.include_target_private},
        {"image_h", s.image_h},
        {"image_w", s.image_w},
        {"min_objects", s.min_objects},
        {"max_objects", s.max_objects},
        {"n_source", c.data.n_source},
        {"n_target", c.data.n_target},
        {"n_test", c.data.n_test},
        {"shift",
         {{"noise_sigma", s.shift.noise_sigma},
          {"hue_shift", s.shift.hue_shift},
          {"brightness_shift", s.shift.brightness_shift},
          {"blur_radius", s.shift.blur_radius},
          {"illumination", s.shift.illumination}}},
        {"augment",
         {{"enabled", a.enabled},
          {"flip_prob", a.flip_prob},
          {"scale_min", a.scale_min},
          {"scale_max", a.scale_max},
          {"brightness", a.brightness},
          {"contrast", a.contrast},
          {"saturation", a.saturation},
          {"hue", a.hue}}}}},
      {"diagnostics",
       {{"probe_size", c.diagnostics.probe_size},
        {"track_stride", c.diagnostics.track_stride},
        {"track_discriminator", c.diagnostics.track_discriminator},
        {"track_student", c.diagnostics.track_student},
        {"tail", c.diagnostics.tail}}},
  };
}

namespace detail {

inline std::string join_keys(const Json& obj) {
  std::string s;
  for (auto it = obj.begin(); it != obj.end(); ++it) s += (s.empty() ? "" : ", ") + it.key();
  return s;
}

/// Rejects keys absent from `ref`, recursing into objects.
inline void check_keys(const Json& user, const Json& ref, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config: '" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!ref.contains(it.key())) {
      throw ConfigError("config: unknown key '" + key + "'; valid keys" + (path.empty() ? "" : " in '" + path + "'") +
                        ": " + join_keys(ref));
    }
    if (ref[it.key()].is_object()) check_keys(it.value(), ref[it.key()], key);
  }
}

template <typename V>
void get(const Json& j, const char* key, V& out, const std::string& path) {
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: '" + path + key + "' has the wrong type (got " + j.at(key).dump() + ")");
  }
}

}  // namespace detail

/// Parses a (possibly partial) config document on top of the defaults.
inline ExperimentConfig from_json(const Json& user) {
  const ExperimentConfig defaults;
  Json j = to_json(defaults);
  detail::check_keys(user, j, "");
  j.merge_patch(user);

  ExperimentConfig c;
  using detail::get;
  get(j, "seed", c.seed, "");
  get(j, "batch_size", c.batch_size, "");
  get(j, "output_dir", c.output_dir, "");
  const auto& m = j["model"];
  std::string kind;
  get(m, "kind", kind, "model.");
  c.extractor.kind = nets::extractor_kind_from(kind);
  get(m, "patch_size", c.extractor.patch_size, "model.");
  get(m, "window_size", c.extractor.window_size, "model.");
  get(m, "embed_dim", c.extractor.embed_dim, "model.");
  get(m, "depth", c.extractor.depth, "model.");
  get(m, "heads", c.extractor.heads, "model.");
  get(m, "mlp_ratio", c.extractor.mlp_ratio, "model.");
  get(m, "head_hidden", c.head_hidden, "model.");
  std::string mode;
  get(j, "discriminator", mode, "");
  c.discriminator = nets::discriminator_mode_from(mode);
  get(j, "dynamic_weights", c.dynamic_weights, "");
  const auto& sm = j["smoothing"];
  get(sm, "mo_pl", c.smoothing.mo_pl, "smoothing.");
  get(sm, "mo_fa", c.smoothing.mo_fa, "smoothing.");
  get(sm, "m", c.smoothing.m, "smoothing.");
  const auto& o = j["optim"];
  get(o, "lr_fc", c.optim.lr_fc, "optim.");
  get(o, "weight_decay", c.optim.weight_decay, "optim.");
  get(o, "lr_ds", c.optim.lr_ds, "optim.");
  get(o, "fc_warmup_steps", c.optim.fc_warmup_steps, "optim.");
  get(o, "poly_power", c.optim.poly_power, "optim.");
  const auto& l = j["loss"];
  get(l, "lambda_adv", c.loss.lambda_adv, "loss.");
  get(l, "lambda_target", c.loss.lambda_target, "loss.");
  get(l, "saturating_generator", c.loss.saturating_generator, "loss.");
  const auto& sc = j["schedule"];
  get(sc, "warmup_iters", c.schedule.warmup_iters, "schedule.");
  get(sc, "iters_per_round", c.schedule.iters_per_round, "schedule.");
  get(sc, "rounds", c.schedule.rounds, "schedule.");
  const auto& d = j["data"];
  auto& s = c.data.spec;
  get(d, "num_common", s.num_common, "data.");
  get(d, "source_private", s.include_source_private, "data.");
  get(d, "target_private", s.include_target_private, "data.");
  get(d, "image_h", s.image_h, "data.");
  get(d, "image_w", s.image_w, "data.");
  get(d, "min_objects", s.min_objects, "data.");
  get(d, "max_objects", s.max_objects, "data.");
  get(d, "n_source", c.data.n_source, "data.");
  get(d, "n_target", c.data.n_target, "data.");
  get(d, "n_test", c.data.n_test, "data.");
  const auto& sh = d["shift"];
  get(sh, "noise_sigma", s.shift.noise_sigma, "data.shift.");
  get(sh, "hue_shift", s.shift.hue_shift, "data.shift.");
  get(sh, "brightness_shift", s.shift.brightness_shift, "data.shift.");
  get(sh, "blur_radius", s.shift.blur_radius, "data.shift.");
  get(sh, "illumination", s.shift.illumination, "data.shift.");
  const auto& a = d["augment"];
  auto& ac = c.data.augment;
  get(a, "enabled", ac.enabled, "data.augment.");
  get(a, "flip_prob", ac.flip_prob, "data.augment.");
  get(a, "scale_min", ac.scale_min, "data.augment.");
  get(a, "scale_max", ac.scale_max, "data.augment.");
  get(a, "brightness", ac.brightness, "data.augment.");
  get(a, "contrast", ac.contrast, "data.augment.");
  get(a, "saturation", ac.saturation, "data.augment.");
  get(a, "hue", ac.hue, "data.augment.");
  const auto& g = j["diagnostics"];
  get(g, "probe_size", c.diagnostics.probe_size, "diagnostics.");
  get(g, "track_stride", c.diagnostics.track_stride, "diagnostics.");
  get(g, "track_discriminator", c.diagnostics.track_discriminator, "diagnostics.");
  get(g, "track_student", c.diagnostics.track_student, "diagnostics.");
  get(g, "tail", c.diagnostics.tail, "diagnostics.");
  c.extractor.image_h = s.image_h;
  c.extractor.image_w = s.image_w;
  c.validate();
  return c;
}

inline ExperimentConfig parse_config(std::string_view text, const std::string& origin = "<string>") {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
  return from_json(j);
}

/// Applies `a.b.c=value` to a config document. The value is parsed as JSON
/// when possible and taken as a string otherwise. The key must exist.
inline void apply_override(Json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  const Json ref = to_json(ExperimentConfig{});
  std::string ptr;
  const Json* r = &ref;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!r->is_object() || !r->contains(part)) {
      throw ConfigError("override: unknown key '" + key + "'" +
                        (r->is_object() ? "; valid keys here: " + detail::join_keys(*r) : std::string()));
    }
    r = &(*r)[part];
    ptr += "/" + part;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  Json v;
  try {
    v = Json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    v = raw;
  }
  j[Json::json_pointer(ptr)] = v;
}

/// FNV-1a 64 over the canonical dump of the fully populated config.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  Json j = to_json(c);
  j.erase("output_dir");
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex(std::uint64_t v) {
  static const char* d = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = d[v & 0xf];
  return s;
}

}  // namespace smoothda::train
