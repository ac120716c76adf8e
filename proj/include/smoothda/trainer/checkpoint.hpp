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

// TDAC checkpoint files.
//
//   "TDAC", u32 version, u32 store count, then per store: u8 kind, u32 param
//   count, per param (u32 name_len, name, u32 ndim, u32 dims[ndim], f32
//   payload). Then u32 optimizer count and per optimizer: u8 kind, u32 param
//   count, per param (u32 name_len, name, u32 ndim, u32 dims[ndim], f32 first
//   moment, f32 second moment), i64 step, f64 weight decay, u8 schedule kind,
//   f64 base lr, i64 total, i64 warmup, f64 power. Then i64 iteration, i64
//   round, i64 round_iter and the u64 config hash. Little-endian.
//
// The store kind byte is (role << 4) | network kind, role being live 0,
// snapshot 1, momentum 2, round teacher 3.

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "smoothda/trainer/state.hpp"

namespace smoothda::train {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class StoreRole : std::uint8_t { live = 0, snapshot = 1, momentum = 2, teacher = 3 };

namespace ckpt {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}

  template <typename U>
  U get() {
    U v{};
    is_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is_) fail("truncated file");
    return v;
  }

  void bytes(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!is_) fail("truncated file");
  }

  [[noreturn]] void fail(const std::string& what) const { throw FormatError(path_ + ": " + what); }

 private:
  std::istream& is_;
  std::string path_;
};

inline void put_header(std::ostream& os, const std::string& name, const ad::Shape& shape) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
}

template <typename V>
void put_payload(std::ostream& os, const V& v) {
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(Real)));
}

/// Reads a param header and checks it against the expected name and shape.
inline void expect_header(Reader& r, const std::string& name, const ad::Shape& shape, const std::string& where) {
  const auto len = r.get<std::uint32_t>();
  if (len > 4096) r.fail(where + ": implausible name length");
  std::string n(len, '\0');
  r.bytes(n.data(), len);
  const auto nd = r.get<std::uint32_t>();
  if (nd > 8) r.fail(where + ": implausible rank for '" + n + "'");
  ad::Shape s(nd);
  for (auto& d : s) d = r.get<std::uint32_t>();
  if (n != name || s != shape) {
    r.fail(where + ": found '" + n + "' " + ad::to_string(s) + ", expected '" + name + "' " + ad::to_string(shape));
  }
}

struct StoreRef {
  StoreRole role;
  Store* store;
};

inline std::uint8_t kind_byte(StoreRole role, const Store& s) {
  return static_cast<std::uint8_t>((static_cast<std::uint8_t>(role) << 4) | static_cast<std::uint8_t>(s.kind()));
}

inline std::vector<StoreRef> stores(TrainState& st) {
  std::vector<StoreRef> out = {{StoreRole::live, &st.live.extractor}, {StoreRole::live, &st.live.classifier}};
  if (!st.disc.empty()) out.push_back({StoreRole::live, &st.disc});
  if (!st.sim.empty()) out.push_back({StoreRole::live, &st.sim});
  out.push_back({StoreRole::snapshot, &st.snapshot.extractor});
  out.push_back({StoreRole::snapshot, &st.snapshot.classifier});
  if (st.momentum.extractor) out.push_back({StoreRole::momentum, &st.momentum.extractor->target});
  if (st.momentum.classifier) out.push_back({StoreRole::momentum, &st.momentum.classifier->target});
  if (st.teacher) {
    out.push_back({StoreRole::teacher, &st.teacher->extractor});
    out.push_back({StoreRole::teacher, &st.teacher->classifier});
  }
  return out;
}

struct OptRef {
  const Store* store;
  ad::OptimizerState<Real>* opt;
};

inline std::vector<OptRef> optimizers(TrainState& st) {
  std::vector<OptRef> out = {{&st.live.extractor, &st.opt_f}, {&st.live.classifier, &st.opt_c}};
  if (!st.disc.empty()) out.push_back({&st.disc, &st.opt_d});
  if (!st.sim.empty()) out.push_back({&st.sim, &st.opt_s});
  return out;
}

}  // namespace ckpt

inline void write_checkpoint(std::ostream& os, const ExperimentConfig& cfg, const TrainState& state) {
  using ckpt::put;
  auto& st = const_cast<TrainState&>(state);  // traversal only
  os.write("TDAC", 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  const auto stores = ckpt::stores(st);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(stores.size()));
  for (const auto& [role, s] : stores) {
    put<std::uint8_t>(os, ckpt::kind_byte(role, *s));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s->size()));
    for (const auto& [name, t] : s->entries()) {
      ckpt::put_header(os, name, t.shape());
      ckpt::put_payload(os, t.values());
    }
  }
  const auto opts = ckpt::optimizers(st);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(opts.size()));
  for (const auto& [s, o] : opts) {
    put<std::uint8_t>(os, static_cast<std::uint8_t>(s->kind()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s->size()));
    for (std::size_t i = 0; i < s->size(); ++i) {
      const auto& [name, t] = s->entries()[i];
      ckpt::put_header(os, name, t.shape());
      ckpt::put_payload(os, o->m[i]);
      ckpt::put_payload(os, o->v[i]);
    }
    put<std::int64_t>(os, o->step);
    put<double>(os, o->weight_decay);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(o->schedule.kind));
    put<double>(os, o->schedule.base_lr);
    put<std::int64_t>(os, o->schedule.total_steps);
    put<std::int64_t>(os, o->schedule.warmup_steps);
    put<double>(os, o->schedule.power);
  }
  put<std::int64_t>(os, st.iteration);
  put<std::int64_t>(os, st.round);
  put<std::int64_t>(os, st.round_iter);
  put<std::uint64_t>(os, config_hash(cfg));
}

inline void save_checkpoint(const std::string& path, const ExperimentConfig& cfg, const TrainState& st) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError(path + ": cannot open for writing");
    write_checkpoint(os, cfg, st);
    if (!os) throw FormatError(path + ": write failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw FormatError(path + ": cannot move temporary file into place");
}

/// Reads a checkpoint written for `cfg`. Store layout, names and shapes must
/// match what `cfg` builds.
inline TrainState read_checkpoint(std::istream& is, const ExperimentConfig& cfg, const std::string& path) {
  ckpt::Reader r(is, path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "TDAC", 4) != 0) r.fail("bad magic (not a TDAC checkpoint)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    r.fail("unsupported version " + std::to_string(version) + " (expected " + std::to_string(kCheckpointVersion) + ")");

  TrainState st = init_state(cfg);
  const auto n_stores = r.get<std::uint32_t>();
  // a teacher pair is present only after the first round boundary without MoPL
  const auto base = ckpt::stores(st).size();
  if (n_stores == base + 2 && !cfg.smoothing.mo_pl) st.teacher = Params{st.snapshot.extractor.detached(), st.snapshot.classifier.detached()};
  const auto stores = ckpt::stores(st);
  if (n_stores != stores.size())
    r.fail("store count " + std::to_string(n_stores) + " does not match the configuration (" +
           std::to_string(stores.size()) + ")");
  for (const auto& [role, s] : stores) {
    const auto kind = r.get<std::uint8_t>();
    const std::string where = "store " + std::string(ad::to_string(s->kind()));
    if (kind != ckpt::kind_byte(role, *s)) r.fail(where + ": unexpected kind byte " + std::to_string(kind));
    if (r.get<std::uint32_t>() != s->size()) r.fail(where + ": parameter count mismatch");
    for (auto& [name, t] : s->entries()) {
      ckpt::expect_header(r, name, t.shape(), where);
      auto v = t.mutable_values();
      r.bytes(v.data(), v.size() * sizeof(Real));
    }
  }
  const auto opts = ckpt::optimizers(st);
  if (r.get<std::uint32_t>() != opts.size()) r.fail("optimizer count does not match the configuration");
  for (const auto& [s, o] : opts) {
    const std::string where = "optimizer " + std::string(ad::to_string(s->kind()));
    if (r.get<std::uint8_t>() != static_cast<std::uint8_t>(s->kind())) r.fail(where + ": unexpected kind byte");
    if (r.get<std::uint32_t>() != s->size()) r.fail(where + ": parameter count mismatch");
    for (std::size_t i = 0; i < s->size(); ++i) {
      const auto& [name, t] = s->entries()[i];
      ckpt::expect_header(r, name, t.shape(), where);
      r.bytes(o->m[i].data(), o->m[i].size() * sizeof(Real));
      r.bytes(o->v[i].data(), o->v[i].size() * sizeof(Real));
    }
    o->step = r.get<std::int64_t>();
    o->weight_decay = r.get<double>();
    const auto kind = r.get<std::uint8_t>();
    if (kind > 2) r.fail(where + ": unknown schedule kind");
    o->schedule.kind = static_cast<ad::ScheduleKind>(kind);
    o->schedule.base_lr = r.get<double>();
    o->schedule.total_steps = r.get<std::int64_t>();
    o->schedule.warmup_steps = r.get<std::int64_t>();
    o->schedule.power = r.get<double>();
  }
  st.iteration = r.get<std::int64_t>();
  st.round = r.get<std::int64_t>();
  st.round_iter = r.get<std::int64_t>();
  const auto hash = r.get<std::uint64_t>();
  if (hash != config_hash(cfg)) {
    throw ConfigError(path + ": checkpoint was written with a different configuration (hash " + hex(hash) +
                      ", current " + hex(config_hash(cfg)) + ")");
  }
  if (is.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes after checkpoint");
  if (st.iteration < 0 || st.round < 0 || st.round > cfg.schedule.rounds || st.round_iter < 0)
    r.fail("counters out of range");
  return st;
}

inline TrainState load_checkpoint(const std::string& path, const ExperimentConfig& cfg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(path + ": cannot open checkpoint");
  return read_checkpoint(is, cfg, path);
}

}  // namespace smoothda::train
