#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <variant>

#include "inatlas/errors.hpp"
#include "inatlas/train.hpp"

namespace inatlas::checkpoint {

// Versioned binary container: model config, shared weights, every training
// subject's latent grid / rigid transform / age / conditions, the condition
// and age normalization records, and the reference atlas grid. Everything
// needed for inference and adaptation without the training data.
//
// Layout: magic "INAT", u32 version, u8 dtype (0 = float32, 1 = float64),
// then length-prefixed fields in a fixed order. Little-endian only, matching
// the NIfTI interface.

constexpr std::uint32_t kVersion = 1;

namespace detail {

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
void put_vec(std::ostream& os, const std::vector<T>& v) {
  put<std::uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
T get(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("checkpoint: truncated file");
  return v;
}

inline std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw IoError("checkpoint: truncated string");
  return s;
}

template <typename T>
std::vector<T> get_vec(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  std::vector<T> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (!is) throw IoError("checkpoint: truncated buffer");
  return v;
}

template <typename T>
constexpr std::uint8_t dtype_tag() {
  return std::is_same_v<T, float> ? 0 : 1;
}

}  // namespace detail

template <typename T>
void save(const train::TrainedModel<T>& m, const std::string& path) {
  using namespace detail;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint::save: cannot open " + path);
  os.write("INAT", 4);
  put<std::uint32_t>(os, kVersion);
  put<std::uint8_t>(os, dtype_tag<T>());

  const auto& cfg = m.cfg;
  put<std::int32_t>(os, cfg.hidden_layers);
  put<std::int32_t>(os, cfg.hidden_width);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.modulated_layers.size()));
  for (int h : cfg.modulated_layers) put<std::int32_t>(os, h);
  put<double>(os, cfg.omega0);
  put<std::int32_t>(os, cfg.latent_channels);
  for (int g : cfg.latent_grid) put<std::int32_t>(os, g);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(cfg.condition_names.size()));
  for (const auto& n : cfg.condition_names) put_string(os, n);
  put<std::int32_t>(os, cfg.image_channels);
  put<std::int32_t>(os, cfg.tissue_classes);

  put_vec(os, m.params.values);

  put<double>(os, m.age_min_weeks);
  put<double>(os, m.age_max_weeks);
  for (int d : m.ref_dims) put<std::int32_t>(os, d);
  for (double s : m.ref_spacing) put<double>(os, s);

  put<std::uint32_t>(os, static_cast<std::uint32_t>(m.condition_records.size()));
  for (const auto& r : m.condition_records) {
    put_string(os, r.name);
    put<double>(os, r.phys_min);
    put<double>(os, r.phys_max);
  }

  put<std::uint32_t>(os, static_cast<std::uint32_t>(m.subjects.size()));
  for (const auto& s : m.subjects) {
    put_string(os, s.id);
    put<double>(os, s.scan_age_weeks);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.conditions.size()));
    for (const auto& [k, v] : s.conditions) {
      put_string(os, k);
      put<double>(os, v);
    }
    for (double c : s.transform.world_center) put<double>(os, c);
    put<double>(os, s.transform.scale);
    for (int d : s.dims) put<std::int32_t>(os, d);
    for (double sp : s.spacing) put<double>(os, sp);
    put_vec(os, s.latent.z);
    put_vec(os, s.latent.xi);
    for (T v : s.rigid.axis_angle) put<T>(os, v);
    for (T v : s.rigid.translation) put<T>(os, v);
  }
  if (!os) throw IoError("checkpoint::save: short write to " + path);
}

template <typename T>
train::TrainedModel<T> load_typed(std::istream& is) {
  using namespace detail;
  model::ModelConfig cfg;
  cfg.hidden_layers = get<std::int32_t>(is);
  cfg.hidden_width = get<std::int32_t>(is);
  cfg.modulated_layers.resize(get<std::uint32_t>(is));
  for (auto& h : cfg.modulated_layers) h = get<std::int32_t>(is);
  cfg.omega0 = get<double>(is);
  cfg.latent_channels = get<std::int32_t>(is);
  for (auto& g : cfg.latent_grid) g = get<std::int32_t>(is);
  cfg.condition_names.resize(get<std::uint32_t>(is));
  for (auto& n : cfg.condition_names) n = get_string(is);
  cfg.image_channels = get<std::int32_t>(is);
  cfg.tissue_classes = get<std::int32_t>(is);

  train::TrainedModel<T> m(cfg);
  m.params.values = get_vec<T>(is);
  if (m.params.values.size() != m.params.layout.total)
    throw FormatError("checkpoint: parameter buffer size mismatch");

  m.age_min_weeks = get<double>(is);
  m.age_max_weeks = get<double>(is);
  for (auto& d : m.ref_dims) d = get<std::int32_t>(is);
  for (auto& s : m.ref_spacing) s = get<double>(is);

  m.condition_records.resize(get<std::uint32_t>(is));
  for (auto& r : m.condition_records) {
    r.name = get_string(is);
    r.phys_min = get<double>(is);
    r.phys_max = get<double>(is);
  }

  const auto n_subjects = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_subjects; ++i) {
    train::SubjectState<T> s;
    s.id = get_string(is);
    s.scan_age_weeks = get<double>(is);
    const auto n_cond = get<std::uint32_t>(is);
    for (std::uint32_t c = 0; c < n_cond; ++c) {
      std::string k = get_string(is);
      s.conditions[k] = get<double>(is);
    }
    for (auto& c : s.transform.world_center) c = get<double>(is);
    s.transform.scale = get<double>(is);
    for (auto& d : s.dims) d = get<std::int32_t>(is);
    for (auto& sp : s.spacing) sp = get<double>(is);
    s.latent.z = get_vec<T>(is);
    s.latent.xi = get_vec<T>(is);
    for (auto& v : s.rigid.axis_angle) v = get<T>(is);
    for (auto& v : s.rigid.translation) v = get<T>(is);
    m.subjects.push_back(std::move(s));
  }
  return m;
}

using AnyModel = std::variant<train::TrainedModel<float>, train::TrainedModel<double>>;

inline AnyModel load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint::load: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "INAT", 4) != 0)
    throw FormatError("checkpoint::load: bad magic in " + path);
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kVersion)
    throw FormatError("checkpoint::load: unsupported version " + std::to_string(version));
  const auto dtype = detail::get<std::uint8_t>(is);
  if (dtype == 0) return load_typed<float>(is);
  if (dtype == 1) return load_typed<double>(is);
  throw FormatError("checkpoint::load: unknown dtype tag");
}

}  // namespace inatlas::checkpoint
