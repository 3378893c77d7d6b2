#include "inatlas/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "inatlas/errors.hpp"

namespace inatlas::config {

namespace {

struct Entry {
  std::string value;
  int line = 0;
  bool used = false;
};

using SectionMap = std::map<std::string, std::map<std::string, Entry>>;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

SectionMap tokenize(const std::string& text) {
  SectionMap sections;
  std::istringstream in(text);
  std::string line;
  std::string current;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw ConfigError("config: line " + std::to_string(lineno) + ": unterminated section");
      current = trim(t.substr(1, t.size() - 2));
      if (current.empty())
        throw ConfigError("config: line " + std::to_string(lineno) + ": empty section name");
      sections[current];
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config: line " + std::to_string(lineno) + ": empty key");
    auto& section = sections[current];
    if (section.count(key))
      throw ConfigError("config: line " + std::to_string(lineno) + ": duplicate key \"" + key +
                        "\"");
    section[key] = Entry{value, lineno, false};
  }
  return sections;
}

class Reader {
 public:
  Reader(SectionMap& sections, std::string section) : sections_(sections), name_(std::move(section)) {}

  std::optional<std::string> raw(const std::string& key) {
    auto sit = sections_.find(name_);
    if (sit == sections_.end()) return std::nullopt;
    auto it = sit->second.find(key);
    if (it == sit->second.end()) return std::nullopt;
    it->second.used = true;
    return it->second.value;
  }

  void read(const std::string& key, double& out) {
    if (auto v = raw(key)) out = parse_double(key, *v);
  }
  void read(const std::string& key, int& out) {
    if (auto v = raw(key)) out = static_cast<int>(parse_long(key, *v));
  }
  void read(const std::string& key, std::uint64_t& out) {
    if (auto v = raw(key)) out = static_cast<std::uint64_t>(parse_long(key, *v));
  }
  void read(const std::string& key, bool& out) {
    if (auto v = raw(key)) {
      if (*v == "true" || *v == "1")
        out = true;
      else if (*v == "false" || *v == "0")
        out = false;
      else
        throw ConfigError("config: key \"" + key + "\": expected true/false, got \"" + *v + "\"");
    }
  }
  void read(const std::string& key, std::vector<int>& out) {
    if (auto v = raw(key)) {
      out.clear();
      for (const auto& item : split(*v))
        out.push_back(static_cast<int>(parse_long(key, item)));
    }
  }
  void read(const std::string& key, std::vector<std::string>& out) {
    if (auto v = raw(key)) out = split(*v);
  }
  void read(const std::string& key, std::array<int, 3>& out) {
    if (auto v = raw(key)) {
      const auto items = split(*v);
      if (items.size() != 3)
        throw ConfigError("config: key \"" + key + "\": expected 3 comma-separated values");
      for (int i = 0; i < 3; ++i) out[i] = static_cast<int>(parse_long(key, items[i]));
    }
  }

 private:
  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> items;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
      const std::string t = trim(cur);
      if (!t.empty()) items.push_back(t);
    }
    return items;
  }
  static double parse_double(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config: key \"" + key + "\": expected number, got \"" + v + "\"");
    }
  }
  static long long parse_long(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const long long d = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config: key \"" + key + "\": expected integer, got \"" + v + "\"");
    }
  }

  SectionMap& sections_;
  std::string name_;
};

void reject_unused(const SectionMap& sections) {
  static const char* known_sections[] = {"", "model", "train", "adapt", "cohort", "atlas"};
  for (const auto& [section, entries] : sections) {
    const bool known = std::find(std::begin(known_sections), std::end(known_sections), section) !=
                       std::end(known_sections);
    if (!known)
      throw ConfigError("config: unknown section \"" + section + "\"");
    for (const auto& [key, entry] : entries)
      if (!entry.used)
        throw ConfigError("config: unknown key \"" + key + "\" in section [" + section + "]");
  }
}

std::string precision_name(bool double_precision) {
  return double_precision ? "double" : "float";
}

}  // namespace

RunConfig default_config(const std::string& scale) {
  RunConfig cfg;
  cfg.scale = scale;
  if (scale == "desk") {
    cfg.model.hidden_layers = 3;
    cfg.model.hidden_width = 128;
    cfg.model.modulated_layers = {1, 3};
    cfg.model.latent_channels = 32;
    cfg.model.latent_grid = {3, 3, 3};
    cfg.train.batch_coords = 4096;
    cfg.train.epochs = 5;
    cfg.adapt.batch_coords = 4096;
  } else if (scale == "paper") {
    cfg.model.hidden_layers = 5;
    cfg.model.hidden_width = 1024;
    cfg.model.modulated_layers = {1, 3, 5};
    cfg.model.latent_channels = 256;
    cfg.model.latent_grid = {3, 3, 3};
    cfg.train.batch_coords = 25000;
    cfg.train.epochs = 1;
    cfg.adapt.batch_coords = 25000;
  } else {
    throw ConfigError("unknown scale profile \"" + scale + "\" (expected desk or paper)");
  }
  cfg.model.omega0 = 30.0;
  cfg.adapt.lr_latent = cfg.train.lr_latent;
  cfg.adapt.lr_rigid = cfg.train.lr_rigid;
  cfg.adapt.lr_condition = cfg.train.lr_latent;
  return cfg;
}

RunConfig parse_config(const std::string& text, const std::string& scale) {
  SectionMap sections = tokenize(text);

  // The scale may be set in the file's top-level section; it selects the
  // defaults, so resolve it before anything else.
  std::string effective_scale = scale;
  {
    Reader top(sections, "");
    if (auto v = top.raw("scale")) effective_scale = *v;
  }
  RunConfig cfg = default_config(effective_scale);

  {
    Reader top(sections, "");
    top.read("seed", cfg.seed);
  }
  {
    Reader r(sections, "model");
    r.read("hidden_layers", cfg.model.hidden_layers);
    r.read("hidden_width", cfg.model.hidden_width);
    r.read("modulated_layers", cfg.model.modulated_layers);
    r.read("omega0", cfg.model.omega0);
    r.read("latent_channels", cfg.model.latent_channels);
    r.read("latent_grid", cfg.model.latent_grid);
    r.read("conditions", cfg.model.condition_names);
  }
  {
    Reader r(sections, "train");
    r.read("lr_network", cfg.train.lr_network);
    r.read("lr_latent", cfg.train.lr_latent);
    r.read("lr_rigid", cfg.train.lr_rigid);
    r.read("batch_coords", cfg.train.batch_coords);
    r.read("epochs", cfg.train.epochs);
    r.read("seg_loss_weight", cfg.train.seg_loss_weight);
    if (auto v = r.raw("precision")) {
      if (*v == "float")
        cfg.train.double_precision = false;
      else if (*v == "double")
        cfg.train.double_precision = true;
      else
        throw ConfigError("config: key \"precision\": expected float or double");
    }
  }
  {
    Reader r(sections, "adapt");
    r.read("epochs", cfg.adapt.epochs);
    r.read("holdout_fraction", cfg.adapt.holdout_fraction);
    r.read("patience", cfg.adapt.patience);
    r.read("eval_every", cfg.adapt.eval_every);
    r.read("lr_latent", cfg.adapt.lr_latent);
    r.read("lr_rigid", cfg.adapt.lr_rigid);
    r.read("lr_condition", cfg.adapt.lr_condition);
    r.read("batch_coords", cfg.adapt.batch_coords);
    r.read("observed_channels", cfg.adapt.observed_channels);
  }
  {
    Reader r(sections, "cohort");
    r.read("size", cfg.cohort.size);
    r.read("holdout_size", cfg.cohort.holdout_size);
    r.read("age_min", cfg.cohort.age_min);
    r.read("age_max", cfg.cohort.age_max);
    r.read("lv_min", cfg.cohort.lv_min);
    r.read("lv_max", cfg.cohort.lv_max);
    r.read("cc_probability", cfg.cohort.cc_probability);
    r.read("birth_age_enabled", cfg.cohort.birth_age_enabled);
    r.read("birth_age_min", cfg.cohort.birth_age_min);
    r.read("birth_age_max", cfg.cohort.birth_age_max);
    r.read("grid", cfg.cohort.grid);
    r.read("spacing_mm", cfg.cohort.spacing_mm);
    r.read("noise_sigma", cfg.cohort.noise_sigma);
    r.read("modality_count", cfg.cohort.modality_count);
    r.read("max_rotation_deg", cfg.cohort.max_rotation_deg);
    r.read("max_translation_mm", cfg.cohort.max_translation_mm);
  }
  {
    Reader r(sections, "atlas");
    r.read("sigma_weeks", cfg.atlas.sigma_weeks);
    r.read("resolution_mm", cfg.atlas.resolution_mm);
  }

  reject_unused(sections);
  cfg.model.validate();
  cfg.train.validate();
  cfg.adapt.validate();
  return cfg;
}

RunConfig load_config_file(const std::string& path, const std::string& scale) {
  std::ifstream f(path);
  if (!f) throw IoError("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), scale);
}

std::string to_text(const RunConfig& cfg) {
  std::ostringstream os;
  auto num = [](double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return std::string(buf);
  };
  os << "seed = " << cfg.seed << "\n";
  os << "scale = " << cfg.scale << "\n\n";
  os << "[model]\n";
  os << "hidden_layers = " << cfg.model.hidden_layers << "\n";
  os << "hidden_width = " << cfg.model.hidden_width << "\n";
  os << "modulated_layers = ";
  for (std::size_t i = 0; i < cfg.model.modulated_layers.size(); ++i)
    os << (i ? "," : "") << cfg.model.modulated_layers[i];
  os << "\n";
  os << "omega0 = " << num(cfg.model.omega0) << "\n";
  os << "latent_channels = " << cfg.model.latent_channels << "\n";
  os << "latent_grid = " << cfg.model.latent_grid[0] << "," << cfg.model.latent_grid[1] << ","
     << cfg.model.latent_grid[2] << "\n";
  if (!cfg.model.condition_names.empty()) {
    os << "conditions = ";
    for (std::size_t i = 0; i < cfg.model.condition_names.size(); ++i)
      os << (i ? "," : "") << cfg.model.condition_names[i];
    os << "\n";
  }
  os << "\n[train]\n";
  os << "lr_network = " << num(cfg.train.lr_network) << "\n";
  os << "lr_latent = " << num(cfg.train.lr_latent) << "\n";
  os << "lr_rigid = " << num(cfg.train.lr_rigid) << "\n";
  os << "batch_coords = " << cfg.train.batch_coords << "\n";
  os << "epochs = " << cfg.train.epochs << "\n";
  os << "seg_loss_weight = " << num(cfg.train.seg_loss_weight) << "\n";
  os << "precision = " << precision_name(cfg.train.double_precision) << "\n";
  os << "\n[adapt]\n";
  os << "epochs = " << cfg.adapt.epochs << "\n";
  os << "holdout_fraction = " << num(cfg.adapt.holdout_fraction) << "\n";
  os << "patience = " << cfg.adapt.patience << "\n";
  os << "eval_every = " << cfg.adapt.eval_every << "\n";
  os << "lr_latent = " << num(cfg.adapt.lr_latent) << "\n";
  os << "lr_rigid = " << num(cfg.adapt.lr_rigid) << "\n";
  os << "lr_condition = " << num(cfg.adapt.lr_condition) << "\n";
  os << "batch_coords = " << cfg.adapt.batch_coords << "\n";
  if (!cfg.adapt.observed_channels.empty()) {
    os << "observed_channels = ";
    for (std::size_t i = 0; i < cfg.adapt.observed_channels.size(); ++i)
      os << (i ? "," : "") << cfg.adapt.observed_channels[i];
    os << "\n";
  }
  os << "\n[cohort]\n";
  os << "size = " << cfg.cohort.size << "\n";
  os << "holdout_size = " << cfg.cohort.holdout_size << "\n";
  os << "age_min = " << num(cfg.cohort.age_min) << "\n";
  os << "age_max = " << num(cfg.cohort.age_max) << "\n";
  os << "lv_min = " << num(cfg.cohort.lv_min) << "\n";
  os << "lv_max = " << num(cfg.cohort.lv_max) << "\n";
  os << "cc_probability = " << num(cfg.cohort.cc_probability) << "\n";
  os << "birth_age_enabled = " << (cfg.cohort.birth_age_enabled ? "true" : "false") << "\n";
  os << "birth_age_min = " << num(cfg.cohort.birth_age_min) << "\n";
  os << "birth_age_max = " << num(cfg.cohort.birth_age_max) << "\n";
  os << "grid = " << cfg.cohort.grid << "\n";
  os << "spacing_mm = " << num(cfg.cohort.spacing_mm) << "\n";
  os << "noise_sigma = " << num(cfg.cohort.noise_sigma) << "\n";
  os << "modality_count = " << cfg.cohort.modality_count << "\n";
  os << "max_rotation_deg = " << num(cfg.cohort.max_rotation_deg) << "\n";
  os << "max_translation_mm = " << num(cfg.cohort.max_translation_mm) << "\n";
  os << "\n[atlas]\n";
  os << "sigma_weeks = " << num(cfg.atlas.sigma_weeks) << "\n";
  os << "resolution_mm = " << num(cfg.atlas.resolution_mm) << "\n";
  return os.str();
}

}  // namespace inatlas::config
