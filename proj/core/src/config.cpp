#include "nimf/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace nimf {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& what) {
  throw ConfigError(origin + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& text, const ConfigEntry& e, const std::string& origin) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    fail(origin, e.line, "invalid value '" + text + "' for key '" + e.key + "'");
  }
  return value;
}

using Handler = std::function<void(const ConfigEntry&)>;

void dispatch(const ConfigSection& section, const std::string& origin, const std::map<std::string, Handler>& handlers) {
  for (const auto& e : section.entries) {
    const auto it = handlers.find(e.key);
    if (it == handlers.end()) fail(origin, e.line, "unknown key '" + e.key + "' in section [" + section.name + "]");
    try {
      it->second(e);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& ex) {
      fail(origin, e.line, ex.what());
    }
  }
}

}  // namespace

const ConfigEntry* ConfigSection::find(const std::string& key) const {
  for (const auto& e : entries) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

ConfigFile ConfigFile::parse(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) fail(origin, line, "malformed section header");
      const std::string name = trim(s.substr(1, s.size() - 2));
      if (cfg.section(name) != nullptr) fail(origin, line, "duplicate section [" + name + "]");
      cfg.sections_.push_back({name, line, {}});
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(origin, line, "expected 'key = value'");
    if (cfg.sections_.empty()) fail(origin, line, "key outside of any section");
    ConfigEntry e{trim(s.substr(0, eq)), trim(s.substr(eq + 1)), line};
    if (e.key.empty()) fail(origin, line, "empty key");
    auto& sec = cfg.sections_.back();
    if (sec.find(e.key) != nullptr) fail(origin, line, "duplicate key '" + e.key + "'");
    sec.entries.push_back(std::move(e));
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  ConfigFile cfg = parse(buf.str(), path.string());
  cfg.base_dir_ = path.parent_path();
  return cfg;
}

const ConfigSection* ConfigFile::section(const std::string& name) const {
  for (const auto& s : sections_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::vector<const ConfigSection*> ConfigFile::sections_with_prefix(const std::string& prefix) const {
  std::vector<const ConfigSection*> out;
  for (const auto& s : sections_) {
    if (s.name.starts_with(prefix)) out.push_back(&s);
  }
  return out;
}

void ConfigFile::require_sections(const std::vector<std::string>& allowed,
                                  const std::vector<std::string>& allowed_prefixes) const {
  for (const auto& s : sections_) {
    const bool named = std::find(allowed.begin(), allowed.end(), s.name) != allowed.end();
    const bool prefixed = std::any_of(allowed_prefixes.begin(), allowed_prefixes.end(),
                                      [&](const std::string& p) { return s.name.starts_with(p); });
    if (!named && !prefixed) fail(origin_, s.line, "unknown section [" + s.name + "]");
  }
}

double config_double(const ConfigEntry& e, const std::string& origin) {
  return parse_number<double>(e.value, e, origin);
}

long long config_int(const ConfigEntry& e, const std::string& origin) {
  return parse_number<long long>(e.value, e, origin);
}

std::uint64_t config_uint(const ConfigEntry& e, const std::string& origin) {
  return parse_number<std::uint64_t>(e.value, e, origin);
}

bool config_bool(const ConfigEntry& e, const std::string& origin) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  fail(origin, e.line, "invalid boolean '" + e.value + "' for key '" + e.key + "'");
}

std::vector<Eigen::Index> config_index_list(const ConfigEntry& e, const std::string& origin) {
  std::vector<Eigen::Index> out;
  for (const auto& item : split_list(e.value)) out.push_back(parse_number<Eigen::Index>(item, e, origin));
  return out;
}

std::vector<std::uint64_t> config_uint_list(const ConfigEntry& e, const std::string& origin) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(e.value)) out.push_back(parse_number<std::uint64_t>(item, e, origin));
  return out;
}

FusionConfig parse_fusion_config(const ConfigSection& section, const std::string& origin) {
  FusionConfig cfg;
  if (const auto* preset = section.find("gradient.preset")) {
    if (preset->value == "setting1") {
      cfg.gradient = GradientSettings::setting1();
    } else if (preset->value == "setting2") {
      cfg.gradient = GradientSettings::setting2();
    } else {
      fail(origin, preset->line, "unknown gradient preset '" + preset->value + "'");
    }
    cfg.head_weights = true;
  }
  auto d = [&](double& out) { return [&out, &origin](const ConfigEntry& e) { out = config_double(e, origin); }; };
  auto i = [&](int& out) {
    return [&out, &origin](const ConfigEntry& e) { out = static_cast<int>(config_int(e, origin)); };
  };
  auto b = [&](bool& out) { return [&out, &origin](const ConfigEntry& e) { out = config_bool(e, origin); }; };
  auto u = [&](std::uint64_t& out) { return [&out, &origin](const ConfigEntry& e) { out = config_uint(e, origin); }; };
  auto& g = cfg.gradient;
  const std::map<std::string, Handler> handlers{
      {"variant", [&](const ConfigEntry& e) { cfg.variant = parse_variant(e.value); }},
      {"widths", [&](const ConfigEntry& e) { cfg.widths = config_index_list(e, origin); }},
      {"score", [&](const ConfigEntry& e) { cfg.score_kind = parse_score_kind(e.value); }},
      {"boundary", [&](const ConfigEntry& e) { cfg.boundary = parse_boundary(e.value); }},
      {"match_cost", [&](const ConfigEntry& e) { cfg.match_cost = parse_match_cost(e.value); }},
      {"local_search_rounds", i(cfg.local_search_rounds)},
      {"normalize_activations", b(cfg.normalize_activations)},
      {"normalize_scores", b(cfg.normalize_scores)},
      {"head_weights", b(cfg.head_weights)},
      {"rcond", d(cfg.rcond)},
      {"seed", u(cfg.seed)},
      {"kmeans.seed", u(cfg.kmeans.seed)},
      {"kmeans.max_iters", i(cfg.kmeans.max_iters)},
      {"kmeans.tol", d(cfg.kmeans.tol)},
      {"kmeans.restarts", i(cfg.kmeans.restarts)},
      {"gradient.preset", [](const ConfigEntry&) {}},
      {"gradient.optimizer", [&](const ConfigEntry& e) { g.optimizer = parse_optimizer(e.value); }},
      {"gradient.lr", d(g.lr)},
      {"gradient.epochs", i(g.epochs)},
      {"gradient.last_optimizer", [&](const ConfigEntry& e) { g.last_optimizer = parse_optimizer(e.value); }},
      {"gradient.last_lr", d(g.last_lr)},
      {"gradient.last_epochs", i(g.last_epochs)},
      {"gradient.weight_decay", d(g.weight_decay)},
      {"gradient.perturbation", d(g.perturbation)},
      {"gradient.batch_size", i(g.batch_size)},
      {"gradient.val_split", d(g.val_split)},
      {"gradient.patience", i(g.patience)},
  };
  dispatch(section, origin, handlers);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& ex) {
    fail(origin, section.line, ex.what());
  }
  return cfg;
}

TrainConfig parse_train_config(const ConfigSection& section, const std::string& origin) {
  TrainConfig cfg;
  auto d = [&](double& out) { return [&out, &origin](const ConfigEntry& e) { out = config_double(e, origin); }; };
  auto i = [&](int& out) {
    return [&out, &origin](const ConfigEntry& e) { out = static_cast<int>(config_int(e, origin)); };
  };
  const std::map<std::string, Handler> handlers{
      {"optimizer", [&](const ConfigEntry& e) { cfg.optimizer = parse_optimizer(e.value); }},
      {"lr", d(cfg.lr)},
      {"min_lr", d(cfg.min_lr)},
      {"warmup_epochs", i(cfg.warmup_epochs)},
      {"epochs", i(cfg.epochs)},
      {"batch_size", i(cfg.batch_size)},
      {"weight_decay", d(cfg.weight_decay)},
      {"label_smoothing", d(cfg.label_smoothing)},
      {"momentum", d(cfg.momentum)},
      {"seed", [&](const ConfigEntry& e) { cfg.seed = config_uint(e, origin); }},
  };
  dispatch(section, origin, handlers);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& ex) {
    fail(origin, section.line, ex.what());
  }
  return cfg;
}

std::string fusion_config_text(const FusionConfig& cfg, const std::string& section_name) {
  std::ostringstream os;
  os.precision(17);
  os << '[' << section_name << "]\n";
  os << "variant = " << to_string(cfg.variant) << '\n';
  if (!cfg.widths.empty()) {
    os << "widths = ";
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) os << (i ? "," : "") << cfg.widths[i];
    os << '\n';
  }
  os << "score = " << to_string(cfg.score_kind) << '\n';
  os << "boundary = " << to_string(cfg.boundary) << '\n';
  os << "match_cost = " << to_string(cfg.match_cost) << '\n';
  os << "local_search_rounds = " << cfg.local_search_rounds << '\n';
  os << "normalize_activations = " << (cfg.normalize_activations ? "true" : "false") << '\n';
  os << "normalize_scores = " << (cfg.normalize_scores ? "true" : "false") << '\n';
  os << "head_weights = " << (cfg.head_weights ? "true" : "false") << '\n';
  os << "rcond = " << cfg.rcond << '\n';
  os << "seed = " << cfg.seed << '\n';
  os << "kmeans.seed = " << cfg.kmeans.seed << '\n';
  os << "kmeans.max_iters = " << cfg.kmeans.max_iters << '\n';
  os << "kmeans.tol = " << cfg.kmeans.tol << '\n';
  os << "kmeans.restarts = " << cfg.kmeans.restarts << '\n';
  const auto& g = cfg.gradient;
  os << "gradient.optimizer = " << to_string(g.optimizer) << '\n';
  os << "gradient.lr = " << g.lr << '\n';
  os << "gradient.epochs = " << g.epochs << '\n';
  os << "gradient.last_optimizer = " << to_string(g.last_optimizer) << '\n';
  os << "gradient.last_lr = " << g.last_lr << '\n';
  os << "gradient.last_epochs = " << g.last_epochs << '\n';
  os << "gradient.weight_decay = " << g.weight_decay << '\n';
  os << "gradient.perturbation = " << g.perturbation << '\n';
  os << "gradient.batch_size = " << g.batch_size << '\n';
  os << "gradient.val_split = " << g.val_split << '\n';
  os << "gradient.patience = " << g.patience << '\n';
  return os.str();
}

std::string train_config_text(const TrainConfig& cfg, const std::string& section_name) {
  std::ostringstream os;
  os.precision(17);
  os << '[' << section_name << "]\n";
  os << "optimizer = " << to_string(cfg.optimizer) << '\n';
  os << "lr = " << cfg.lr << '\n';
  os << "min_lr = " << cfg.min_lr << '\n';
  os << "warmup_epochs = " << cfg.warmup_epochs << '\n';
  os << "epochs = " << cfg.epochs << '\n';
  os << "batch_size = " << cfg.batch_size << '\n';
  os << "weight_decay = " << cfg.weight_decay << '\n';
  os << "label_smoothing = " << cfg.label_smoothing << '\n';
  os << "momentum = " << cfg.momentum << '\n';
  os << "seed = " << cfg.seed << '\n';
  return os.str();
}

}  // namespace nimf
