#pragma once

// Plain-text configuration: `[section]` headers followed by `key = value`
// lines; `#` starts a comment. Every typed reader rejects keys it does not
// know, so a misspelt option is an error rather than a silent default.

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nimf/fusion.hpp"
#include "nimf/training.hpp"

namespace nimf {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

struct ConfigSection {
  std::string name;
  int line = 0;
  std::vector<ConfigEntry> entries;

  const ConfigEntry* find(const std::string& key) const;
};

class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse(const std::string& text, const std::string& origin = "<string>");
  static ConfigFile load(const std::filesystem::path& path);

  const std::vector<ConfigSection>& sections() const { return sections_; }
  const ConfigSection* section(const std::string& name) const;
  /// Sections whose name starts with `prefix` (e.g. "fusion:").
  std::vector<const ConfigSection*> sections_with_prefix(const std::string& prefix) const;
  const std::string& origin() const { return origin_; }
  /// Directory of the file, for resolving relative paths; empty for strings.
  const std::filesystem::path& base_dir() const { return base_dir_; }

  /// Throws unless every section name is in `allowed` or starts with one of
  /// `allowed_prefixes`.
  void require_sections(const std::vector<std::string>& allowed,
                        const std::vector<std::string>& allowed_prefixes = {}) const;

 private:
  std::string origin_;
  std::filesystem::path base_dir_;
  std::vector<ConfigSection> sections_;
};

// --- Scalar conversions (throw ConfigError naming origin, line and key) ----------

double config_double(const ConfigEntry& e, const std::string& origin);
long long config_int(const ConfigEntry& e, const std::string& origin);
std::uint64_t config_uint(const ConfigEntry& e, const std::string& origin);
bool config_bool(const ConfigEntry& e, const std::string& origin);
std::vector<Eigen::Index> config_index_list(const ConfigEntry& e, const std::string& origin);
std::vector<std::uint64_t> config_uint_list(const ConfigEntry& e, const std::string& origin);

/// Keys: variant, widths, score, boundary, match_cost, local_search_rounds,
/// normalize_activations, normalize_scores, head_weights, rcond, seed,
/// kmeans.{seed,max_iters,tol,restarts},
/// gradient.{preset,optimizer,lr,epochs,last_optimizer,last_lr,last_epochs,
/// weight_decay,perturbation,batch_size,val_split,patience}.
/// gradient.preset (setting1 | setting2) is applied before the other keys and
/// also switches head_weights on.
FusionConfig parse_fusion_config(const ConfigSection& section, const std::string& origin);

/// Keys: optimizer, lr, min_lr, warmup_epochs, epochs, batch_size,
/// weight_decay, label_smoothing, momentum, seed.
TrainConfig parse_train_config(const ConfigSection& section, const std::string& origin);

/// Canonical text form of a fusion config, readable by parse_fusion_config.
std::string fusion_config_text(const FusionConfig& cfg, const std::string& section_name = "fusion");
std::string train_config_text(const TrainConfig& cfg, const std::string& section_name = "train");

}  // namespace nimf
