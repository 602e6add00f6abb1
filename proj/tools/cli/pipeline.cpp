#include "pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace nimf::cli {

namespace {

[[noreturn]] void fail(const std::string& origin, int line, const std::string& what) {
  throw ConfigError(origin + ":" + std::to_string(line) + ": " + what);
}

using Handler = std::function<void(const ConfigEntry&)>;

void dispatch(const ConfigSection& s, const std::string& origin, const std::map<std::string, Handler>& handlers) {
  for (const auto& e : s.entries) {
    const auto it = handlers.find(e.key);
    if (it == handlers.end()) fail(origin, e.line, "unknown key '" + e.key + "' in section [" + s.name + "]");
    try {
      it->second(e);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& ex) {
      fail(origin, e.line, ex.what());
    }
  }
}

int to_int(const ConfigEntry& e, const std::string& origin) { return static_cast<int>(config_int(e, origin)); }

std::filesystem::path relative_to(const std::filesystem::path& base, const std::string& value) {
  std::filesystem::path p(value);
  return p.is_absolute() || base.empty() ? p : base / p;
}

}  // namespace

void check_known_sections(const ConfigFile& file) {
  file.require_sections({"experiment", "dataset", "split", "model", "train", "kd", "fusion"}, {"fusion:"});
}

DatasetSpec parse_dataset_spec(const ConfigFile& file) {
  DatasetSpec spec;
  const auto* s = file.section("dataset");
  if (s == nullptr) throw ConfigError(file.origin() + ": missing [dataset] section");
  const auto& o = file.origin();
  const auto& base = file.base_dir();
  dispatch(*s, o,
           {{"kind",
             [&](const ConfigEntry& e) {
               if (e.value != "blobs" && e.value != "idx") throw ConfigError("dataset kind must be blobs or idx");
               spec.kind = e.value;
             }},
            {"classes", [&](const ConfigEntry& e) { spec.classes = to_int(e, o); }},
            {"dim", [&](const ConfigEntry& e) { spec.dim = to_int(e, o); }},
            {"per_class", [&](const ConfigEntry& e) { spec.per_class = to_int(e, o); }},
            {"test_per_class", [&](const ConfigEntry& e) { spec.test_per_class = to_int(e, o); }},
            {"spread", [&](const ConfigEntry& e) { spec.spread = config_double(e, o); }},
            {"seed", [&](const ConfigEntry& e) { spec.seed = config_uint(e, o); }},
            {"train_images", [&](const ConfigEntry& e) { spec.train_images = relative_to(base, e.value); }},
            {"train_labels", [&](const ConfigEntry& e) { spec.train_labels = relative_to(base, e.value); }},
            {"test_images", [&](const ConfigEntry& e) { spec.test_images = relative_to(base, e.value); }},
            {"test_labels", [&](const ConfigEntry& e) { spec.test_labels = relative_to(base, e.value); }}});
  if (spec.kind == "idx" && (spec.train_images.empty() || spec.train_labels.empty() || spec.test_images.empty() ||
                             spec.test_labels.empty())) {
    fail(o, s->line, "idx datasets need train_images, train_labels, test_images and test_labels");
  }
  if (spec.kind == "blobs" && (spec.classes < 1 || spec.dim < 1 || spec.per_class < 1 || spec.test_per_class < 1)) {
    fail(o, s->line, "blob dataset sizes must be positive");
  }
  return spec;
}

DataPair load_data(const DatasetSpec& spec) {
  if (spec.kind == "idx") {
    DataPair d{load_idx(spec.train_images, spec.train_labels), load_idx(spec.test_images, spec.test_labels)};
    d.test.num_classes = d.train.num_classes = std::max(d.train.num_classes, d.test.num_classes);
    return d;
  }
  const Dataset all =
      synthetic_blobs(spec.classes, spec.dim, spec.per_class + spec.test_per_class, spec.spread, spec.seed);
  std::vector<std::size_t> train_idx, test_idx;
  std::vector<int> taken(static_cast<std::size_t>(spec.classes), 0);
  for (std::size_t i = 0; i < all.labels.size(); ++i) {
    auto& t = taken[static_cast<std::size_t>(all.labels[i])];
    if (t < spec.test_per_class) {
      ++t;
      test_idx.push_back(i);
    } else {
      train_idx.push_back(i);
    }
  }
  return {all.subset(train_idx), all.subset(test_idx)};
}

ModelSpecConfig parse_model_spec(const ConfigFile& file) {
  ModelSpecConfig spec;
  if (const auto* s = file.section("model")) {
    const auto& o = file.origin();
    dispatch(*s, o,
             {{"hidden", [&](const ConfigEntry& e) { spec.hidden = config_index_list(e, o); }},
              {"activation", [&](const ConfigEntry& e) {
                 if (e.value == "relu") {
                   spec.activation = Activation::relu;
                 } else if (e.value == "identity") {
                   spec.activation = Activation::identity;
                 } else {
                   throw ConfigError("activation must be relu or identity");
                 }
               }}});
  }
  return spec;
}

SplitSpec parse_split_spec(const ConfigFile& file) {
  SplitSpec spec;
  if (const auto* s = file.section("split")) {
    const auto& o = file.origin();
    dispatch(*s, o,
             {{"regime",
               [&](const ConfigEntry& e) {
                 if (e.value == "dirichlet") {
                   spec.regime = SplitRegime::dirichlet;
                 } else if (e.value == "sharded") {
                   spec.regime = SplitRegime::sharded;
                 } else {
                   throw ConfigError("split regime must be dirichlet or sharded");
                 }
               }},
              {"models", [&](const ConfigEntry& e) { spec.models = to_int(e, o); }},
              {"alpha_min", [&](const ConfigEntry& e) { spec.alpha_min = config_double(e, o); }},
              {"ratio", [&](const ConfigEntry& e) { spec.ratio = config_double(e, o); }}});
  }
  return spec;
}

SplitPlan make_split(const SplitSpec& spec, const Dataset& train, std::uint64_t seed) {
  if (spec.regime == SplitRegime::sharded) return sharded_split(train.labels, train.num_classes, spec.models, seed);
  return dirichlet_split(train.labels, spec.models, spec.alpha_min, spec.ratio, seed);
}

RunManifest parse_manifest(const ConfigFile& file) {
  check_known_sections(file);
  RunManifest m;
  const auto& o = file.origin();
  if (const auto* s = file.section("experiment")) {
    dispatch(*s, o,
             {{"name", [&](const ConfigEntry& e) { m.name = e.value; }},
              {"seeds", [&](const ConfigEntry& e) { m.seeds = config_uint_list(e, o); }},
              {"output_dir", [&](const ConfigEntry& e) { m.output_dir = e.value; }},
              {"fusion_samples", [&](const ConfigEntry& e) { m.fusion_samples = to_int(e, o); }},
              {"fusion_source", [&](const ConfigEntry& e) { m.fusion_source = to_int(e, o); }},
              {"conductance_steps", [&](const ConfigEntry& e) { m.conductance_steps = to_int(e, o); }},
              {"interpolation_points", [&](const ConfigEntry& e) { m.interpolation_points = to_int(e, o); }}});
    if (m.seeds.empty()) fail(o, s->line, "seeds must not be empty");
    if (m.fusion_samples < 1) fail(o, s->line, "fusion_samples must be >= 1");
  }
  m.dataset = parse_dataset_spec(file);
  m.split = parse_split_spec(file);
  m.model = parse_model_spec(file);
  if (const auto* s = file.section("train")) m.train = parse_train_config(*s, o);
  if (const auto* s = file.section("kd")) {
    dispatch(*s, o,
             {{"epochs", [&](const ConfigEntry& e) { m.kd.epochs = to_int(e, o); }},
              {"lr", [&](const ConfigEntry& e) { m.kd.lr = config_double(e, o); }},
              {"batch_size", [&](const ConfigEntry& e) { m.kd.batch_size = to_int(e, o); }}});
  }
  for (const auto* s : file.sections_with_prefix("fusion:")) {
    m.fusions.push_back({s->name.substr(std::string("fusion:").size()), parse_fusion_config(*s, o)});
  }
  if (m.fusion_source < 0 || m.fusion_source >= m.split.models) {
    throw ConfigError(o + ": fusion_source must name one of the split's models");
  }
  return m;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<std::size_t> fusion_batch(std::span<const std::size_t> pool, int count, std::uint64_t seed) {
  std::vector<std::size_t> idx(pool.begin(), pool.end());
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  if (static_cast<std::size_t>(count) < idx.size()) idx.resize(static_cast<std::size_t>(count));
  return idx;
}

std::vector<ImportanceVector> compute_scores(const Model& model, const Partition& partition, ScoreKind kind,
                                             const Dataset& batch, int model_id, int conductance_steps) {
  return score_levels(model, partition, kind, batch.features, batch.labels, model_id, conductance_steps);
}

std::vector<std::vector<ImportanceVector>> scores_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("model_id,level,neuron,score", 0) != 0) {
    throw std::runtime_error("score CSV: missing header model_id,level,neuron,score");
  }
  std::map<int, std::map<std::size_t, std::vector<std::pair<long, double>>>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b, c, d;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c, ',') || !std::getline(ls, d)) {
      throw std::runtime_error("score CSV: malformed line " + std::to_string(lineno));
    }
    rows[std::stoi(a)][std::stoul(b)].emplace_back(std::stol(c), std::stod(d));
  }
  std::vector<std::vector<ImportanceVector>> out;
  int expected_model = 0;
  for (auto& [model_id, levels] : rows) {
    if (model_id != expected_model++) throw std::runtime_error("score CSV: model ids must be 0..n-1");
    std::vector<ImportanceVector> per_level;
    std::size_t expected_level = 0;
    for (auto& [level, entries] : levels) {
      if (level != expected_level++) throw std::runtime_error("score CSV: levels must be 0..L-1");
      std::sort(entries.begin(), entries.end());
      Vector v(static_cast<Eigen::Index>(entries.size()));
      for (std::size_t j = 0; j < entries.size(); ++j) {
        if (entries[j].first != static_cast<long>(j)) throw std::runtime_error("score CSV: neuron indices not dense");
        v(static_cast<Eigen::Index>(j)) = entries[j].second;
      }
      per_level.emplace_back(level, model_id, std::move(v));
    }
    out.push_back(std::move(per_level));
  }
  return out;
}

Partition partition_for(const Model& model, Boundary boundary) {
  return boundary == Boundary::preactivation ? preactivation_partition(model) : postactivation_partition(model);
}

std::filesystem::path output_root(const std::filesystem::path& fallback) {
  if (const char* env = std::getenv("NIMF_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return fallback;
}

std::filesystem::path resolve_output(const std::filesystem::path& path) {
  if (path.is_absolute()) return path;
  if (const char* env = std::getenv("NIMF_OUT_DIR"); env != nullptr && *env != '\0') {
    return std::filesystem::path(env) / path;
  }
  return path;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

SeedArtifacts run_seed(const RunManifest& manifest, const DataPair& data, std::uint64_t seed,
                       const std::filesystem::path& dir) {
  const bool write = !dir.empty();
  SeedArtifacts art;
  art.result.seed = seed;

  const SplitPlan plan = make_split(manifest.split, data.train, derive_seed(seed, 1));
  check_split(plan, static_cast<std::size_t>(data.train.size()), manifest.split.regime == SplitRegime::dirichlet);
  if (write) write_text(dir / "split.json", split_to_json(plan));

  std::vector<std::vector<std::size_t>> class_counts;
  for (std::size_t m = 0; m < plan.model_count(); ++m) {
    const Dataset part = data.train.subset(plan.indices[m]);
    TrainConfig tc = manifest.train;
    tc.seed = derive_seed(seed + manifest.train.seed, 200 + m);
    Model init = make_mlp(data.train.dim(), manifest.model.hidden, data.train.num_classes, derive_seed(seed, 100 + m),
                          manifest.model.activation);
    TrainResult tr = train(std::move(init), part, tc);
    auto counts = part.class_counts();
    counts.resize(static_cast<std::size_t>(data.train.num_classes), 0);
    class_counts.push_back(std::move(counts));
    if (write) {
      save_model(dir / ("base_" + std::to_string(m) + ".nimf"), tr.model, preactivation_partition(tr.model));
      write_text(dir / ("train_log_" + std::to_string(m) + ".csv"), training_log_csv(tr.log));
    }
    art.result.bases.push_back(evaluate(tr.model, data.test));
    art.bases.push_back(std::move(tr.model));
  }

  const auto source = static_cast<std::size_t>(manifest.fusion_source);
  const auto batch_idx = fusion_batch(plan.indices.at(source), manifest.fusion_samples, derive_seed(seed, 2));
  const Dataset batch = data.train.subset(batch_idx);

  // Baselines.
  art.result.methods.push_back({"vanilla", evaluate(vanilla_average(art.bases), data.test)});
  art.result.methods.push_back({"ensemble", evaluate_ensemble(art.bases, data.test)});
  std::size_t best = 0;
  double best_acc = -1.0;
  for (std::size_t m = 0; m < art.bases.size(); ++m) {
    const double acc = evaluate(art.bases[m], data.train).accuracy;
    if (acc > best_acc) {
      best_acc = acc;
      best = m;
    }
  }
  KdSettings kd = manifest.kd;
  kd.seed = derive_seed(seed, 3);
  const Model student = last_layer_kd(art.bases, art.bases[best], batch.features, kd);
  art.result.methods.push_back({"KD", evaluate(student, data.test)});

  std::map<std::pair<ScoreKind, Boundary>, std::vector<std::vector<ImportanceVector>>> score_cache;
  for (const auto& nf : manifest.fusions) {
    FusionConfig cfg = nf.config;
    cfg.seed = derive_seed(seed + cfg.seed, 4);
    cfg.kmeans.seed = derive_seed(seed + cfg.kmeans.seed, 5);
    const auto key = std::make_pair(cfg.score_kind, cfg.boundary);
    auto& scores = score_cache[key];
    if (scores.empty()) {
      for (std::size_t m = 0; m < art.bases.size(); ++m) {
        scores.push_back(compute_scores(art.bases[m], partition_for(art.bases[m], cfg.boundary), cfg.score_kind, batch,
                                        static_cast<int>(m), manifest.conductance_steps));
      }
      if (write) {
        std::vector<ImportanceVector> flat;
        for (const auto& s : scores) flat.insert(flat.end(), s.begin(), s.end());
        write_text(dir / (std::string("scores_") + to_string(cfg.score_kind) + "_" + to_string(cfg.boundary) + ".csv"),
                   scores_to_csv(flat));
      }
    }
    std::vector<BaseModel> bases;
    for (std::size_t m = 0; m < art.bases.size(); ++m) {
      bases.push_back({art.bases[m], partition_for(art.bases[m], cfg.boundary), scores[m], class_counts[m]});
    }
    try {
      FusionResult fr = fuse(bases, batch.features, cfg);
      fr.report.heldout = evaluate(fr.model, data.test);
      art.result.methods.push_back({nf.name, fr.report.heldout});
      if (write) {
        save_model(dir / ("fused_" + nf.name + ".nimf"), fr.model, fr.partition);
        write_text(dir / ("fusion_" + nf.name + ".json"), fr.report.to_json());
        for (std::size_t m = 0; m < art.bases.size() && manifest.interpolation_points >= 2; ++m) {
          if (!same_architecture(fr.model, art.bases[m])) continue;
          write_text(dir / ("interpolation_" + nf.name + "_base" + std::to_string(m) + ".csv"),
                     curve_to_csv(interpolation_curve(fr.model, art.bases[m], data.test,
                                                      manifest.interpolation_points)));
        }
      }
      art.fusion_reports.emplace_back(nf.name, std::move(fr.report));
    } catch (const FusionError& e) {
      if (std::string(e.what()).find("N/A") == std::string::npos) throw;
      art.result.methods.push_back({nf.name, std::nullopt});
    }
  }

  for (std::size_t i = 0; write && manifest.interpolation_points >= 2 && i < art.bases.size(); ++i) {
    for (std::size_t j = i + 1; j < art.bases.size(); ++j) {
      write_text(dir / ("interpolation_base" + std::to_string(i) + "_base" + std::to_string(j) + ".csv"),
                 curve_to_csv(interpolation_curve(art.bases[i], art.bases[j], data.test,
                                                  manifest.interpolation_points)));
    }
  }
  if (write) write_text(dir / "results.json", seed_result_to_json(art.result));
  return art;
}

ComparisonReport run_experiment(const RunManifest& manifest, const std::string& manifest_text,
                                const std::filesystem::path& dir) {
  const DataPair data = load_data(manifest.dataset);
  if (!dir.empty()) write_text(dir / "manifest.cfg", manifest_text);
  std::vector<SeedResult> results;
  for (std::uint64_t seed : manifest.seeds) {
    const auto seed_dir = dir.empty() ? dir : dir / ("seed_" + std::to_string(seed));
    results.push_back(run_seed(manifest, data, seed, seed_dir).result);
  }
  ComparisonReport report = comparison_report(manifest.name, results);
  if (!dir.empty()) {
    write_text(dir / "report.json", report.to_json());
    write_text(dir / "report.txt", report.to_text());
  }
  return report;
}

}  // namespace nimf::cli
