#include <algorithm>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pipeline.hpp"

namespace fs = std::filesystem;
using namespace nimf;
using namespace nimf::cli;

namespace {

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

struct DataArgs {
  std::string data;    // config file holding a [dataset] section
  std::string config;  // config file with [model]/[train]/[fusion] sections
  std::string split;
  int index = -1;

  const std::string& data_file() const { return data.empty() ? config : data; }
};

void add_data_args(CLI::App* cmd, DataArgs& a, bool with_config) {
  cmd->add_option("--data", a.data, "Config file with a [dataset] section (defaults to --config)");
  if (with_config) cmd->add_option("--config", a.config, "Config file with model/train/fusion sections");
}

ConfigFile load_config(const std::string& path) {
  ConfigFile f = ConfigFile::load(path);
  check_known_sections(f);
  return f;
}

DataPair load_pair(const DataArgs& a) {
  if (a.data_file().empty()) throw std::runtime_error("no dataset given (use --data)");
  return load_data(parse_dataset_spec(load_config(a.data_file())));
}

SplitPlan load_split(const std::string& path, const Dataset& train) {
  SplitPlan plan = split_from_json(read_text(path));
  check_split(plan, static_cast<std::size_t>(train.size()), false);
  return plan;
}

std::vector<std::size_t> all_indices(const Dataset& d) {
  std::vector<std::size_t> idx(static_cast<std::size_t>(d.size()));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

int cmd_split(const DataArgs& a, const std::string& regime, int models, double alpha_min, double ratio,
              std::uint64_t seed, const std::string& out) {
  const DataPair data = load_pair(a);
  SplitSpec spec;
  spec.regime = regime == "sharded" ? SplitRegime::sharded : SplitRegime::dirichlet;
  spec.models = models;
  spec.alpha_min = alpha_min;
  spec.ratio = ratio;
  const SplitPlan plan = make_split(spec, data.train, seed);
  check_split(plan, static_cast<std::size_t>(data.train.size()), spec.regime == SplitRegime::dirichlet);
  write_text(resolve_output(out), split_to_json(plan));
  return 0;
}

int cmd_train(const DataArgs& a, std::uint64_t seed, const std::string& out, const std::string& log) {
  const DataPair data = load_pair(a);
  ModelSpecConfig spec;
  TrainConfig tc;
  if (!a.config.empty()) {
    const ConfigFile f = load_config(a.config);
    spec = parse_model_spec(f);
    if (const auto* s = f.section("train")) tc = parse_train_config(*s, f.origin());
  }
  tc.seed = seed;
  Dataset part = data.train;
  if (!a.split.empty()) {
    const SplitPlan plan = load_split(a.split, data.train);
    if (a.index < 0 || static_cast<std::size_t>(a.index) >= plan.model_count()) {
      throw std::runtime_error("--index must select one of the split's " + std::to_string(plan.model_count()) +
                               " models");
    }
    part = data.train.subset(plan.indices[static_cast<std::size_t>(a.index)]);
  }
  Model init = make_mlp(data.train.dim(), spec.hidden, data.train.num_classes, seed, spec.activation);
  const TrainResult tr = train(std::move(init), part, tc);
  save_model(resolve_output(out), tr.model, preactivation_partition(tr.model));
  if (!log.empty()) write_text(resolve_output(log), training_log_csv(tr.log));
  const Evaluation e = evaluate(tr.model, data.test);
  std::cout << nlohmann::json{{"test_accuracy", e.accuracy}, {"test_loss", e.loss}}.dump() << '\n';
  return 0;
}

Dataset fusion_data(const DataArgs& a, const DataPair& data, int samples, int source, std::uint64_t seed) {
  std::vector<std::size_t> pool = all_indices(data.train);
  if (!a.split.empty()) {
    const SplitPlan plan = load_split(a.split, data.train);
    pool = plan.indices.at(static_cast<std::size_t>(source));
  }
  return data.train.subset(fusion_batch(pool, samples, seed));
}

int cmd_scores(const DataArgs& a, const std::vector<std::string>& models, const std::string& kind,
               const std::string& boundary, int samples, int source, std::uint64_t seed, int steps,
               const std::string& out) {
  const DataPair data = load_pair(a);
  const Dataset batch = fusion_data(a, data, samples, source, seed);
  std::vector<ImportanceVector> all;
  for (std::size_t m = 0; m < models.size(); ++m) {
    const StoredModel sm = load_model(models[m]);
    const auto s = compute_scores(sm.model, partition_for(sm.model, parse_boundary(boundary)), parse_score_kind(kind),
                                  batch, static_cast<int>(m), steps);
    all.insert(all.end(), s.begin(), s.end());
  }
  write_text(resolve_output(out), scores_to_csv(all));
  return 0;
}

int cmd_fuse(const DataArgs& a, const std::vector<std::string>& models, const std::string& section, int samples,
             int source, std::uint64_t seed, const std::string& scores_path, const std::string& out,
             const std::string& report_path) {
  const DataPair data = load_pair(a);
  if (a.config.empty()) throw std::runtime_error("fuse needs --config with a fusion section");
  const ConfigFile f = load_config(a.config);
  const auto* s = f.section(section);
  if (s == nullptr) throw std::runtime_error(a.config + ": missing [" + section + "] section");
  const FusionConfig cfg = parse_fusion_config(*s, f.origin());
  const Dataset batch = fusion_data(a, data, samples, source, seed);

  std::vector<std::vector<ImportanceVector>> scores;
  if (!scores_path.empty()) {
    scores = scores_from_csv(read_text(scores_path));
    if (scores.size() != models.size()) throw std::runtime_error("score file covers a different number of models");
  }
  std::vector<std::vector<std::size_t>> counts(models.size());
  if (!a.split.empty()) {
    const SplitPlan plan = load_split(a.split, data.train);
    if (plan.model_count() != models.size()) throw std::runtime_error("split and model count disagree");
    for (std::size_t m = 0; m < models.size(); ++m) counts[m] = data.train.subset(plan.indices[m]).class_counts();
  } else {
    std::fill(counts.begin(), counts.end(), data.train.class_counts());
  }

  std::vector<BaseModel> bases;
  for (std::size_t m = 0; m < models.size(); ++m) {
    StoredModel sm = load_model(models[m]);
    const Partition p = partition_for(sm.model, cfg.boundary);
    auto sc = scores.empty() ? compute_scores(sm.model, p, cfg.score_kind, batch, static_cast<int>(m), 64) : scores[m];
    counts[m].resize(static_cast<std::size_t>(sm.model.output_dim()), 0);
    bases.push_back({std::move(sm.model), p, std::move(sc), counts[m]});
  }
  FusionResult fr = fuse(bases, batch.features, cfg);
  fr.report.heldout = evaluate(fr.model, data.test);
  save_model(resolve_output(out), fr.model, fr.partition);
  const std::string json = fr.report.to_json();
  if (!report_path.empty()) write_text(resolve_output(report_path), json);
  std::cout << json << '\n';
  return 0;
}

int cmd_eval(const DataArgs& a, const std::vector<std::string>& models, bool ensemble, const std::string& other,
             int points, const std::string& csv) {
  const DataPair data = load_pair(a);
  std::vector<Model> loaded;
  for (const auto& p : models) loaded.push_back(load_model(p).model);
  nlohmann::json j = nlohmann::json::array();
  if (ensemble) {
    const Evaluation e = evaluate_ensemble(loaded, data.test);
    j.push_back({{"model", "ensemble"}, {"accuracy", e.accuracy}, {"loss", e.loss}});
  } else {
    for (std::size_t m = 0; m < loaded.size(); ++m) {
      const Evaluation e = evaluate(loaded[m], data.test);
      j.push_back({{"model", models[m]}, {"accuracy", e.accuracy}, {"loss", e.loss}});
    }
  }
  if (!other.empty()) {
    if (loaded.size() != 1) throw std::runtime_error("--interpolate needs exactly one --model");
    const InterpolationCurve c = interpolation_curve(loaded.front(), load_model(other).model, data.test, points);
    const std::string text = curve_to_csv(c);
    if (csv.empty()) {
      std::cout << text;
    } else {
      write_text(resolve_output(csv), text);
    }
  }
  std::cout << j.dump(2) << '\n';
  return 0;
}

int cmd_report(const std::vector<std::string>& results, const std::string& name, const std::string& out_json,
               const std::string& out_text) {
  std::vector<SeedResult> seeds;
  for (const auto& r : results) {
    fs::path p(r);
    if (fs::is_directory(p)) p /= "results.json";
    seeds.push_back(seed_result_from_json(read_text(p)));
  }
  const ComparisonReport report = comparison_report(name, seeds);
  if (!out_json.empty()) write_text(resolve_output(out_json), report.to_json());
  if (!out_text.empty()) write_text(resolve_output(out_text), report.to_text());
  std::cout << report.to_text();
  return 0;
}

int cmd_experiment(const std::string& manifest_path, const std::string& out) {
  const std::string text = read_text(manifest_path);
  const ConfigFile f = ConfigFile::load(manifest_path);
  const RunManifest m = parse_manifest(f);
  const fs::path root = out.empty() ? output_root(m.output_dir) : resolve_output(out);
  const fs::path dir = root / m.name;
  const ComparisonReport report = run_experiment(m, text, dir);
  std::cout << report.to_text() << "written to " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nimf: neuron-interpolation fusion of multilayer perceptrons"};
  app.require_subcommand(1);

  DataArgs da;
  std::uint64_t seed = 0;
  std::string out, log, report, csv, kind = "uniform", boundary = "preactivation", section = "fusion";
  std::string regime = "dirichlet", scores_path, other, name = "report", text_out, manifest;
  int models_n = 2, samples = 400, source = 0, steps = 64, points = 11;
  double alpha_min = 1.0, ratio = 0.2;
  bool ensemble = false;
  std::vector<std::string> models, results;

  auto* split = app.add_subcommand("split", "Partition the training set across models");
  add_data_args(split, da, false);
  split->add_option("--regime", regime, "dirichlet | sharded")->check(CLI::IsMember({"dirichlet", "sharded"}));
  split->add_option("--models", models_n, "Number of models")->check(CLI::PositiveNumber);
  split->add_option("--alpha-min", alpha_min, "Smallest Dirichlet concentration");
  split->add_option("--ratio", ratio, "alpha_min / alpha_max");
  split->add_option("--seed", seed);
  split->add_option("--out", out, "Split plan JSON")->required();

  auto* trn = app.add_subcommand("train", "Train one base model");
  add_data_args(trn, da, true);
  trn->add_option("--split", da.split, "Split plan JSON");
  trn->add_option("--index", da.index, "Model index within the split");
  trn->add_option("--seed", seed);
  trn->add_option("--out", out, "Model file (.nimf)")->required();
  trn->add_option("--log", log, "Training log CSV");

  auto* sc = app.add_subcommand("scores", "Per-neuron importance scores on the fusion batch");
  add_data_args(sc, da, false);
  sc->add_option("--model", models, "Model file; repeat for several models")->required();
  sc->add_option("--kind", kind, "uniform | conductance | deeplift")
      ->check(CLI::IsMember({"uniform", "conductance", "deeplift"}));
  sc->add_option("--boundary", boundary, "preactivation | postactivation")
      ->check(CLI::IsMember({"preactivation", "postactivation"}));
  sc->add_option("--split", da.split, "Split plan JSON; the batch comes from --source's data");
  sc->add_option("--samples", samples, "Fusion batch size")->check(CLI::PositiveNumber);
  sc->add_option("--source", source, "Model whose training data provides the batch");
  sc->add_option("--seed", seed);
  sc->add_option("--steps", steps, "Conductance Riemann steps");
  sc->add_option("--out", out, "Score CSV")->required();

  auto* fu = app.add_subcommand("fuse", "Fuse base models");
  add_data_args(fu, da, true);
  fu->add_option("--model", models, "Base model file; repeat for each model")->required();
  fu->add_option("--section", section, "Config section holding the fusion settings");
  fu->add_option("--split", da.split, "Split plan JSON (fusion batch source and class counts)");
  fu->add_option("--samples", samples, "Fusion batch size")->check(CLI::PositiveNumber);
  fu->add_option("--source", source, "Model whose training data provides the batch");
  fu->add_option("--seed", seed, "Seed of the fusion batch draw");
  fu->add_option("--scores", scores_path, "Score CSV; computed from the config when absent");
  fu->add_option("--out", out, "Fused model file")->required();
  fu->add_option("--report", report, "Fusion report JSON");

  auto* ev = app.add_subcommand("eval", "Evaluate models on the test set");
  add_data_args(ev, da, false);
  ev->add_option("--model", models, "Model file; repeat for several")->required();
  ev->add_flag("--ensemble", ensemble, "Evaluate the softmax ensemble of the models");
  ev->add_option("--interpolate", other, "Second model for a weight-interpolation curve");
  ev->add_option("--points", points, "Interpolation grid size")->check(CLI::Range(2, 100000));
  ev->add_option("--csv", csv, "Interpolation CSV output");

  auto* rp = app.add_subcommand("report", "Aggregate per-seed results into a comparison table");
  rp->add_option("results", results, "results.json files or seed directories")->required();
  rp->add_option("--name", name);
  rp->add_option("--json", report, "Report JSON output");
  rp->add_option("--text", text_out, "Report text output");

  auto* ex = app.add_subcommand("experiment", "Run split, train, scores, fuse, eval and report");
  ex->add_option("manifest", manifest, "Experiment manifest")->required()->check(CLI::ExistingFile);
  ex->add_option("--out", out, "Output root (default: $NIMF_OUT_DIR or the manifest's output_dir)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "nimf: error: " << one_line(e.what()) << '\n';
    return e.get_exit_code() == 0 ? 2 : e.get_exit_code();
  }

  try {
    if (*split) return cmd_split(da, regime, models_n, alpha_min, ratio, seed, out);
    if (*trn) return cmd_train(da, seed, out, log);
    if (*sc) return cmd_scores(da, models, kind, boundary, samples, source, seed, steps, out);
    if (*fu) return cmd_fuse(da, models, section, samples, source, seed, scores_path, out, report);
    if (*ev) return cmd_eval(da, models, ensemble, other, points, csv);
    if (*rp) return cmd_report(results, name, report, text_out);
    if (*ex) return cmd_experiment(manifest, out);
  } catch (const std::exception& e) {
    std::cerr << "nimf: error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 1;
}
