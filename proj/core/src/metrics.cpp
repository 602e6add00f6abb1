#include "nimf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"
#include "nimf/fusion.hpp"

namespace nimf {

InterpolationCurve interpolation_curve(const Model& a, const Model& b, const Dataset& data, int points) {
  if (points < 2) throw std::invalid_argument("interpolation_curve: points must be >= 2");
  if (!same_architecture(a, b)) throw std::invalid_argument("interpolation_curve: architecture mismatch");
  InterpolationCurve c;
  for (int t = 0; t < points; ++t) {
    const double lambda = static_cast<double>(t) / static_cast<double>(points - 1);
    Evaluation e;
    if (t == 0) {
      e = evaluate(a, data);
    } else if (t == points - 1) {
      e = evaluate(b, data);
    } else {
      e = evaluate(interpolate(a, b, lambda), data);
    }
    c.lambdas.push_back(lambda);
    c.loss.push_back(e.loss);
    c.accuracy.push_back(e.accuracy);
  }
  return c;
}

std::string curve_to_csv(const InterpolationCurve& curve) {
  std::ostringstream os;
  os.precision(17);
  os << "lambda,loss,accuracy\n";
  for (std::size_t i = 0; i < curve.lambdas.size(); ++i) {
    os << curve.lambdas[i] << ',' << curve.loss[i] << ',' << curve.accuracy[i] << '\n';
  }
  return os.str();
}

Evaluation evaluate_ensemble(std::span<const Model> models, const Dataset& data) {
  return evaluate_probabilities(ensemble_predict(models, data.features), data.labels);
}

std::pair<double, double> mean_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

const ReportRow* ComparisonReport::row(const std::string& method) const {
  for (const auto& r : rows) {
    if (r.method == method) return &r;
  }
  return nullptr;
}

ComparisonReport comparison_report(const std::string& name, std::span<const SeedResult> seeds) {
  if (seeds.empty()) throw std::invalid_argument("comparison_report: no seeds");
  ComparisonReport report;
  report.name = name;
  std::vector<std::string> order;
  std::map<std::string, ReportRow> rows;
  auto add = [&](const std::string& method, const std::optional<Evaluation>& e) {
    if (!rows.contains(method)) {
      order.push_back(method);
      rows[method].method = method;
    }
    auto& r = rows[method];
    if (e) {
      r.accuracy.push_back(e->accuracy);
      r.loss.push_back(e->loss);
    } else {
      r.applicable = false;
    }
  };
  for (const auto& s : seeds) {
    report.seeds.push_back(s.seed);
    std::vector<Evaluation> bases = s.bases;
    std::stable_sort(bases.begin(), bases.end(),
                     [](const Evaluation& x, const Evaluation& y) { return x.accuracy > y.accuracy; });
    for (std::size_t i = 0; i < bases.size(); ++i) add("base " + std::to_string(i + 1), bases[i]);
    for (const auto& m : s.methods) add(m.method, m.eval);
  }
  for (const auto& method : order) {
    ReportRow r = rows[method];
    if (r.applicable && r.accuracy.size() != seeds.size()) {
      throw std::invalid_argument("comparison_report: method '" + method + "' is missing for some seeds");
    }
    if (!r.applicable) {
      r.accuracy.clear();
      r.loss.clear();
    }
    std::tie(r.mean_accuracy, r.std_accuracy) = mean_std(r.accuracy);
    std::tie(r.mean_loss, r.std_loss) = mean_std(r.loss);
    report.rows.push_back(std::move(r));
  }
  return report;
}

std::string ComparisonReport::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["seeds"] = seeds;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row{{"method", r.method}, {"applicable", r.applicable}};
    if (r.applicable) {
      row["accuracy"] = r.accuracy;
      row["loss"] = r.loss;
      row["mean_accuracy"] = r.mean_accuracy;
      row["std_accuracy"] = r.std_accuracy;
      row["mean_loss"] = r.mean_loss;
      row["std_loss"] = r.std_loss;
    }
    j["rows"].push_back(std::move(row));
  }
  return j.dump(2);
}

std::string ComparisonReport::to_text() const {
  std::size_t width = std::string("method").size();
  for (const auto& r : rows) width = std::max(width, r.method.size());
  auto cell = [](double mean, double sd, double scale) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << mean * scale << " +- " << sd * scale;
    return os.str();
  };
  std::ostringstream os;
  os << name << " (" << seeds.size() << (seeds.size() == 1 ? " seed" : " seeds") << ")\n";
  os << std::left << std::setw(static_cast<int>(width)) << "method" << "  " << std::setw(18) << "accuracy (%)"
     << "  " << "loss\n";
  os << std::string(width + 2 + 18 + 2 + 16, '-') << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.method << "  ";
    if (r.applicable) {
      os << std::setw(18) << cell(r.mean_accuracy, r.std_accuracy, 100.0) << "  " << cell(r.mean_loss, r.std_loss, 1.0);
    } else {
      os << std::setw(18) << "N/A" << "  " << "N/A";
    }
    os << '\n';
  }
  return os.str();
}

std::string seed_result_to_json(const SeedResult& r) {
  nlohmann::json j;
  j["seed"] = r.seed;
  j["bases"] = nlohmann::json::array();
  for (const auto& b : r.bases) j["bases"].push_back({{"accuracy", b.accuracy}, {"loss", b.loss}});
  j["methods"] = nlohmann::json::array();
  for (const auto& m : r.methods) {
    nlohmann::json row{{"method", m.method}};
    if (m.eval) {
      row["accuracy"] = m.eval->accuracy;
      row["loss"] = m.eval->loss;
    } else {
      row["applicable"] = false;
    }
    j["methods"].push_back(std::move(row));
  }
  return j.dump(2);
}

SeedResult seed_result_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  SeedResult r;
  r.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& b : j.at("bases")) r.bases.push_back({b.at("accuracy").get<double>(), b.at("loss").get<double>()});
  for (const auto& m : j.at("methods")) {
    MethodResult mr{m.at("method").get<std::string>(), std::nullopt};
    if (m.contains("accuracy")) mr.eval = Evaluation{m.at("accuracy").get<double>(), m.at("loss").get<double>()};
    r.methods.push_back(std::move(mr));
  }
  return r;
}

}  // namespace nimf
