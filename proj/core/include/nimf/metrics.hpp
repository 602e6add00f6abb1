#pragma once

// Weight-space interpolation curves and multi-seed method comparison reports.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nimf/data.hpp"
#include "nimf/network.hpp"
#include "nimf/training.hpp"

namespace nimf {

struct InterpolationCurve {
  std::vector<double> lambdas;
  std::vector<double> loss;
  std::vector<double> accuracy;
};

/// Evaluates (1 - lambda) A + lambda B on `points` uniformly spaced lambdas
/// in [0, 1]. The endpoints are evaluate(A) and evaluate(B) themselves.
InterpolationCurve interpolation_curve(const Model& a, const Model& b, const Dataset& data, int points);

/// CSV with header lambda,loss,accuracy.
std::string curve_to_csv(const InterpolationCurve& curve);

/// Accuracy and loss of the mean softmax of `models`.
Evaluation evaluate_ensemble(std::span<const Model> models, const Dataset& data);

/// One method evaluated for one seed; nullopt marks a method that does not
/// apply to the setup (reported as N/A).
struct MethodResult {
  std::string method;
  std::optional<Evaluation> eval;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<Evaluation> bases;  // in model order; sorted by the report
  std::vector<MethodResult> methods;
};

struct ReportRow {
  std::string method;
  std::vector<double> accuracy;  // per seed, in seed order
  std::vector<double> loss;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;  // sample standard deviation, 0 for one seed
  double mean_loss = 0.0;
  double std_loss = 0.0;
  bool applicable = true;
};

struct ComparisonReport {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<ReportRow> rows;

  const ReportRow* row(const std::string& method) const;
  std::string to_json() const;
  /// Aligned text table: method, accuracy mean +- std, loss mean +- std.
  std::string to_text() const;
};

/// Aggregates per-seed results. Within each seed base models are sorted by
/// accuracy (descending) and reported as rows "base 1", "base 2", ...; the
/// remaining methods keep their first-seen order. A method that is N/A in
/// any seed is N/A in the report.
ComparisonReport comparison_report(const std::string& name, std::span<const SeedResult> seeds);

std::string seed_result_to_json(const SeedResult& r);
SeedResult seed_result_from_json(const std::string& text);

/// Sample mean and standard deviation (n - 1 denominator; 0 when n < 2).
std::pair<double, double> mean_std(std::span<const double> values);

}  // namespace nimf
