#pragma once

// Graph recovery scores and the evaluation report with JSON/CSV output.

#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "caustream/core/io.hpp"
#include "caustream/eval/metrics.hpp"
#include "caustream/forecast/window.hpp"
#include "caustream/scm/types.hpp"
#include "json.hpp"

namespace caustream::eval {

struct GraphScore {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  Index shd = 0;
  Index true_positive = 0, false_positive = 0, false_negative = 0;
};

/// Edge-level scores over all lag slices. SHD counts each missing or extra
/// edge once, and a reversed instantaneous edge once.
inline GraphScore graph_recovery(const scm::BinaryDag& est, const scm::BinaryDag& truth) {
  if (est.slices.size() != truth.slices.size()) throw ContractError("graph_recovery: lag slice counts differ");
  GraphScore s;
  Index reversed = 0;
  for (std::size_t l = 0; l < truth.slices.size(); ++l) {
    const Matrix& e = est.slices[l];
    const Matrix& t = truth.slices[l];
    if (e.rows() != t.rows() || e.cols() != t.cols()) throw ContractError("graph_recovery: shapes differ");
    for (Index i = 0; i < t.rows(); ++i)
      for (Index j = 0; j < t.cols(); ++j) {
        const bool ev = e(i, j) != 0.0, tv = t(i, j) != 0.0;
        if (ev && tv) ++s.true_positive;
        else if (ev) ++s.false_positive;
        else if (tv) ++s.false_negative;
        if (l == 0 && i < j) {
          // i<j visits each unordered pair once.
          const bool e_ij = ev, e_ji = e(j, i) != 0.0, t_ij = tv, t_ji = t(j, i) != 0.0;
          if ((e_ij && !e_ji && t_ji && !t_ij) || (e_ji && !e_ij && t_ij && !t_ji)) ++reversed;
        }
      }
  }
  const double tp = static_cast<double>(s.true_positive);
  s.precision = s.true_positive + s.false_positive > 0 ? tp / static_cast<double>(s.true_positive + s.false_positive) : 0.0;
  s.recall = s.true_positive + s.false_negative > 0 ? tp / static_cast<double>(s.true_positive + s.false_negative) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  s.shd = s.false_positive + s.false_negative - reversed;
  return s;
}

struct StationScores {
  double nse = 0.0, kge = 0.0, ve = 0.0, rho = 0.0;
};

struct EvaluationReport {
  std::map<std::string, StationScores> per_station;
  StationScores aggregate;  // station average
  std::optional<StationScores> pooled;
  std::map<std::string, GraphScore> graph_scores;
  std::optional<double> mcc, r2;
  forecast::WindowConfig window;
  std::vector<std::string> warnings;
};

inline StationScores score_series(const Vector& obs, const Vector& pred) {
  return {nse(obs, pred), kge(obs, pred), ve(obs, pred), pearson(obs, pred)};
}

/// Per-station and aggregate skill; obs and pred are T x N in physical units.
inline EvaluationReport evaluate_forecasts(const Matrix& obs, const Matrix& pred,
                                           const std::vector<std::string>& station_ids,
                                           const forecast::WindowConfig& window) {
  if (obs.rows() != pred.rows() || obs.cols() != pred.cols()) throw ContractError("evaluate: shapes differ");
  if (static_cast<Index>(station_ids.size()) != obs.cols()) throw ContractError("evaluate: station id count");
  EvaluationReport r;
  r.window = window;
  for (Index k = 0; k < obs.cols(); ++k) {
    StationScores s = score_series(obs.col(k), pred.col(k));
    r.per_station[station_ids[static_cast<std::size_t>(k)]] = s;
    r.aggregate.nse += s.nse / static_cast<double>(obs.cols());
    r.aggregate.kge += s.kge / static_cast<double>(obs.cols());
    r.aggregate.ve += s.ve / static_cast<double>(obs.cols());
    r.aggregate.rho += s.rho / static_cast<double>(obs.cols());
  }
  const Vector po = Eigen::Map<const Vector>(obs.data(), obs.size());
  const Vector pp = Eigen::Map<const Vector>(pred.data(), pred.size());
  r.pooled = score_series(po, pp);
  return r;
}

inline nlohmann::json scores_json(const StationScores& s) {
  return {{"nse", s.nse}, {"kge", s.kge}, {"ve", s.ve}, {"rho", s.rho}};
}

inline nlohmann::json report_json(const EvaluationReport& r) {
  nlohmann::json j;
  nlohmann::json ps = nlohmann::json::object();
  for (const auto& [id, s] : r.per_station) ps[id] = scores_json(s);
  j["per_station"] = ps;
  j["aggregate"] = scores_json(r.aggregate);
  if (r.pooled) j["pooled"] = scores_json(*r.pooled);
  nlohmann::json gs = nlohmann::json::object();
  for (const auto& [name, g] : r.graph_scores)
    gs[name] = {{"f1", g.f1}, {"shd", g.shd}, {"precision", g.precision}, {"recall", g.recall}};
  j["graph_scores"] = gs;
  nlohmann::json al = nlohmann::json::object();
  if (r.mcc) al["mcc"] = *r.mcc;
  if (r.r2) al["r2"] = *r.r2;
  j["alignment"] = al;
  j["window"] = {{"history_len", r.window.history_len},
                 {"horizon", r.window.horizon},
                 {"preset", forecast::to_string(r.window.preset)}};
  j["warnings"] = r.warnings;
  return j;
}

inline std::string report_csv(const EvaluationReport& r) {
  std::ostringstream os;
  os << "station_id,nse,kge,ve,rho\n";
  auto row = [&os](const std::string& id, const StationScores& s) {
    os << id << ',' << io::format_double(s.nse) << ',' << io::format_double(s.kge) << ','
       << io::format_double(s.ve) << ',' << io::format_double(s.rho) << '\n';
  };
  for (const auto& [id, s] : r.per_station) row(id, s);
  row("aggregate", r.aggregate);
  return os.str();
}

}  // namespace caustream::eval
