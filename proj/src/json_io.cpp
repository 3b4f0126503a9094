#include "mfg/json_io.hpp"

#include <fstream>

namespace mfg {

Json measure_to_json(const DiscreteMeasure& mu) {
  Json atoms = Json::array();
  for (int i = 0; i < mu.size(); ++i) {
    Json row = Json::array();
    for (int d = 0; d < mu.dim(); ++d) row.push_back(mu.atoms()(i, d));
    atoms.push_back(std::move(row));
  }
  Json weights = Json::array();
  for (int i = 0; i < mu.size(); ++i) weights.push_back(mu.weight(i));
  return Json{{"dim", mu.dim()}, {"atoms", std::move(atoms)},
              {"weights", std::move(weights)}};
}

DiscreteMeasure measure_from_json(const Json& j) {
  if (!j.contains("dim") || !j.contains("atoms") || !j.contains("weights"))
    throw std::invalid_argument("measure json: need dim, atoms, weights");
  int dim = j.at("dim").get<int>();
  const Json& atoms = j.at("atoms");
  const Json& weights = j.at("weights");
  if (atoms.size() != weights.size())
    throw std::invalid_argument("measure json: atom/weight count mismatch");
  Mat a(atoms.size(), dim);
  Vec w(weights.size());
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    if (static_cast<int>(atoms[i].size()) != dim)
      throw std::invalid_argument("measure json: atom dimension mismatch");
    for (int d = 0; d < dim; ++d) a(i, d) = atoms[i][d].get<double>();
    w(i) = weights[i].get<double>();
  }
  return DiscreteMeasure(std::move(a), std::move(w));
}

namespace {

Json matrix_to_json(const Mat& m) {
  Json out = Json::array();
  for (int i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace

Json report_to_json(const MonotonicityReport& report) {
  Json j{{"form", report.form_name},
         {"trials", report.trials},
         {"min_value", report.min_value},
         {"tol", report.tol},
         {"verdict", report.pass ? "pass" : "fail"},
         {"disclaimer", report.disclaimer}};
  if (report.witness) {
    Json w{{"cloud", measure_to_json(report.witness->cloud)},
           {"tangents", matrix_to_json(report.witness->tangents)},
           {"form_value", report.witness->form_value}};
    if (report.witness->feedback) {
      const FeedbackFunction& phi = *report.witness->feedback;
      w["feedback"] = Json{{"a", matrix_to_json(phi.a)},
                           {"b", matrix_to_json(phi.b)},
                           {"c", std::vector<double>(phi.c.data(),
                                                     phi.c.data() + phi.c.size())},
                           {"bound_value", phi.bound_value},
                           {"bound_slope", phi.bound_slope}};
    }
    j["witness"] = std::move(w);
  }
  return j;
}

Json report_to_json(const LipschitzReport& report) {
  Json j{{"metric", report.metric == TransportMetric::W2 ? "w2" : "w1"},
         {"trials", report.trials},
         {"max_ratio", report.max_ratio},
         {"max_dx_ratio", report.max_dx_ratio},
         {"scales", report.scales},
         {"ratio_by_scale", report.ratio_by_scale}};
  if (report.witness) {
    j["witness"] = Json{{"mu", measure_to_json(report.witness->first)},
                        {"nu", measure_to_json(report.witness->second)}};
  }
  return j;
}

Json profile_to_json(const DissipationProfile& profile, const RateReport* rate) {
  Json j{{"times", profile.times},
         {"values", profile.values},
         {"mono_tol", profile.mono_tol},
         {"terminal_tol", profile.terminal_tol},
         {"nonincreasing", profile.nonincreasing},
         {"terminal_ok", profile.terminal_ok},
         {"verdict", profile.pass() ? "pass" : "fail"}};
  if (!profile.rate_values.empty()) j["rate_values"] = profile.rate_values;
  if (rate) {
    j["rate"] = Json{{"interval_start", rate->interval_start},
                     {"decrements", rate->decrements},
                     {"bounds", rate->bounds},
                     {"tol", rate->tol},
                     {"verdict", rate->pass ? "pass" : "fail"}};
  }
  return j;
}

std::string json_hash(const Json& j) {
  std::string dump = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

void write_json(const Json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_json: cannot open " + path);
  out << j.dump(2) << "\n";
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_json: cannot open " + path);
  Json j;
  in >> j;
  return j;
}

}  // namespace mfg
