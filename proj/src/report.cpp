#include "lesact/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "lesact/errors.hpp"

namespace lesact {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::optional<double> metric_of(const CaseMetrics& c, const std::string& metric) {
  if (metric == "dice") return c.dice();
  if (metric == "ltpr") return c.ltpr;
  if (metric == "lfpr") return c.lfpr;
  throw InvalidArgument("unknown metric '" + metric + "'");
}

std::string file_stem(const std::string& name) {
  std::string out;
  for (char ch : name) out += std::isalnum(static_cast<unsigned char>(ch)) ? ch : '_';
  return out;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write '" + path.string() + "'");
  out << std::setprecision(10);
  return out;
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json summary_json(const SummaryStats& s) { return {{"mean", s.mean}, {"p25", s.p25}, {"p75", s.p75}, {"n", s.n}}; }

SummaryStats summary_from(const json& j) {
  return {j.at("mean").get<double>(), j.at("p25").get<double>(), j.at("p75").get<double>(), j.at("n").get<std::size_t>()};
}

json case_json(const CaseMetrics& c) {
  return {{"ltpr", opt(c.ltpr)}, {"lfpr", c.lfpr},     {"lesion_dices", c.lesion_dices}, {"n_gt", c.n_gt},
          {"n_pred", c.n_pred},  {"n_tp", c.n_tp},     {"n_fp", c.n_fp}};
}

CaseMetrics case_from(const json& j) {
  CaseMetrics c;
  if (!j.at("ltpr").is_null()) c.ltpr = j.at("ltpr").get<double>();
  c.lfpr = j.at("lfpr").get<double>();
  c.lesion_dices = j.at("lesion_dices").get<std::vector<double>>();
  c.n_gt = j.at("n_gt").get<Index>();
  c.n_pred = j.at("n_pred").get<Index>();
  c.n_tp = j.at("n_tp").get<Index>();
  c.n_fp = j.at("n_fp").get<Index>();
  return c;
}

json sweep_json(const std::vector<SweepPoint>& s) {
  json out = json::array();
  for (const auto& p : s) out.push_back({p.t, p.ltpr, p.lfpr, p.objective});
  return out;
}

std::vector<SweepPoint> sweep_from(const json& j) {
  std::vector<SweepPoint> out;
  for (const auto& p : j) out.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>(), p.at(3).get<double>()});
  return out;
}

}  // namespace

std::vector<double> metric_values(const std::vector<CaseMetrics>& cases, const std::string& metric) {
  std::vector<double> out;
  for (const auto& c : cases)
    if (auto v = metric_of(c, metric)) out.push_back(*v);
  return out;
}

std::pair<std::vector<double>, std::vector<double>> paired_values(const ModelEvaluation& a, const ModelEvaluation& b,
                                                                  const std::string& metric) {
  std::pair<std::vector<double>, std::vector<double>> out;
  for (std::size_t i = 0; i < a.case_ids.size(); ++i) {
    const auto it = std::find(b.case_ids.begin(), b.case_ids.end(), a.case_ids[i]);
    if (it == b.case_ids.end()) continue;
    const auto va = metric_of(a.cases[i], metric);
    const auto vb = metric_of(b.cases[static_cast<std::size_t>(it - b.case_ids.begin())], metric);
    if (!va || !vb) continue;
    out.first.push_back(*va);
    out.second.push_back(*vb);
  }
  return out;
}

std::vector<Comparison> compare_models(const std::vector<ModelEvaluation>& models, const std::vector<std::string>& metrics,
                                       double alpha) {
  std::vector<Comparison> out;
  for (std::size_t i = 0; i < models.size(); ++i)
    for (std::size_t j = i + 1; j < models.size(); ++j)
      for (const auto& metric : metrics) {
        Comparison c{models[i].model, models[j].model, metric, std::nullopt, ""};
        const auto [x, y] = paired_values(models[i], models[j], metric);
        try {
          c.result = wilcoxon_signed_rank(x, y, alpha);
        } catch (const InvalidArgument& e) {
          c.note = e.what();
        }
        out.push_back(std::move(c));
      }
  return out;
}

void to_json(json& j, const EvalReport& r) {
  json models = json::array();
  for (const auto& m : r.models) {
    json cases = json::array();
    for (std::size_t i = 0; i < m.cases.size(); ++i) {
      json c = case_json(m.cases[i]);
      c["id"] = m.case_ids[i];
      cases.push_back(c);
    }
    models.push_back({{"model", m.model},
                      {"threshold", m.threshold},
                      {"summary",
                       {{"dice", summary_json(m.summary.dice)},
                        {"ltpr", summary_json(m.summary.ltpr)},
                        {"lfpr", summary_json(m.summary.lfpr)},
                        {"n_cases", m.summary.n_cases},
                        {"n_tp", m.summary.n_tp},
                        {"n_fp", m.summary.n_fp}}},
                      {"cases", cases},
                      {"validation_sweep", sweep_json(m.validation_sweep)},
                      {"test_sweep", sweep_json(m.test_sweep)}});
  }
  json comparisons = json::array();
  for (const auto& c : r.comparisons) {
    json e = {{"model_a", c.model_a}, {"model_b", c.model_b}, {"metric", c.metric}, {"note", c.note}};
    if (c.result)
      e["wilcoxon"] = {{"statistic", c.result->statistic}, {"p", c.result->p_value}, {"significant", c.result->significant},
                       {"n", c.result->n_used},           {"exact", c.result->exact}};
    comparisons.push_back(e);
  }
  j = json{{"config_hash", r.config_hash}, {"models", models}, {"comparisons", comparisons}};
  if (r.interrater) {
    json cases = json::array();
    for (std::size_t i = 0; i < r.interrater_cases.size(); ++i) {
      json c = case_json(r.interrater_cases[i]);
      c["id"] = r.interrater_case_ids[i];
      cases.push_back(c);
    }
    j["interrater"] = {{"pooled", case_json(*r.interrater)}, {"cases", cases}};
  }
}

void from_json(const json& j, EvalReport& r) {
  r = EvalReport{};
  try {
    r.config_hash = j.value("config_hash", "");
    for (const auto& m : j.at("models")) {
      ModelEvaluation e;
      e.model = m.at("model").get<std::string>();
      e.threshold = m.at("threshold").get<double>();
      for (const auto& c : m.at("cases")) {
        e.case_ids.push_back(c.at("id").get<std::string>());
        e.cases.push_back(case_from(c));
      }
      const auto& s = m.at("summary");
      e.summary.dice = summary_from(s.at("dice"));
      e.summary.ltpr = summary_from(s.at("ltpr"));
      e.summary.lfpr = summary_from(s.at("lfpr"));
      e.summary.n_cases = s.at("n_cases").get<Index>();
      e.summary.n_tp = s.at("n_tp").get<Index>();
      e.summary.n_fp = s.at("n_fp").get<Index>();
      e.validation_sweep = sweep_from(m.at("validation_sweep"));
      e.test_sweep = sweep_from(m.at("test_sweep"));
      r.models.push_back(std::move(e));
    }
    for (const auto& c : j.at("comparisons")) {
      Comparison cmp{c.at("model_a").get<std::string>(), c.at("model_b").get<std::string>(),
                     c.at("metric").get<std::string>(), std::nullopt, c.value("note", "")};
      if (c.contains("wilcoxon")) {
        const auto& w = c.at("wilcoxon");
        cmp.result = WilcoxonResult{w.at("statistic").get<double>(), w.at("p").get<double>(), w.at("significant").get<bool>(),
                                    w.at("n").get<std::size_t>(), w.at("exact").get<bool>()};
      }
      r.comparisons.push_back(std::move(cmp));
    }
    if (j.contains("interrater")) {
      r.interrater = case_from(j.at("interrater").at("pooled"));
      for (const auto& c : j.at("interrater").at("cases")) {
        r.interrater_case_ids.push_back(c.at("id").get<std::string>());
        r.interrater_cases.push_back(case_from(c));
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

void write_report_csv(const EvalReport& r, const fs::path& path) {
  auto out = open_out(path);
  out << "model,case_id,dice_mean,dice_p25,dice_p75,ltpr_mean,ltpr_p25,ltpr_p75,lfpr_mean,lfpr_p25,lfpr_p75,n_tp,n_fp\n";
  auto cell3 = [&](const SummaryStats& s) {
    if (s.n == 0) {
      out << ",,,";
      return;
    }
    out << s.mean << ',' << s.p25 << ',' << s.p75 << ',';
  };
  auto rows = [&](const std::string& model, const std::vector<std::string>& ids, const std::vector<CaseMetrics>& cases) {
    for (std::size_t i = 0; i < cases.size(); ++i) {
      const auto& c = cases[i];
      out << model << ',' << ids[i] << ',';
      cell3(summarize(c.lesion_dices));
      if (c.ltpr) {
        cell3({*c.ltpr, *c.ltpr, *c.ltpr, 1});
      } else {
        cell3({});
      }
      cell3({c.lfpr, c.lfpr, c.lfpr, 1});
      out << c.n_tp << ',' << c.n_fp << '\n';
    }
    const AggregateMetrics a = aggregate(cases);
    out << model << ",ALL,";
    cell3(a.dice);
    cell3(a.ltpr);
    cell3(a.lfpr);
    out << a.n_tp << ',' << a.n_fp << '\n';
  };
  for (const auto& m : r.models) rows(m.model, m.case_ids, m.cases);
  if (r.interrater && !r.interrater_cases.empty()) rows("interrater", r.interrater_case_ids, r.interrater_cases);
}

void write_comparisons_csv(const std::vector<Comparison>& comparisons, const fs::path& path) {
  auto out = open_out(path);
  out << "model_a,model_b,metric,p,significant\n";
  for (const auto& c : comparisons) {
    out << c.model_a << ',' << c.model_b << ',' << c.metric << ',';
    if (c.result) {
      out << c.result->p_value << ',' << (c.result->significant ? "true" : "false") << '\n';
    } else {
      out << "nan,false\n";
    }
  }
}

void write_sweep_csv(const std::vector<SweepPoint>& sweep, const fs::path& path) {
  auto out = open_out(path);
  out << "t,ltpr,lfpr,objective\n";
  for (const auto& p : sweep) out << p.t << ',' << p.ltpr << ',' << p.lfpr << ',' << p.objective << '\n';
}

void write_boxplot_svg(const EvalReport& r, const std::string& metric, const fs::path& path) {
  struct Series {
    std::string name;
    std::vector<double> values;
  };
  std::vector<Series> series;
  for (const auto& m : r.models) series.push_back({m.model, metric_values(m.cases, metric)});
  if (r.interrater && !r.interrater_cases.empty())
    series.push_back({"interrater", metric_values(r.interrater_cases, metric)});

  const double width = 120.0 * static_cast<double>(std::max<std::size_t>(series.size(), 1)) + 80.0;
  const double height = 360.0, top = 30.0, bottom = 300.0, left = 60.0;
  auto y = [&](double v) { return bottom - (bottom - top) * std::clamp(v, 0.0, 1.0); };
  auto out = open_out(path);
  out << std::setprecision(5);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << width / 2 << "\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">"
      << metric << "</text>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = tick / 4.0;
    out << "<line x1=\"" << left << "\" x2=\"" << width - 20 << "\" y1=\"" << y(v) << "\" y2=\"" << y(v)
        << "\" stroke=\"#ddd\"/>\n<text x=\"" << left - 8 << "\" y=\"" << y(v) + 4
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << v << "</text>\n";
  }
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double cx = left + 60.0 + 120.0 * static_cast<double>(i);
    out << "<text x=\"" << cx << "\" y=\"" << bottom + 20 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"11\">" << series[i].name << "</text>\n";
    const auto& v = series[i].values;
    if (v.empty()) continue;
    const double q1 = percentile(v, 25), med = percentile(v, 50), q3 = percentile(v, 75);
    const double iqr = q3 - q1;
    double lo = q3, hi = q1;
    for (double x : v) {
      if (x >= q1 - 1.5 * iqr) lo = std::min(lo, x);
      if (x <= q3 + 1.5 * iqr) hi = std::max(hi, x);
    }
    out << "<line x1=\"" << cx << "\" x2=\"" << cx << "\" y1=\"" << y(lo) << "\" y2=\"" << y(hi) << "\" stroke=\"black\"/>\n"
        << "<rect x=\"" << cx - 30 << "\" y=\"" << y(q3) << "\" width=\"60\" height=\"" << std::max(y(q1) - y(q3), 0.5)
        << "\" fill=\"#9ecae1\" stroke=\"black\"/>\n"
        << "<line x1=\"" << cx - 30 << "\" x2=\"" << cx + 30 << "\" y1=\"" << y(med) << "\" y2=\"" << y(med)
        << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    for (double x : v)
      if (x < lo || x > hi) out << "<circle cx=\"" << cx << "\" cy=\"" << y(x) << "\" r=\"2.5\" fill=\"none\" stroke=\"black\"/>\n";
  }
  out << "</svg>\n";
}

void write_roc_svg(const EvalReport& r, const fs::path& path) {
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  const double size = 300.0, left = 60.0, top = 30.0;
  auto px = [&](double v) { return left + size * std::clamp(v, 0.0, 1.0); };
  auto py = [&](double v) { return top + size * (1.0 - std::clamp(v, 0.0, 1.0)); };
  auto out = open_out(path);
  out << std::setprecision(5);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + size + 180 << "\" height=\"" << top + size + 50
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << size << "\" height=\"" << size
      << "\" fill=\"none\" stroke=\"black\"/>\n"
      << "<text x=\"" << left + size / 2 << "\" y=\"" << top + size + 35
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">LFPR</text>\n"
      << "<text x=\"20\" y=\"" << top + size / 2 << "\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 20 "
      << top + size / 2 << ")\" text-anchor=\"middle\">LTPR</text>\n";
  for (std::size_t m = 0; m < r.models.size(); ++m) {
    const char* colour = colours[m % std::size(colours)];
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : r.models[m].test_sweep) out << px(p.lfpr) << ',' << py(p.ltpr) << ' ';
    out << "\"/>\n<text x=\"" << left + size + 10 << "\" y=\"" << top + 15 + 16.0 * static_cast<double>(m)
        << "\" fill=\"" << colour << "\" font-family=\"sans-serif\" font-size=\"11\">" << r.models[m].model << "</text>\n";
  }
  out << "</svg>\n";
}

void write_report_bundle(const EvalReport& r, const fs::path& dir) {
  fs::create_directories(dir);
  {
    auto out = open_out(dir / "report.json");
    out << json(r).dump(2) << '\n';
  }
  write_report_csv(r, dir / "report.csv");
  write_comparisons_csv(r.comparisons, dir / "comparisons.csv");
  for (const auto& m : r.models) write_sweep_csv(m.test_sweep, dir / ("roc_" + file_stem(m.model) + ".csv"));
  write_roc_svg(r, dir / "roc.svg");
  for (const char* metric : {"dice", "ltpr", "lfpr"}) write_boxplot_svg(r, metric, dir / (std::string("boxplot_") + metric + ".svg"));
}

EvalReport read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open report '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("report '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return j.get<EvalReport>();
}

}  // namespace lesact
