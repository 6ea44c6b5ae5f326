#include "bpeq/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "bpeq/agreement_stats.hpp"
#include "bpeq/rng.hpp"
#include "bpeq/volume_io.hpp"
#include "csv.hpp"

namespace bpeq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string out;
  for (const auto& id : ids) {
    if (!out.empty()) out += ", ";
    out += id;
  }
  return out;
}

std::optional<double> metric_value(const BpeMetrics& m, const std::string& name) {
  if (name == "breast_volume_mm3") return m.breast_volume_mm3;
  if (name == "fgt_volume_mm3") return m.fgt_volume_mm3;
  if (name == "bpe_volume_mm3") return m.bpe_volume_mm3;
  if (name == "bpe_fgt_ratio_pct") return m.bpe_fgt_ratio_pct;
  if (name == "bpe_breast_ratio_pct") return m.bpe_breast_ratio_pct;
  if (name == "bpe_integrated_intensity") return m.bpe_integrated_intensity;
  throw InvalidArgument("unknown metric " + name);
}

bool is_missing(const std::string& cell) { return cell.empty() || cell == "NA"; }

// Linear interpolation between order statistics (the usual "type 7").
double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(h);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

const csv::Table& require_columns(const csv::Table& t, std::initializer_list<const char*> names,
                                  const char* what) {
  for (const char* n : names) {
    if (t.column(n) < 0) {
      throw FormatError(std::string(what) + " lacks column " + n);
    }
  }
  return t;
}

}  // namespace

std::vector<CaseLabel> read_labels_csv(std::istream& in) {
  const csv::Table t = csv::read(in);
  require_columns(t, {"case_id", "qualitative_bpe"}, "labels CSV");
  const int c_id = t.column("case_id");
  const int c_q = t.column("qualitative_bpe");
  const int c_d = t.column("density_category");
  std::vector<CaseLabel> out;
  std::set<std::string> seen;
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) {
      throw FormatError("labels CSV: row has " + std::to_string(row.size()) + " fields, expected " +
                        std::to_string(t.header.size()));
    }
    CaseLabel l;
    l.case_id = row[c_id];
    if (!seen.insert(l.case_id).second) {
      throw ReportInputError("labels CSV: duplicate case_id " + l.case_id);
    }
    if (!is_missing(row[c_q])) l.qualitative_bpe = parse_qualitative_bpe(row[c_q]);
    if (c_d >= 0 && !is_missing(row[c_d])) l.density_category = row[c_d];
    out.push_back(std::move(l));
  }
  return out;
}

std::vector<CaseLabel> labels_from_manifest(const Manifest& manifest) {
  std::vector<CaseLabel> out;
  for (const auto& c : manifest.cases) {
    out.push_back({c.case_id, c.qualitative_bpe, c.density_category});
  }
  return out;
}

std::vector<ReaderScore> read_scores_csv(std::istream& in) {
  const csv::Table t = csv::read(in);
  require_columns(t, {"case_id", "reader_id", "method_a", "score_a", "method_b", "score_b"}, "scores CSV");
  std::vector<ReaderScore> out;
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) {
      throw FormatError("scores CSV: ragged row");
    }
    auto cell = [&](const char* name) { return row[t.column(name)]; };
    auto score = [&](const char* name) {
      const std::string s = cell(name);
      if (s.size() != 1 || s[0] < '1' || s[0] > '5') {
        throw FormatError("scores CSV: " + std::string(name) + " must be 1..5, got '" + s + "'");
      }
      return s[0] - '0';
    };
    out.push_back({cell("case_id"), cell("reader_id"), cell("method_a"), score("score_a"), cell("method_b"),
                   score("score_b")});
  }
  return out;
}

json build_report(const std::vector<MetricsRow>& metrics, const std::vector<CaseLabel>& labels, bool strict_labels,
                  const std::vector<ReaderScore>& scores, const std::vector<DiceSeries>& dice,
                  const std::vector<CaseFailure>& failures, const ReportOptions& options) {
  std::map<std::string, std::map<std::string, BpeMetrics>> by_method;
  std::set<std::string> all_cases;
  for (const auto& row : metrics) {
    if (!by_method[row.method].emplace(row.case_id, row.metrics).second) {
      throw ReportInputError("duplicate metrics row for case " + row.case_id + " and method " + row.method);
    }
    all_cases.insert(row.case_id);
  }
  std::set<std::string> failed;
  for (const auto& f : failures) failed.insert(f.case_id);

  // A case is analysed when every method has it. A case that some method
  // lacks is tolerated only if an earlier stage recorded a failure for it.
  std::vector<std::string> cases;
  std::vector<std::string> excluded;
  std::vector<std::string> problems;
  for (const auto& id : all_cases) {
    std::vector<std::string> lacking;
    for (const auto& [method, rows] : by_method) {
      if (!rows.contains(id)) lacking.push_back(method);
    }
    if (lacking.empty()) {
      cases.push_back(id);
    } else if (failed.contains(id)) {
      excluded.push_back(id);
    } else {
      problems.push_back(id + " (missing for " + join_ids(lacking) + ")");
    }
  }
  if (!problems.empty()) {
    throw ReportInputError("case_id sets differ between methods: " + join_ids(problems));
  }

  std::map<std::string, CaseLabel> label_of;
  for (const auto& l : labels) label_of[l.case_id] = l;
  std::vector<std::string> unlabeled;
  for (const auto& id : cases) {
    if (!label_of.contains(id)) unlabeled.push_back(id);
  }
  if (!unlabeled.empty()) {
    throw ReportInputError("labels missing case_id(s): " + join_ids(unlabeled));
  }
  if (strict_labels) {
    std::vector<std::string> extra;
    for (const auto& [id, l] : label_of) {
      if (!std::binary_search(cases.begin(), cases.end(), id) &&
          !std::binary_search(excluded.begin(), excluded.end(), id)) {
        extra.push_back(id);
      }
    }
    if (!extra.empty()) {
      throw ReportInputError("labels contain case_id(s) absent from the metrics: " + join_ids(extra));
    }
  }

  std::vector<std::string> methods;
  for (const auto& [m, rows] : by_method) methods.push_back(m);

  auto values = [&](const std::string& method, const std::string& metric, const std::string& id) {
    return metric_value(by_method.at(method).at(id), metric);
  };

  json agreement = json::array();
  json correlation = json::array();
  json comparison = json::array();
  for (const char* metric : kReportMetrics) {
    for (std::size_t a = 0; a < methods.size(); ++a) {
      for (std::size_t b = a + 1; b < methods.size(); ++b) {
        PairedSample s;
        for (const auto& id : cases) {
          const auto va = values(methods[a], metric, id);
          const auto vb = values(methods[b], metric, id);
          if (va && vb) {
            s.x.push_back(*va);
            s.y.push_back(*vb);
          }
        }
        json entry = {{"metric", metric}, {"method_a", methods[a]}, {"method_b", methods[b]}, {"n", s.x.size()}};
        try {
          entry["ccc"] = ccc(s);
          const auto ci = ccc_ci(s, options.ci_level, options.bootstrap_resamples, options.seed);
          entry["ci"] = {{"lo", ci.lo}, {"hi", ci.hi}, {"level", options.ci_level}, {"reliable", ci.reliable}};
        } catch (const Error& e) {
          entry["error"] = e.what();
        }
        agreement.push_back(std::move(entry));
      }
    }
    for (const auto& method : methods) {
      std::vector<double> q;
      std::vector<double> v;
      for (const auto& id : cases) {
        const auto val = values(method, metric, id);
        const auto& grade = label_of.at(id).qualitative_bpe;
        if (val && grade) {
          q.push_back(*grade);
          v.push_back(*val);
        }
      }
      json entry = {{"metric", metric}, {"method", method}, {"n", q.size()}};
      try {
        const auto r = spearman(q, v);
        entry["rho"] = r.rho;
        entry["p"] = r.p;
        entry["exact"] = r.exact;
      } catch (const Error& e) {
        entry["error"] = e.what();
      }
      correlation.push_back(std::move(entry));
    }
    for (std::size_t a = 0; a < methods.size(); ++a) {
      for (std::size_t b = a + 1; b < methods.size(); ++b) {
        std::vector<double> q;
        std::vector<double> m1;
        std::vector<double> m2;
        for (const auto& id : cases) {
          const auto va = values(methods[a], metric, id);
          const auto vb = values(methods[b], metric, id);
          const auto& grade = label_of.at(id).qualitative_bpe;
          if (va && vb && grade) {
            q.push_back(*grade);
            m1.push_back(*va);
            m2.push_back(*vb);
          }
        }
        json entry = {{"metric", metric}, {"method_a", methods[a]}, {"method_b", methods[b]}, {"n", q.size()}};
        try {
          const auto c = bootstrap_compare_spearman(q, m1, m2, options.bootstrap_resamples, options.seed);
          entry["delta_rho"] = c.delta_rho;
          entry["p"] = c.p;
        } catch (const Error& e) {
          entry["error"] = e.what();
        }
        comparison.push_back(std::move(entry));
      }
    }
  }

  json dice_json = json::array();
  for (const auto& d : dice) {
    json entry = {{"mask", "fgt"},
                  {"method_a", d.method_a},
                  {"method_b", d.method_b},
                  {"n", d.values.size()},
                  {"undefined", d.undefined}};
    if (!d.values.empty()) {
      entry["median"] = quantile(d.values, 0.5);
      entry["q1"] = quantile(d.values, 0.25);
      entry["q3"] = quantile(d.values, 0.75);
    }
    dice_json.push_back(std::move(entry));
  }

  // Scores are grouped by unordered method pair; within a pair, method_a is
  // the lexicographically smaller label.
  std::map<std::pair<std::string, std::string>, PairedSample> score_pairs;
  for (const auto& s : scores) {
    if (s.method_a == s.method_b) {
      throw ReportInputError("scores CSV: case " + s.case_id + " compares " + s.method_a + " with itself");
    }
    const bool swap = s.method_b < s.method_a;
    auto& sample = score_pairs[swap ? std::pair{s.method_b, s.method_a} : std::pair{s.method_a, s.method_b}];
    sample.x.push_back(swap ? s.score_b : s.score_a);
    sample.y.push_back(swap ? s.score_a : s.score_b);
  }
  json reader_scores = json::array();
  for (const auto& [pair, sample] : score_pairs) {
    int a_higher = 0;
    int b_higher = 0;
    double sum_a = 0.0;
    double sum_b = 0.0;
    for (std::size_t i = 0; i < sample.x.size(); ++i) {
      a_higher += sample.x[i] > sample.y[i];
      b_higher += sample.x[i] < sample.y[i];
      sum_a += sample.x[i];
      sum_b += sample.y[i];
    }
    const auto n = static_cast<double>(sample.x.size());
    json entry = {{"method_a", pair.first},
                  {"method_b", pair.second},
                  {"n", sample.x.size()},
                  {"mean_a", sum_a / n},
                  {"mean_b", sum_b / n},
                  {"a_higher", a_higher},
                  {"b_higher", b_higher},
                  {"ties", static_cast<int>(sample.x.size()) - a_higher - b_higher}};
    try {
      const auto w = wilcoxon_signed_rank(sample);
      entry["wilcoxon"] = {{"w", w.w}, {"w_plus", w.w_plus}, {"w_minus", w.w_minus},
                           {"n_nonzero", w.n}, {"p", w.p}, {"exact", w.exact}};
    } catch (const Error& e) {
      entry["error"] = e.what();
    }
    reader_scores.push_back(std::move(entry));
  }

  json failures_json = json::array();
  for (const auto& f : failures) {
    failures_json.push_back({{"case_id", f.case_id}, {"stage", f.stage}, {"message", f.message}});
  }

  return {
      {"rng", kRngAlgorithm},
      {"seed", options.seed},
      {"bootstrap_resamples", options.bootstrap_resamples},
      {"methods", methods},
      {"cases", cases},
      {"excluded_cases", excluded},
      {"agreement", agreement},
      {"correlation", correlation},
      {"comparison", comparison},
      {"dice", dice_json},
      {"reader_scores", reader_scores},
      {"failures", failures_json},
  };
}

namespace {

std::string fmt(const json& v, const char* spec = "%.3f") {
  if (!v.is_number()) return "-";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v.get<double>());
  return buf;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

}  // namespace

std::string render_report_text(const json& r) {
  std::ostringstream o;
  o << "Cases analysed: " << r.at("cases").size();
  if (!r.at("excluded_cases").empty()) o << " (excluded: " << r.at("excluded_cases").size() << ")";
  o << "\nMethods: ";
  for (std::size_t i = 0; i < r.at("methods").size(); ++i) {
    o << (i ? ", " : "") << r.at("methods")[i].get<std::string>();
  }
  o << "\nBootstrap: " << r.at("bootstrap_resamples").get<int>() << " resamples, seed " << r.at("seed").dump()
    << "\n";

  o << "\nAgreement (CCC)\n";
  o << pad("metric", 26) << pad("method A", 18) << pad("method B", 18) << pad("n", 5) << "CCC (CI)\n";
  for (const auto& e : r.at("agreement")) {
    o << pad(e.at("metric").get<std::string>(), 26) << pad(e.at("method_a").get<std::string>(), 18)
      << pad(e.at("method_b").get<std::string>(), 18) << pad(e.at("n").dump(), 5);
    if (e.contains("error")) {
      o << "n/a: " << e.at("error").get<std::string>();
    } else {
      const auto& ci = e.at("ci");
      o << fmt(e.at("ccc")) << " (" << fmt(ci.at("lo")) << ", " << fmt(ci.at("hi")) << ")";
      if (!ci.at("reliable").get<bool>()) o << " [n<8]";
    }
    o << "\n";
  }

  o << "\nCorrelation with qualitative BPE (Spearman)\n";
  o << pad("metric", 26) << pad("method", 18) << pad("n", 5) << pad("rho", 9) << "p\n";
  for (const auto& e : r.at("correlation")) {
    o << pad(e.at("metric").get<std::string>(), 26) << pad(e.at("method").get<std::string>(), 18)
      << pad(e.at("n").dump(), 5);
    if (e.contains("error")) {
      o << "n/a: " << e.at("error").get<std::string>();
    } else {
      o << pad(fmt(e.at("rho")), 9) << fmt(e.at("p"), "%.4g");
    }
    o << "\n";
  }

  if (!r.at("comparison").empty()) {
    o << "\nCorrelation difference (bootstrap)\n";
    o << pad("metric", 26) << pad("method A", 18) << pad("method B", 18) << pad("delta", 9) << "p\n";
    for (const auto& e : r.at("comparison")) {
      o << pad(e.at("metric").get<std::string>(), 26) << pad(e.at("method_a").get<std::string>(), 18)
        << pad(e.at("method_b").get<std::string>(), 18);
      if (e.contains("error")) {
        o << "n/a: " << e.at("error").get<std::string>();
      } else {
        o << pad(fmt(e.at("delta_rho")), 9) << fmt(e.at("p"), "%.4g");
      }
      o << "\n";
    }
  }

  if (!r.at("dice").empty()) {
    o << "\nFGT Dice\n";
    for (const auto& e : r.at("dice")) {
      o << pad(e.at("method_a").get<std::string>(), 18) << pad(e.at("method_b").get<std::string>(), 18) << "n="
        << e.at("n").dump() << "  median " << fmt(e.value("median", json())) << " (IQR " << fmt(e.value("q1", json()))
        << "-" << fmt(e.value("q3", json())) << ")\n";
    }
  }

  if (!r.at("reader_scores").empty()) {
    o << "\nReader scores\n";
    for (const auto& e : r.at("reader_scores")) {
      o << e.at("method_a").get<std::string>() << " mean " << fmt(e.at("mean_a"), "%.2f") << " vs "
        << e.at("method_b").get<std::string>() << " mean " << fmt(e.at("mean_b"), "%.2f") << ", n=" << e.at("n").dump();
      if (e.contains("wilcoxon")) {
        o << ", Wilcoxon W=" << fmt(e.at("wilcoxon").at("w"), "%g") << " p=" << fmt(e.at("wilcoxon").at("p"), "%.4g");
      } else {
        o << ", Wilcoxon n/a: " << e.at("error").get<std::string>();
      }
      o << "\n";
    }
  }

  if (!r.at("failures").empty()) {
    o << "\nFailures\n";
    for (const auto& f : r.at("failures")) {
      o << f.at("case_id").get<std::string>() << " [" << f.at("stage").get<std::string>()
        << "]: " << f.at("message").get<std::string>() << "\n";
    }
  }
  return o.str();
}

json run_report(const Manifest* manifest, const PipelineConfig& config, const ReportRequest& request) {
  const fs::path& out = config.output_dir;
  std::vector<fs::path> metric_files = request.metrics_csvs;
  if (metric_files.empty()) metric_files.push_back(layout::metrics_csv(out));
  std::vector<MetricsRow> rows;
  for (const auto& path : metric_files) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open metrics CSV " + path.string());
    auto part = read_metrics_csv(in);
    rows.insert(rows.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }

  std::vector<CaseLabel> labels;
  bool strict = false;
  if (request.labels_csv) {
    std::ifstream in(*request.labels_csv, std::ios::binary);
    if (!in) throw IoError("cannot open labels CSV " + request.labels_csv->string());
    labels = read_labels_csv(in);
    strict = true;
  } else if (manifest != nullptr) {
    labels = labels_from_manifest(*manifest);
  } else {
    throw ConfigError("report needs a labels CSV or a manifest");
  }

  std::vector<ReaderScore> scores;
  if (request.scores_csv) {
    std::ifstream in(*request.scores_csv, std::ios::binary);
    if (!in) throw IoError("cannot open scores CSV " + request.scores_csv->string());
    scores = read_scores_csv(in);
  }

  std::vector<DiceSeries> dice;
  if (request.include_dice) {
    std::map<std::string, std::set<std::string>> cases_of;
    for (const auto& r : rows) cases_of[r.method].insert(r.case_id);
    for (auto a = cases_of.begin(); a != cases_of.end(); ++a) {
      for (auto b = std::next(a); b != cases_of.end(); ++b) {
        DiceSeries d{a->first, b->first, {}, 0};
        bool complete = true;
        for (const auto& id : a->second) {
          if (!b->second.contains(id)) continue;
          const fs::path pa = out / "segment" / a->first / id / "fgt.nii";
          const fs::path pb = out / "segment" / b->first / id / "fgt.nii";
          if (!fs::exists(pa) || !fs::exists(pb)) {
            complete = false;
            break;
          }
          try {
            d.values.push_back(bpeq::dice(read_mask(pa), read_mask(pb)));
          } catch (const DegenerateInput&) {
            ++d.undefined;
          }
        }
        if (complete) dice.push_back(std::move(d));
      }
    }
  }

  const ReportOptions options{config.bootstrap_resamples, config.ci_level, config.seed};
  json report = build_report(rows, labels, strict, scores, dice, read_recorded_failures(out), options);

  const fs::path dir = layout::report_dir(out);
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "report.json", std::ios::binary | std::ios::trunc);
    f << report.dump(2) << "\n";
    if (!f.flush()) throw IoError("cannot write " + (dir / "report.json").string());
  }
  {
    std::ofstream f(dir / "report.txt", std::ios::binary | std::ios::trunc);
    f << render_report_text(report);
    if (!f.flush()) throw IoError("cannot write " + (dir / "report.txt").string());
  }
  return report;
}

}  // namespace bpeq
