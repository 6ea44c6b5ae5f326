#include "bpeq/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>

#include "bpeq/backends.hpp"
#include "bpeq/patch_infer.hpp"
#include "bpeq/volume_io.hpp"
#include "parallel.hpp"
#include "sha256.hpp"

namespace bpeq {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) {
    throw ConfigError(where + ": expected an object");
  }
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

bool is_safe_name(const std::string& s) {
  static const std::regex kName("[A-Za-z0-9_.-]+");
  return s != "." && s != ".." && std::regex_match(s, kName);
}

IntensityThreshold parse_threshold(const json& j, const std::string& where) {
  if (j.is_string()) {
    if (j.get<std::string>() != "otsu") {
      throw ConfigError(where + ": threshold must be a number or \"otsu\"");
    }
    return IntensityThreshold::otsu();
  }
  if (!j.is_number()) {
    throw ConfigError(where + ": threshold must be a number or \"otsu\"");
  }
  return IntensityThreshold::fixed(j.get<double>());
}

json threshold_to_json(const IntensityThreshold& t) {
  return t.mode == IntensityThreshold::Mode::kOtsu ? json("otsu") : json(t.value);
}

EllipseExclusion parse_ellipse(const json& j, const std::string& where) {
  check_keys(j, {"center", "semi_axes"}, where);
  const auto c = j.at("center").get<std::array<double, 2>>();
  const auto r = j.at("semi_axes").get<std::array<double, 2>>();
  EllipseExclusion e{c[0], c[1], r[0], r[1]};
  try {
    e.validate();
  } catch (const InvalidArgument& err) {
    throw ConfigError(where + ": " + err.what());
  }
  return e;
}

json ellipse_to_json(const EllipseExclusion& e) {
  return {{"center", {e.cx, e.cy}}, {"semi_axes", {e.rx, e.ry}}};
}

FcmOverrides parse_overrides(const json& j, const std::string& where) {
  check_keys(j, {"threshold", "ellipse", "prob_threshold"}, where);
  FcmOverrides o;
  if (j.contains("threshold")) o.threshold = parse_threshold(j.at("threshold"), where);
  if (j.contains("ellipse")) o.ellipse = parse_ellipse(j.at("ellipse"), where + ".ellipse");
  if (j.contains("prob_threshold")) {
    const double p = j.at("prob_threshold").get<double>();
    if (!(p > 0.0 && p < 1.0)) {
      throw ConfigError(where + ": prob_threshold must lie in (0, 1)");
    }
    o.prob_threshold = p;
  }
  return o;
}

template <typename Fn>
auto wrap_json_errors(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

json read_json_file(const fs::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open " + what + " " + path.string());
  }
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + " is not valid JSON: " + std::string(e.what()));
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out.flush()) {
    throw IoError("cannot write " + path.string());
  }
}

void record_failures(const fs::path& out, const std::string& stage, const std::vector<CaseFailure>& failures) {
  json list = json::array();
  for (const auto& f : failures) {
    list.push_back({{"case_id", f.case_id}, {"message", f.message}});
  }
  json doc = {{"stage", stage}, {"failures", list}};
  write_text_file(layout::failures_dir(out) / (stage + ".json"), doc.dump(2) + "\n");
}

// Runs fn on every case, collecting failures in manifest order.
template <typename Fn>
BatchResult run_cases(const Manifest& manifest, const std::string& stage, int jobs, Fn&& fn) {
  const std::size_t n = manifest.cases.size();
  std::vector<std::optional<std::string>> errors(n);
  detail::parallel_for(n, jobs, [&](std::size_t i) {
    try {
      fn(manifest.cases[i]);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  BatchResult result;
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) {
      result.failures.push_back({manifest.cases[i].case_id, stage, *errors[i]});
    } else {
      ++result.succeeded;
    }
  }
  return result;
}

json affine_to_json(const Affine2D& t) {
  return {{"a11", t.a11}, {"a12", t.a12}, {"a21", t.a21}, {"a22", t.a22}, {"tx", t.tx}, {"ty", t.ty}};
}

}  // namespace

int parse_qualitative_bpe(const std::string& text) {
  static const std::array<const char*, 4> kWords = {"minimal", "mild", "moderate", "marked"};
  for (std::size_t i = 0; i < kWords.size(); ++i) {
    if (text == kWords[i] || text == std::to_string(i + 1)) {
      return static_cast<int>(i + 1);
    }
  }
  throw ConfigError("unknown qualitative BPE grade '" + text + "'");
}

FcmOverrides FcmOverrides::merged_with(const FcmOverrides& other) const {
  FcmOverrides out = *this;
  if (other.threshold) out.threshold = other.threshold;
  if (other.ellipse) out.ellipse = other.ellipse;
  if (other.prob_threshold) out.prob_threshold = other.prob_threshold;
  return out;
}

Manifest Manifest::from_json(const json& j, const fs::path& base_dir) {
  return wrap_json_errors("manifest", [&]() {
    check_keys(j, {"cases"}, "manifest");
    Manifest m;
    std::set<std::string> seen;
    for (const auto& jc : j.at("cases")) {
      check_keys(jc, {"case_id", "s0", "s1", "qualitative_bpe", "density_category", "fcm", "fcm_by_operator"},
                 "manifest case");
      CaseManifest c;
      c.case_id = jc.at("case_id").get<std::string>();
      const std::string where = "case " + c.case_id;
      if (!is_safe_name(c.case_id)) {
        throw ConfigError("case_id '" + c.case_id + "' must match [A-Za-z0-9_.-]+");
      }
      if (!seen.insert(c.case_id).second) {
        throw ConfigError("duplicate case_id '" + c.case_id + "'");
      }
      c.s0_ref = jc.at("s0").get<std::string>();
      c.s1_ref = jc.at("s1").get<std::string>();
      c.s0 = base_dir / c.s0_ref;
      c.s1 = base_dir / c.s1_ref;
      if (jc.contains("qualitative_bpe") && !jc.at("qualitative_bpe").is_null()) {
        const auto& q = jc.at("qualitative_bpe");
        c.qualitative_bpe = parse_qualitative_bpe(q.is_string() ? q.get<std::string>() : q.dump());
      }
      if (jc.contains("density_category") && !jc.at("density_category").is_null()) {
        const auto d = jc.at("density_category").get<std::string>();
        if (std::find(std::begin(kDensityCategories), std::end(kDensityCategories), d) ==
            std::end(kDensityCategories)) {
          throw ConfigError(where + ": unknown density_category '" + d + "'");
        }
        c.density_category = d;
      }
      if (jc.contains("fcm")) c.fcm = parse_overrides(jc.at("fcm"), where + ".fcm");
      if (jc.contains("fcm_by_operator")) {
        for (const auto& [label, ov] : jc.at("fcm_by_operator").items()) {
          c.fcm_by_operator[label] = parse_overrides(ov, where + ".fcm_by_operator." + label);
        }
      }
      m.cases.push_back(std::move(c));
    }
    return m;
  });
}

Manifest Manifest::load(const fs::path& path) {
  return from_json(read_json_file(path, "manifest"), path.parent_path());
}

const CaseManifest* Manifest::find(const std::string& case_id) const {
  for (const auto& c : cases) {
    if (c.case_id == case_id) return &c;
  }
  return nullptr;
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  return wrap_json_errors("config", [&]() {
    check_keys(j, {"preprocess", "fcm", "bpe", "dl", "report", "output_dir", "seed"}, "config");
    PipelineConfig c;
    if (j.contains("preprocess")) {
      const auto& p = j.at("preprocess");
      check_keys(p, {"target_spacing", "cap_low_pct", "cap_high_pct", "registration"}, "config.preprocess");
      c.preprocess.target_spacing = p.value("target_spacing", c.preprocess.target_spacing);
      c.preprocess.cap_low_pct = p.value("cap_low_pct", c.preprocess.cap_low_pct);
      c.preprocess.cap_high_pct = p.value("cap_high_pct", c.preprocess.cap_high_pct);
      if (p.contains("registration")) {
        const auto& r = p.at("registration");
        check_keys(r, {"levels", "max_iters_per_level", "convergence_tol", "min_structure_correlation", "robust_scale"},
                   "config.preprocess.registration");
        auto& reg = c.preprocess.registration;
        reg.levels = r.value("levels", reg.levels);
        reg.max_iters_per_level = r.value("max_iters_per_level", reg.max_iters_per_level);
        reg.convergence_tol = r.value("convergence_tol", reg.convergence_tol);
        reg.min_structure_correlation = r.value("min_structure_correlation", reg.min_structure_correlation);
        reg.robust_scale = r.value("robust_scale", reg.robust_scale);
      }
    }
    if (j.contains("fcm")) {
      const auto& f = j.at("fcm");
      check_keys(f, {"m", "max_iters", "tol", "prob_threshold", "threshold", "ellipse"}, "config.fcm");
      c.fcm.m = f.value("m", c.fcm.m);
      c.fcm.max_iters = f.value("max_iters", c.fcm.max_iters);
      c.fcm.tol = f.value("tol", c.fcm.tol);
      c.fcm.prob_threshold = f.value("prob_threshold", c.fcm.prob_threshold);
      if (f.contains("threshold")) c.fcm_threshold = parse_threshold(f.at("threshold"), "config.fcm");
      if (f.contains("ellipse") && !f.at("ellipse").is_null()) {
        c.fcm_ellipse = parse_ellipse(f.at("ellipse"), "config.fcm.ellipse");
      }
    }
    if (j.contains("bpe")) {
      const auto& b = j.at("bpe");
      check_keys(b, {"pe_threshold", "s0_floor"}, "config.bpe");
      c.bpe.pe_threshold = b.value("pe_threshold", c.bpe.pe_threshold);
      c.bpe.s0_floor = b.value("s0_floor", c.bpe.s0_floor);
    }
    if (j.contains("dl")) {
      const auto& d = j.at("dl");
      check_keys(d, {"patch_size", "breast_backend", "fgt_vessel_backend"}, "config.dl");
      if (d.contains("patch_size")) {
        const auto& ps = d.at("patch_size");
        if (ps.is_number_integer()) {
          const auto v = ps.get<std::int64_t>();
          c.patch_size = {v, v, v};
        } else {
          c.patch_size = ps.get<Index3>();
        }
      }
      c.breast_backend = d.value("breast_backend", c.breast_backend);
      c.fgt_vessel_backend = d.value("fgt_vessel_backend", c.fgt_vessel_backend);
    }
    if (j.contains("report")) {
      const auto& r = j.at("report");
      check_keys(r, {"bootstrap_resamples", "ci_level"}, "config.report");
      c.bootstrap_resamples = r.value("bootstrap_resamples", c.bootstrap_resamples);
      c.ci_level = r.value("ci_level", c.ci_level);
    }
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    c.fcm.seed = c.seed;
    c.validate();
    return c;
  });
}

PipelineConfig PipelineConfig::load(const fs::path& path) { return from_json(read_json_file(path, "config")); }

json PipelineConfig::to_json() const {
  const auto& r = preprocess.registration;
  json j = {
      {"preprocess",
       {{"target_spacing", preprocess.target_spacing},
        {"cap_low_pct", preprocess.cap_low_pct},
        {"cap_high_pct", preprocess.cap_high_pct},
        {"registration",
         {{"levels", r.levels},
          {"max_iters_per_level", r.max_iters_per_level},
          {"convergence_tol", r.convergence_tol},
          {"min_structure_correlation", r.min_structure_correlation},
          {"robust_scale", r.robust_scale}}}}},
      {"fcm",
       {{"m", fcm.m},
        {"max_iters", fcm.max_iters},
        {"tol", fcm.tol},
        {"prob_threshold", fcm.prob_threshold},
        {"threshold", threshold_to_json(fcm_threshold)},
        {"ellipse", fcm_ellipse ? ellipse_to_json(*fcm_ellipse) : json(nullptr)}}},
      {"bpe", {{"pe_threshold", bpe.pe_threshold}, {"s0_floor", bpe.s0_floor}}},
      {"dl",
       {{"patch_size", patch_size}, {"breast_backend", breast_backend}, {"fgt_vessel_backend", fgt_vessel_backend}}},
      {"report", {{"bootstrap_resamples", bootstrap_resamples}, {"ci_level", ci_level}}},
      {"output_dir", output_dir.string()},
      {"seed", seed},
  };
  return j;
}

void PipelineConfig::validate() const {
  try {
    preprocess.validate();
    fcm.validate();
    bpe.validate();
    if (fcm_ellipse) fcm_ellipse->validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (std::any_of(patch_size.begin(), patch_size.end(), [](std::int64_t v) { return v < 1; })) {
    throw ConfigError("config: patch_size must be positive");
  }
  if (bootstrap_resamples < 1) {
    throw ConfigError("config: bootstrap_resamples must be >= 1");
  }
  if (!(ci_level > 0.0 && ci_level < 1.0)) {
    throw ConfigError("config: ci_level must lie in (0, 1)");
  }
  if (breast_backend.empty() || fgt_vessel_backend.empty()) {
    throw ConfigError("config: backend specifications must not be empty");
  }
}

namespace layout {
fs::path preprocessed_dir(const fs::path& out, const std::string& case_id) {
  return out / "preprocessed" / case_id;
}
fs::path segment_dir(const fs::path& out, const std::string& method, const std::string& operator_label,
                     const std::string& case_id) {
  return out / "segment" / method / operator_label / case_id;
}
fs::path metrics_csv(const fs::path& out) { return out / "metrics" / "metrics.csv"; }
fs::path report_dir(const fs::path& out) { return out / "report"; }
fs::path failures_dir(const fs::path& out) { return out / "failures"; }
}  // namespace layout

BatchResult run_preprocess(const Manifest& manifest, const PipelineConfig& config, int jobs) {
  config.validate();
  const fs::path& out = config.output_dir;
  auto result = run_cases(manifest, "preprocess", jobs, [&](const CaseManifest& c) {
    const Volume3D s0 = read_volume(c.s0);
    const Volume3D s1 = read_volume(c.s1);
    require_same_lattice(s0.geometry(), s1.geometry(), "S0 and S1");
    const RegistrationResult reg = register_inplane(s1, s0, config.preprocess);
    const Volume3D r0 = resample_isotropic(s0, config.preprocess.target_spacing);
    const Volume3D r1 = resample_isotropic(reg.registered, config.preprocess.target_spacing);

    const fs::path dir = layout::preprocessed_dir(out, c.case_id);
    fs::create_directories(dir);
    write_volume(r0, dir / "s0.nii");
    write_volume(r1, dir / "s1.nii");

    const json pp = config.to_json().at("preprocess");
    json prov = {
        {"case_id", c.case_id},
        {"inputs",
         {{"s0", {{"path", c.s0_ref}, {"sha256", detail::sha256_file(c.s0)}}},
          {"s1", {{"path", c.s1_ref}, {"sha256", detail::sha256_file(c.s1)}}}}},
        {"params", pp},
        {"registration",
         {{"transform", affine_to_json(reg.transform)},
          {"warning", reg.warning},
          {"objective_identity", reg.objective_identity},
          {"objective_final", reg.objective_final},
          {"evaluations", reg.evaluations}}},
        {"outputs",
         {{"s0", {{"path", "s0.nii"}, {"sha256", detail::sha256_file(dir / "s0.nii")}}},
          {"s1", {{"path", "s1.nii"}, {"sha256", detail::sha256_file(dir / "s1.nii")}}}}},
    };
    write_text_file(dir / "provenance.json", prov.dump(2) + "\n");
  });
  record_failures(out, "preprocess", result.failures);
  return result;
}

SegmentMethod parse_segment_method(const std::string& name) {
  if (name == "fcm") return SegmentMethod::kFcm;
  if (name == "dl") return SegmentMethod::kDl;
  throw ConfigError("unknown segmentation method '" + name + "' (expected fcm or dl)");
}

std::string to_string(SegmentMethod method) { return method == SegmentMethod::kFcm ? "fcm" : "dl"; }

BatchResult run_segment(const Manifest& manifest, const PipelineConfig& config, const SegmentOptions& options,
                        int jobs) {
  config.validate();
  if (!is_safe_name(options.operator_label)) {
    throw ConfigError("operator label '" + options.operator_label + "' must match [A-Za-z0-9_.-]+");
  }
  if (options.prob_threshold && !(*options.prob_threshold > 0.0 && *options.prob_threshold < 1.0)) {
    throw ConfigError("prob_threshold must lie in (0, 1)");
  }
  const fs::path& out = config.output_dir;
  const std::string method = to_string(options.method);
  std::unique_ptr<ModelBackend> breast_backend;
  std::unique_ptr<ModelBackend> fgt_backend;
  if (options.method == SegmentMethod::kDl) {
    try {
      breast_backend = make_backend(config.breast_backend);
      fgt_backend = make_backend(config.fgt_vessel_backend);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("config.dl: ") + e.what());
    }
  }

  const std::string stage = "segment_" + method + "_" + options.operator_label;
  auto result = run_cases(manifest, stage, jobs, [&](const CaseManifest& c) {
    const fs::path pdir = layout::preprocessed_dir(out, c.case_id);
    const Volume3D pre = read_volume(pdir / "s0.nii");
    const fs::path dir = layout::segment_dir(out, method, options.operator_label, c.case_id);

    if (options.method == SegmentMethod::kFcm) {
      FcmOverrides ov{config.fcm_threshold, config.fcm_ellipse,
                      options.prob_threshold.value_or(config.fcm.prob_threshold)};
      ov = ov.merged_with(c.fcm);
      if (auto it = c.fcm_by_operator.find(options.operator_label); it != c.fcm_by_operator.end()) {
        ov = ov.merged_with(it->second);
      }
      const EllipseExclusion ellipse = ov.ellipse.value_or(EllipseExclusion::default_for(pre.dims()));
      const Mask3D breast = threshold_breast_mask(pre, *ov.threshold, ellipse);
      FcmParams params = config.fcm;
      params.prob_threshold = *ov.prob_threshold;
      const FcmResult fcm = fcm_cluster(pre, breast, params);
      const Mask3D fgt = mask_and(apply_probability_threshold(fcm, params.prob_threshold), breast);
      fs::create_directories(dir);
      write_mask(breast, dir / "breast.nii");
      write_mask(fgt, dir / "fgt.nii");
      json info = {{"threshold", threshold_to_json(*ov.threshold)},
                   {"ellipse", ellipse_to_json(ellipse)},
                   {"prob_threshold", params.prob_threshold},
                   {"c_fat", fcm.c_fat},
                   {"c_fgt", fcm.c_fgt},
                   {"iterations", fcm.iterations},
                   {"converged", fcm.converged},
                   {"objective", fcm.objective}};
      write_text_file(dir / "fcm.json", info.dump(2) + "\n");
    } else {
      // Cases already run in parallel, so patches within a case do not.
      const DlSegmentation seg =
          segment_dl(pre, *breast_backend, *fgt_backend, config.preprocess, DlOptions{config.patch_size, 1});
      fs::create_directories(dir);
      write_mask(seg.breast_mask, dir / "breast.nii");
      write_mask(seg.fgt_mask, dir / "fgt.nii");
      write_mask(seg.vessel_mask, dir / "vessel.nii");
    }
  });
  record_failures(out, stage, result.failures);
  return result;
}

std::vector<MethodSelection> discover_selections(const fs::path& out) {
  std::vector<MethodSelection> found;
  const fs::path root = out / "segment";
  if (!fs::is_directory(root)) return found;
  for (const auto& method : fs::directory_iterator(root)) {
    if (!method.is_directory()) continue;
    for (const auto& op : fs::directory_iterator(method.path())) {
      if (op.is_directory()) {
        found.push_back(method.path().filename().string() + "/" + op.path().filename().string());
      }
    }
  }
  std::sort(found.begin(), found.end());
  return found;
}

MetricsBatch run_metrics(const Manifest& manifest, const PipelineConfig& config,
                         const std::vector<MethodSelection>& selections, int jobs) {
  config.validate();
  const fs::path& out = config.output_dir;
  for (const auto& sel : selections) {
    const auto slash = sel.find('/');
    if (slash == std::string::npos || !is_safe_name(sel.substr(0, slash)) || !is_safe_name(sel.substr(slash + 1))) {
      throw ConfigError("selection '" + sel + "' must look like <method>/<operator>");
    }
  }

  const std::size_t n_cases = manifest.cases.size();
  std::vector<std::optional<MetricsRow>> rows(selections.size() * n_cases);
  std::vector<std::optional<std::string>> errors(rows.size());
  detail::parallel_for(rows.size(), jobs, [&](std::size_t k) {
    const auto& sel = selections[k / n_cases];
    const auto& c = manifest.cases[k % n_cases];
    try {
      const fs::path pdir = layout::preprocessed_dir(out, c.case_id);
      DceSeries series{{read_volume(pdir / "s0.nii"), read_volume(pdir / "s1.nii")}};
      const fs::path sdir = out / "segment" / sel / c.case_id;
      const Mask3D breast = read_mask(sdir / "breast.nii");
      const Mask3D fgt = read_mask(sdir / "fgt.nii");
      const PeMap pe = compute_pe_map(series, config.bpe);
      const Mask3D bpe = compute_bpe_mask(pe, fgt, config.bpe);
      rows[k] = MetricsRow{c.case_id, sel, compute_metrics(breast, fgt, bpe, pe)};
    } catch (const std::exception& e) {
      errors[k] = sel + ": " + e.what();
    }
  });

  MetricsBatch mb;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k]) {
      mb.rows.push_back(std::move(*rows[k]));
      ++mb.batch.succeeded;
    } else {
      mb.batch.failures.push_back({manifest.cases[k % n_cases].case_id, "metrics", *errors[k]});
    }
  }
  const fs::path csv_path = layout::metrics_csv(out);
  fs::create_directories(csv_path.parent_path());
  {
    std::ofstream f(csv_path, std::ios::binary | std::ios::trunc);
    write_metrics_csv(f, mb.rows);
    if (!f.flush()) {
      throw IoError("cannot write " + csv_path.string());
    }
  }
  record_failures(out, "metrics", mb.batch.failures);
  return mb;
}

std::vector<CaseFailure> read_recorded_failures(const fs::path& out) {
  std::vector<CaseFailure> all;
  const fs::path dir = layout::failures_dir(out);
  if (!fs::is_directory(dir)) return all;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    const json doc = read_json_file(path, "failure record");
    wrap_json_errors(path.string(), [&]() {
      const auto stage = doc.at("stage").get<std::string>();
      for (const auto& f : doc.at("failures")) {
        all.push_back({f.at("case_id").get<std::string>(), stage, f.at("message").get<std::string>()});
      }
      return 0;
    });
  }
  return all;
}

}  // namespace bpeq
