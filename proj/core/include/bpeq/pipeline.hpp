#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bpeq/bpe_quant.hpp"
#include "bpeq/fcm.hpp"
#include "bpeq/preprocess.hpp"

namespace bpeq {

// Malformed manifest or configuration. The CLI maps this to exit code 2.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Breast density vocabulary accepted in manifests and label files.
inline constexpr const char* kDensityCategories[] = {"fatty", "scattered", "heterogeneously dense",
                                                     "extremely dense"};

// Qualitative BPE grade: minimal=1, mild=2, moderate=3, marked=4. Accepts
// the word or the number; throws ConfigError otherwise.
int parse_qualitative_bpe(const std::string& text);

struct FcmOverrides {
  std::optional<IntensityThreshold> threshold;
  std::optional<EllipseExclusion> ellipse;
  std::optional<double> prob_threshold;

  // Fields set in `other` replace ours.
  FcmOverrides merged_with(const FcmOverrides& other) const;
};

struct CaseManifest {
  std::string case_id;
  std::filesystem::path s0;
  std::filesystem::path s1;
  std::string s0_ref;  // paths as written in the manifest, for provenance
  std::string s1_ref;
  std::optional<int> qualitative_bpe;
  std::optional<std::string> density_category;
  FcmOverrides fcm;
  std::map<std::string, FcmOverrides> fcm_by_operator;
};

// {"cases": [{"case_id", "s0", "s1", "qualitative_bpe", "density_category",
//             "fcm": {...}, "fcm_by_operator": {"<label>": {...}}}]}
// Volume paths are relative to the manifest's directory.
struct Manifest {
  std::vector<CaseManifest> cases;

  static Manifest from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static Manifest load(const std::filesystem::path& path);
  const CaseManifest* find(const std::string& case_id) const;
};

struct PipelineConfig {
  PreprocParams preprocess;
  FcmParams fcm;
  IntensityThreshold fcm_threshold = IntensityThreshold::otsu();
  // Empty means EllipseExclusion::default_for(dims).
  std::optional<EllipseExclusion> fcm_ellipse;
  BpeParams bpe;
  Index3 patch_size{96, 96, 96};
  std::string breast_backend = "stub:threshold";
  std::string fgt_vessel_backend = "stub:threshold";
  int bootstrap_resamples = 2000;
  double ci_level = 0.95;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;

  // Unknown keys and out-of-range values raise ConfigError.
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;
};

struct CaseFailure {
  std::string case_id;
  std::string stage;
  std::string message;
};

struct BatchResult {
  int succeeded = 0;
  std::vector<CaseFailure> failures;  // manifest order

  bool ok() const { return failures.empty(); }
};

// Output layout under PipelineConfig::output_dir.
namespace layout {
std::filesystem::path preprocessed_dir(const std::filesystem::path& out, const std::string& case_id);
std::filesystem::path segment_dir(const std::filesystem::path& out, const std::string& method,
                                  const std::string& operator_label, const std::string& case_id);
std::filesystem::path metrics_csv(const std::filesystem::path& out);
std::filesystem::path report_dir(const std::filesystem::path& out);
std::filesystem::path failures_dir(const std::filesystem::path& out);
}  // namespace layout

// Per case: register S1 to S0 in-plane, resample both to the target
// spacing, write s0.nii, s1.nii and provenance.json.
BatchResult run_preprocess(const Manifest& manifest, const PipelineConfig& config, int jobs = 1);

enum class SegmentMethod { kFcm, kDl };
SegmentMethod parse_segment_method(const std::string& name);
std::string to_string(SegmentMethod method);

struct SegmentOptions {
  SegmentMethod method = SegmentMethod::kFcm;
  std::string operator_label = "default";
  // Replaces the config default; per-case manifest overrides still win.
  std::optional<double> prob_threshold;
};

// Writes breast.nii, fgt.nii (and vessel.nii for dl) under
// segment/<method>/<operator>/<case>/.
BatchResult run_segment(const Manifest& manifest, const PipelineConfig& config, const SegmentOptions& options,
                        int jobs = 1);

// "<method>/<operator>", e.g. "fcm/reader1".
using MethodSelection = std::string;

// Method selections with masks on disk, sorted.
std::vector<MethodSelection> discover_selections(const std::filesystem::path& out);

struct MetricsBatch {
  BatchResult batch;
  std::vector<MetricsRow> rows;  // selection-major, then manifest order
};

// One row per (case, selection); written to metrics/metrics.csv.
MetricsBatch run_metrics(const Manifest& manifest, const PipelineConfig& config,
                         const std::vector<MethodSelection>& selections, int jobs = 1);

// Failures recorded by earlier stages (failures/*.json), sorted by file.
std::vector<CaseFailure> read_recorded_failures(const std::filesystem::path& out);

}  // namespace bpeq
