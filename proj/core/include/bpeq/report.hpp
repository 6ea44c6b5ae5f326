#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bpeq/bpe_quant.hpp"
#include "bpeq/pipeline.hpp"

namespace bpeq {

// Inputs that cannot be joined (different case_id sets, duplicate rows).
class ReportInputError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct CaseLabel {
  std::string case_id;
  std::optional<int> qualitative_bpe;  // 1..4
  std::optional<std::string> density_category;
};

// CSV with columns case_id, qualitative_bpe and optionally density_category.
// Empty or "NA" cells mean unknown.
std::vector<CaseLabel> read_labels_csv(std::istream& in);
std::vector<CaseLabel> labels_from_manifest(const Manifest& manifest);

// One paired reader score; the reader-study export has this shape
// (plus extra columns, which are ignored).
struct ReaderScore {
  std::string case_id;
  std::string reader_id;
  std::string method_a;
  int score_a = 0;
  std::string method_b;
  int score_b = 0;
};

std::vector<ReaderScore> read_scores_csv(std::istream& in);

// FGT Dice between two mask sets, one value per case with a defined Dice.
struct DiceSeries {
  std::string method_a;
  std::string method_b;
  std::vector<double> values;
  int undefined = 0;  // both masks empty
};

struct ReportOptions {
  int bootstrap_resamples = 2000;
  double ci_level = 0.95;
  std::uint64_t seed = 0;
};

// The four metrics the agreement and correlation tables cover.
inline constexpr const char* kReportMetrics[] = {"bpe_volume_mm3", "bpe_fgt_ratio_pct", "bpe_breast_ratio_pct",
                                                 "bpe_integrated_intensity"};

// Builds the agreement report:
//   agreement      CCC (+ bootstrap CI) per metric for every method pair
//   correlation    Spearman rho/p per metric and method vs qualitative BPE
//   comparison     bootstrap test of rho differences between methods
//   dice, reader_scores (Wilcoxon), failures
// Every method must cover the same cases, except cases listed in `failures`,
// which are dropped. With `strict_labels`, the labels must cover exactly
// the analysed cases; otherwise they must cover at least those. Throws
// ReportInputError naming the differing case_ids.
nlohmann::json build_report(const std::vector<MetricsRow>& metrics, const std::vector<CaseLabel>& labels,
                            bool strict_labels, const std::vector<ReaderScore>& scores,
                            const std::vector<DiceSeries>& dice, const std::vector<CaseFailure>& failures,
                            const ReportOptions& options);

// Plain-text tables for the same content.
std::string render_report_text(const nlohmann::json& report);

struct ReportRequest {
  std::vector<std::filesystem::path> metrics_csvs;  // default: metrics/metrics.csv
  std::optional<std::filesystem::path> labels_csv;  // default: manifest labels
  std::optional<std::filesystem::path> scores_csv;
  bool include_dice = true;  // from segment/ masks, when present
};

// Reads the inputs, builds the report and writes report/report.json and
// report/report.txt under config.output_dir.
nlohmann::json run_report(const Manifest* manifest, const PipelineConfig& config, const ReportRequest& request);

}  // namespace bpeq
