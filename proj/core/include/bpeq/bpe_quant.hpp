#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bpeq/volume.hpp"

namespace bpeq {

// Pre-contrast (index 0) and post-contrast (index 1, ...) volumes sharing
// dims, spacing and origin.
struct DceSeries {
  std::vector<Volume3D> timepoints;

  void validate() const;
  const Volume3D& pre() const { return timepoints.at(0); }
  const Volume3D& post() const { return timepoints.at(1); }
};

struct BpeParams {
  double pe_threshold = 50.0;  // percent, inclusive
  double s0_floor = 1e-6;      // PE undefined where S0 <= floor

  void validate() const;
};

struct PeMap {
  Volume3D pe;  // percent; 0 where undefined
  Mask3D valid;
};

// pe = 100 * (S1 - S0) / S0 where S0 > s0_floor.
PeMap compute_pe_map(const DceSeries& series, const BpeParams& params);

// fgt AND valid AND pe >= pe_threshold (compared in float precision).
Mask3D compute_bpe_mask(const PeMap& pe, const Mask3D& fgt, const BpeParams& params);

struct BpeMetrics {
  double breast_volume_mm3 = 0.0;
  double fgt_volume_mm3 = 0.0;
  double bpe_volume_mm3 = 0.0;
  // Empty when the denominator mask is empty.
  std::optional<double> bpe_fgt_ratio_pct;
  std::optional<double> bpe_breast_ratio_pct;
  // bpe_volume_mm3 * mean PE over BPE voxels (mm^3 * percent).
  double bpe_integrated_intensity = 0.0;
};

// Throws GeometryError on lattice mismatch and InvalidArgument when bpe is
// not contained in fgt.
BpeMetrics compute_metrics(const Mask3D& breast, const Mask3D& fgt, const Mask3D& bpe, const PeMap& pe);

struct MetricsRow {
  std::string case_id;
  std::string method;
  BpeMetrics metrics;
};

// Column order of the metrics CSV.
inline constexpr const char* kMetricsCsvHeader =
    "case_id,method,breast_volume_mm3,fgt_volume_mm3,bpe_volume_mm3,bpe_fgt_ratio_pct,bpe_breast_ratio_pct,"
    "bpe_integrated_intensity";

// Numbers use the shortest round-trip decimal form; undefined ratios are
// written as "NA".
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(std::istream& in);

// Shortest decimal text that parses back to exactly `v`.
std::string format_number(double v);

}  // namespace bpeq
