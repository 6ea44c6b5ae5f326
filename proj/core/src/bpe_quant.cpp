#include "bpeq/bpe_quant.hpp"

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include "csv.hpp"

namespace bpeq {

void DceSeries::validate() const {
  if (timepoints.size() < 2) {
    throw InvalidArgument("DCE series needs at least two timepoints");
  }
  for (std::size_t i = 1; i < timepoints.size(); ++i) {
    if (!timepoints[i].geometry().same_frame(timepoints[0].geometry())) {
      throw GeometryError("geometry mismatch: DCE timepoint " + std::to_string(i) + " differs from S0");
    }
  }
}

void BpeParams::validate() const {
  if (!(pe_threshold >= 0.0)) {
    throw InvalidArgument("pe_threshold must be >= 0");
  }
  if (!std::isfinite(s0_floor)) {
    throw InvalidArgument("s0_floor must be finite");
  }
}

PeMap compute_pe_map(const DceSeries& series, const BpeParams& params) {
  series.validate();
  params.validate();
  const auto s0 = series.pre().voxels();
  const auto s1 = series.post().voxels();
  std::vector<float> pe(s0.size(), 0.0F);
  std::vector<std::uint8_t> valid(s0.size(), 0);
  for (std::size_t i = 0; i < s0.size(); ++i) {
    if (s0[i] > params.s0_floor) {
      pe[i] = static_cast<float>(100.0 * (static_cast<double>(s1[i]) - s0[i]) / s0[i]);
      valid[i] = 1;
    }
  }
  const Geometry& g = series.pre().geometry();
  return PeMap{Volume3D(g, std::move(pe)), Mask3D(g, std::move(valid))};
}

Mask3D compute_bpe_mask(const PeMap& pe, const Mask3D& fgt, const BpeParams& params) {
  params.validate();
  require_same_lattice(pe.pe.geometry(), fgt.geometry(), "PE map vs FGT mask");
  const float t = static_cast<float>(params.pe_threshold);
  const auto p = pe.pe.voxels();
  const auto v = pe.valid.voxels();
  const auto f = fgt.voxels();
  std::vector<std::uint8_t> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    out[i] = (f[i] != 0 && v[i] != 0 && p[i] >= t) ? 1 : 0;
  }
  return Mask3D(fgt.geometry(), std::move(out));
}

BpeMetrics compute_metrics(const Mask3D& breast, const Mask3D& fgt, const Mask3D& bpe, const PeMap& pe) {
  require_same_lattice(breast.geometry(), fgt.geometry(), "breast vs FGT mask");
  require_same_lattice(bpe.geometry(), fgt.geometry(), "BPE vs FGT mask");
  require_same_lattice(pe.pe.geometry(), fgt.geometry(), "PE map vs FGT mask");
  if (!mask_subset(bpe, fgt)) {
    throw InvalidArgument("BPE mask is not contained in the FGT mask");
  }
  BpeMetrics m;
  m.breast_volume_mm3 = volume_of_mask(breast);
  m.fgt_volume_mm3 = volume_of_mask(fgt);
  m.bpe_volume_mm3 = volume_of_mask(bpe);

  double pe_sum = 0.0;
  std::int64_t n = 0;
  const auto b = bpe.voxels();
  const auto p = pe.pe.voxels();
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b[i] != 0) {
      pe_sum += p[i];
      ++n;
    }
  }
  m.bpe_integrated_intensity = n > 0 ? m.bpe_volume_mm3 * (pe_sum / static_cast<double>(n)) : 0.0;
  if (m.fgt_volume_mm3 > 0.0) {
    m.bpe_fgt_ratio_pct = 100.0 * m.bpe_volume_mm3 / m.fgt_volume_mm3;
  }
  if (m.breast_volume_mm3 > 0.0) {
    m.bpe_breast_ratio_pct = 100.0 * m.bpe_volume_mm3 / m.breast_volume_mm3;
  }
  return m;
}

std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

std::string optional_text(const std::optional<double>& v) { return v ? format_number(*v) : "NA"; }

double parse_number(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw FormatError("metrics CSV line " + std::to_string(line) + ": bad number \"" + s + "\"");
  }
  return v;
}

std::optional<double> parse_optional(const std::string& s, std::size_t line) {
  if (s == "NA" || s.empty()) {
    return std::nullopt;
  }
  return parse_number(s, line);
}

}  // namespace

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << kMetricsCsvHeader << '\n';
  for (const MetricsRow& r : rows) {
    const BpeMetrics& m = r.metrics;
    out << csv::escape(r.case_id) << ',' << csv::escape(r.method) << ',' << format_number(m.breast_volume_mm3) << ','
        << format_number(m.fgt_volume_mm3) << ',' << format_number(m.bpe_volume_mm3) << ','
        << optional_text(m.bpe_fgt_ratio_pct) << ',' << optional_text(m.bpe_breast_ratio_pct) << ','
        << format_number(m.bpe_integrated_intensity) << '\n';
  }
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  const csv::Table table = csv::read(in);
  if (csv::join(table.header) != kMetricsCsvHeader) {
    throw FormatError("metrics CSV header does not match the expected columns");
  }
  std::vector<MetricsRow> rows;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& f = table.rows[i];
    const std::size_t line = i + 2;
    if (f.size() != 8) {
      throw FormatError("metrics CSV line " + std::to_string(line) + ": expected 8 fields");
    }
    MetricsRow r;
    r.case_id = f[0];
    r.method = f[1];
    r.metrics.breast_volume_mm3 = parse_number(f[2], line);
    r.metrics.fgt_volume_mm3 = parse_number(f[3], line);
    r.metrics.bpe_volume_mm3 = parse_number(f[4], line);
    r.metrics.bpe_fgt_ratio_pct = parse_optional(f[5], line);
    r.metrics.bpe_breast_ratio_pct = parse_optional(f[6], line);
    r.metrics.bpe_integrated_intensity = parse_number(f[7], line);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace bpeq
