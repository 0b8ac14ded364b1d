#include "aerofuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "aerofuse/error.hpp"

namespace aerofuse {

void CompensatedSum::add(double x) {
  const double t = sum_ + x;
  if (std::abs(sum_) >= std::abs(x))
    carry_ += (sum_ - t) + x;
  else
    carry_ += (x - t) + sum_;
  sum_ = t;
}

double relative_error(double measured, double truth) {
  if (!(truth > 0.0)) throw Error(ErrorCode::ZeroGroundTruth, "ground-truth distance must be positive");
  return std::abs(measured - truth) / truth * 100.0;
}

MarkerErrors marker_errors(std::span<const MarkerPair> pairs) {
  if (pairs.empty()) throw Error(ErrorCode::InvalidArgument, "no marker pairs");
  MarkerErrors out;
  CompensatedSum exy, ez, txy, tz;
  for (const auto& p : pairs) {
    PairError e;
    e.id_a = p.id_a;
    e.id_b = p.id_b;
    e.measured_xy = (p.measured_a.head<2>() - p.measured_b.head<2>()).norm();
    e.measured_z = std::abs(p.measured_a.z() - p.measured_b.z());
    e.truth_xy = p.truth_xy;
    e.truth_z = p.truth_z;
    e.rel_xy_pct = relative_error(e.measured_xy, p.truth_xy);
    e.rel_z_pct = relative_error(e.measured_z, p.truth_z);
    exy.add(e.rel_xy_pct / 100.0 * p.truth_xy);
    ez.add(e.rel_z_pct / 100.0 * p.truth_z);
    txy.add(p.truth_xy);
    tz.add(p.truth_z);
    out.pairs.push_back(e);
  }
  const auto n = static_cast<double>(pairs.size());
  out.e_xy = exy.value() / n;
  out.e_z = ez.value() / n;
  out.rel_xy_pct = out.e_xy / (txy.value() / n) * 100.0;
  out.rel_z_pct = out.e_z / (tz.value() / n) * 100.0;
  return out;
}

namespace {

std::vector<double> valid_values(const HeightRaster& r) {
  std::vector<double> v;
  for (double h : r.height)
    if (!std::isnan(h)) v.push_back(h);
  return v;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double population_std(const std::vector<double>& v) {
  CompensatedSum s;
  for (double x : v) s.add(x);
  const double mean = s.value() / static_cast<double>(v.size());
  CompensatedSum q;
  for (double x : v) q.add((x - mean) * (x - mean));
  return std::sqrt(q.value() / static_cast<double>(v.size()));
}

}  // namespace

double coverage(const HeightRaster& raster) {
  if (raster.rows <= 0 || raster.cols <= 0) throw Error(ErrorCode::InvalidArgument, "empty raster");
  const auto valid = std::count_if(raster.height.begin(), raster.height.end(), [](double h) { return !std::isnan(h); });
  return static_cast<double>(valid) / (static_cast<double>(raster.rows) * raster.cols);
}

double sigma_global(const HeightRaster& raster) {
  const auto v = valid_values(raster);
  if (v.size() < 2) throw Error(ErrorCode::TooFewCells, "global std needs at least two valid cells");
  return population_std(v);
}

double nmad(const HeightRaster& raster) {
  auto v = valid_values(raster);
  if (v.empty()) throw Error(ErrorCode::TooFewCells, "NMAD needs at least one valid cell");
  const double med = median_of(v);
  for (double& x : v) x = std::abs(x - med);
  return 1.4826 * median_of(std::move(v));
}

LocalStd mean_local_std(const HeightRaster& raster, int k) {
  if (k < 3 || k % 2 == 0) throw Error(ErrorCode::InvalidArgument, "window size must be odd and at least 3");
  const int h = k / 2;
  CompensatedSum total;
  LocalStd out;
  std::vector<double> window;
  for (int r = 0; r < raster.rows; ++r) {
    for (int c = 0; c < raster.cols; ++c) {
      if (std::isnan(raster.at(r, c))) continue;
      window.clear();
      for (int rr = std::max(0, r - h); rr <= std::min(raster.rows - 1, r + h); ++rr)
        for (int cc = std::max(0, c - h); cc <= std::min(raster.cols - 1, c + h); ++cc)
          if (!std::isnan(raster.at(rr, cc))) window.push_back(raster.at(rr, cc));
      if (window.size() <= 1) continue;
      total.add(population_std(window));
      ++out.cells;
    }
  }
  out.value = out.cells ? total.value() / static_cast<double>(out.cells) : 0.0;
  return out;
}

QualityReport evaluate_dsm(const HeightRaster& raster, int k) {
  QualityReport q;
  q.window_k = k;
  q.coverage = coverage(raster);
  q.valid_cells = valid_values(raster).size();
  q.sigma_global = q.valid_cells >= 2 ? sigma_global(raster) : 0.0;
  q.nmad = q.valid_cells >= 1 ? nmad(raster) : 0.0;
  q.mean_local_std = mean_local_std(raster, k).value;
  return q;
}

std::string format_report(const QualityReport& q) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "coverage=%.6f\nsigma_global_m=%.6f\nnmad_m=%.6f\nmean_local_std_m=%.6f\nwindow_k=%d\nvalid_cells=%zu\n",
                q.coverage, q.sigma_global, q.nmad, q.mean_local_std, q.window_k, q.valid_cells);
  return buf;
}

}  // namespace aerofuse
