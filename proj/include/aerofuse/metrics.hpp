#pragma once

#include <span>
#include <string>
#include <vector>

#include "aerofuse/fusion.hpp"

namespace aerofuse {

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x);
  double value() const { return sum_ + carry_; }

 private:
  double sum_ = 0.0;
  double carry_ = 0.0;
};

/// |measured - truth| / truth in percent. Throws ZeroGroundTruth when truth <= 0.
double relative_error(double measured, double truth);

struct MarkerPair {
  std::string id_a;
  std::string id_b;
  Vec3 measured_a = Vec3::Zero();
  Vec3 measured_b = Vec3::Zero();
  double truth_xy = 0.0;  ///< planimetric separation, meters
  double truth_z = 0.0;   ///< elevation difference, meters
};

struct PairError {
  std::string id_a;
  std::string id_b;
  double measured_xy = 0.0;
  double measured_z = 0.0;
  double truth_xy = 0.0;
  double truth_z = 0.0;
  double rel_xy_pct = 0.0;
  double rel_z_pct = 0.0;
};

struct MarkerErrors {
  double e_xy = 0.0;  ///< meters, mean over pairs
  double e_z = 0.0;
  double rel_xy_pct = 0.0;  ///< e_xy relative to the mean truth separation
  double rel_z_pct = 0.0;
  std::vector<PairError> pairs;
};

MarkerErrors marker_errors(std::span<const MarkerPair> pairs);

/// |V| / (rows * cols).
double coverage(const HeightRaster& raster);
/// Population standard deviation of the valid cells. Throws TooFewCells below 2.
double sigma_global(const HeightRaster& raster);
/// 1.4826 x median absolute deviation from the median. Throws TooFewCells when empty.
double nmad(const HeightRaster& raster);

struct LocalStd {
  double value = 0.0;
  std::size_t cells = 0;  ///< |V'|, cells whose window holds more than one value
  bool defined() const { return cells > 0; }
};

/// Mean over valid cells of the population std inside the k x k window
/// (the cell included, clipped at the border, invalid cells skipped).
LocalStd mean_local_std(const HeightRaster& raster, int k = 3);

struct QualityReport {
  double coverage = 0.0;
  double sigma_global = 0.0;
  double nmad = 0.0;
  double mean_local_std = 0.0;
  int window_k = 3;
  std::size_t valid_cells = 0;
};

QualityReport evaluate_dsm(const HeightRaster& raster, int k = 3);

/// key=value lines in a fixed order.
std::string format_report(const QualityReport& report);

}  // namespace aerofuse
