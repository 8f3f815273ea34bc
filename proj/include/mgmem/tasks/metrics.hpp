#ifndef MGMEM_TASKS_METRICS_HPP
#define MGMEM_TASKS_METRICS_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace mgmem::tasks {

struct PRF {
  double precision = 0, recall = 0, f = 0;
};

/// Precision, recall and F-score of probabilities thresholded at tau against
/// a binary mask. Zero denominators give 0, except the all-empty case which gives 1.
template <typename P>
PRF metrics_prf(std::span<const P> pred, std::span<const std::uint8_t> mask, double tau = 0.5) {
  if (pred.size() != mask.size()) throw std::invalid_argument("metrics_prf: size mismatch");
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("metrics_prf: tau must lie in (0, 1)");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const bool p = static_cast<double>(pred[k]) >= tau;
    const bool y = mask[k] != 0;
    tp += p && y;
    fp += p && !y;
    fn += !p && y;
  }
  if (tp + fp + fn == 0) return {1, 1, 1};
  PRF out;
  out.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  out.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  const double s = out.precision + out.recall;
  out.f = s > 0 ? 2 * out.precision * out.recall / s : 0.0;
  return out;
}

template <typename P>
PRF metrics_prf(const std::vector<P>& pred, const std::vector<std::uint8_t>& mask, double tau = 0.5) {
  return metrics_prf(std::span<const P>(pred), std::span<const std::uint8_t>(mask), tau);
}

/// Fraction of bits that differ after thresholding probabilities at 0.5.
template <typename P>
double metrics_bit_error(std::span<const P> pred, std::span<const std::uint8_t> target) {
  if (pred.size() != target.size()) throw std::invalid_argument("metrics_bit_error: size mismatch");
  if (pred.empty()) return 0.0;
  std::size_t wrong = 0;
  for (std::size_t k = 0; k < pred.size(); ++k) wrong += (static_cast<double>(pred[k]) >= 0.5) != (target[k] != 0);
  return static_cast<double>(wrong) / static_cast<double>(pred.size());
}

template <typename P>
double metrics_bit_error(const std::vector<P>& pred, const std::vector<std::uint8_t>& target) {
  return metrics_bit_error(std::span<const P>(pred), std::span<const std::uint8_t>(target));
}

/// Mean and population standard deviation.
struct MeanStd {
  double mean = 0, std = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  if (v.empty()) return out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  for (double x : v) out.std += (x - out.mean) * (x - out.mean);
  out.std = std::sqrt(out.std / static_cast<double>(v.size()));
  return out;
}

/// Pearson correlation; 0 when either side is constant.
inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("pearson: size mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace mgmem::tasks

#endif  // MGMEM_TASKS_METRICS_HPP
