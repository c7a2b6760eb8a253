#pragma once

// Brute-force references for the segmentation and rank metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace testing {

// Every threshold interval: predict score > t for t below the minimum, at
// each distinct value (which includes the empty prediction at the maximum).
inline double brute_dice(const std::vector<float>& s, const std::vector<std::uint8_t>& g) {
  std::size_t pos = 0;
  for (auto x : g) pos += x;
  if (pos == 0) return 0.0;
  std::vector<double> cuts{-INFINITY};
  for (float x : s) cuts.push_back(x);
  double best = 0.0;
  for (double t : cuts) {
    std::size_t tp = 0, np = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] > t) {
        ++np;
        tp += g[i];
      }
    }
    best = std::max(best, 2.0 * static_cast<double>(tp) / static_cast<double>(pos + np));
  }
  return best;
}

// Mean over positives of the precision at that positive's score level.
inline double brute_ap(const std::vector<float>& s, const std::vector<std::uint8_t>& g) {
  double sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!g[i]) continue;
    ++pos;
    std::size_t tp = 0, np = 0;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (s[j] >= s[i]) {
        ++np;
        tp += g[j];
      }
    }
    sum += static_cast<double>(tp) / static_cast<double>(np);
  }
  return sum / static_cast<double>(pos);
}

inline std::vector<double> brute_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double less = 0, equal = 0;
    for (double y : x) {
      if (y < x[i]) ++less;
      if (y == x[i]) ++equal;
    }
    r[i] = less + (equal + 1) / 2.0;
  }
  return r;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}


}  // namespace testing
