#pragma once

// Independent reference computations for the agreement statistics.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace esir::oracle {

// Raw-sum form: (n Sxy - Sx Sy) / sqrt((n Sxx - Sx^2)(n Syy - Sy^2)).
inline double pearson_direct(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

// Ranks averaged over every ordering of the indices that sorts x; tied
// elements thereby receive the mean of the positions they can occupy.
inline std::vector<double> brute_force_ranks(const std::vector<double>& x) {
  std::vector<std::size_t> perm(x.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> total(x.size(), 0.0);
  std::size_t count = 0;
  do {
    bool sorted = true;
    for (std::size_t i = 1; i < perm.size() && sorted; ++i) sorted = x[perm[i - 1]] <= x[perm[i]];
    if (!sorted) continue;
    for (std::size_t pos = 0; pos < perm.size(); ++pos) total[perm[pos]] += static_cast<double>(pos + 1);
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  for (double& t : total) t /= static_cast<double>(count);
  return total;
}

inline double spearman_brute_force(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson_direct(brute_force_ranks(x), brute_force_ranks(y));
}

struct IccOracle {
  double single;
  double average;
};

// Two-way ANOVA from definitions: deviations of item means, rater means and
// residuals x_ij - item_i - rater_j + grand. grid is [rater][item].
inline IccOracle icc_anova(const std::vector<std::vector<double>>& grid) {
  const std::size_t k = grid.size(), n = grid[0].size();
  double grand = 0.0;
  std::vector<double> item(n, 0.0), rater(k, 0.0);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t i = 0; i < n; ++i) {
      item[i] += grid[r][i] / static_cast<double>(k);
      rater[r] += grid[r][i] / static_cast<double>(n);
      grand += grid[r][i] / static_cast<double>(n * k);
    }
  double ss_items = 0.0, ss_resid = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss_items += static_cast<double>(k) * (item[i] - grand) * (item[i] - grand);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t i = 0; i < n; ++i) {
      const double e = grid[r][i] - item[i] - rater[r] + grand;
      ss_resid += e * e;
    }
  const double bms = ss_items / static_cast<double>(n - 1);
  const double ems = ss_resid / static_cast<double>((n - 1) * (k - 1));
  return {(bms - ems) / (bms + static_cast<double>(k - 1) * ems), (bms - ems) / bms};
}

}  // namespace esir::oracle
