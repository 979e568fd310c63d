#pragma once

// Brute-force reference implementations used as test oracles. They are
// written directly from the definitions and share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

#include "dfcn/tensor.hpp"

namespace oracle {

/// Zero-padded "same" cross-correlation with dilation d, six nested loops.
template <typename T>
std::vector<double> conv(const dfcn::BasicTensor<T>& x, const dfcn::BasicTensor<T>& w, const dfcn::BasicTensor<T>& b,
                         int d) {
  const std::int64_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::int64_t co = w.dim(0), k = w.dim(2);
  const std::int64_t r = k / 2;
  std::vector<double> out(static_cast<std::size_t>(co * h * wd), 0.0);
  for (std::int64_t o = 0; o < co; ++o) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t xx = 0; xx < wd; ++xx) {
        double s = static_cast<double>(b[static_cast<std::size_t>(o)]);
        for (std::int64_t i = 0; i < ci; ++i) {
          for (std::int64_t ky = 0; ky < k; ++ky) {
            for (std::int64_t kx = 0; kx < k; ++kx) {
              const std::int64_t sy = y + (ky - r) * d, sx = xx + (kx - r) * d;
              if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
              s += static_cast<double>(w[static_cast<std::size_t>(((o * ci + i) * k + ky) * k + kx)]) *
                   static_cast<double>(x[static_cast<std::size_t>((i * h + sy) * wd + sx)]);
            }
          }
        }
        out[static_cast<std::size_t>((o * h + y) * wd + xx)] = s;
      }
    }
  }
  return out;
}

/// gamma * (x - mean) / sqrt(var + eps) + beta per channel, population variance.
inline std::vector<double> instance_norm(const std::vector<double>& x, std::int64_t c, std::int64_t hw,
                                         const std::vector<double>& gamma, const std::vector<double>& beta,
                                         double eps) {
  std::vector<double> out(x.size());
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double mean = 0.0;
    for (std::int64_t p = 0; p < hw; ++p) mean += x[static_cast<std::size_t>(ch * hw + p)];
    mean /= static_cast<double>(hw);
    double var = 0.0;
    for (std::int64_t p = 0; p < hw; ++p) {
      const double dlt = x[static_cast<std::size_t>(ch * hw + p)] - mean;
      var += dlt * dlt;
    }
    var /= static_cast<double>(hw);
    for (std::int64_t p = 0; p < hw; ++p) {
      const auto i = static_cast<std::size_t>(ch * hw + p);
      out[i] = gamma[static_cast<std::size_t>(ch)] * (x[i] - mean) / std::sqrt(var + eps) +
               beta[static_cast<std::size_t>(ch)];
    }
  }
  return out;
}

/// Shannon entropy in nats of a probability vector.
inline double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

inline double count_entropy(const std::vector<std::int64_t>& counts) {
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  if (total == 0.0) return 0.0;
  std::vector<double> p;
  for (auto c : counts) p.push_back(static_cast<double>(c) / total);
  return entropy(p);
}

/**
 * Where pixel (y, x) of an H x W image lands after `rot` counter-clockwise
 * quarter turns and then an optional left-right mirror. Returns the
 * destination coordinate and the destination shape.
 */
struct Placement {
  std::int64_t y, x, h, w;
};

inline Placement dihedral_place(std::int64_t y, std::int64_t x, std::int64_t h, std::int64_t w, int op) {
  const int rot = op % 4;
  const bool flip = op >= 4;
  for (int k = 0; k < rot; ++k) {
    // One counter-clockwise quarter turn: (y, x) in H x W -> (W - 1 - x, y) in W x H.
    const std::int64_t ny = w - 1 - x, nx = y;
    y = ny;
    x = nx;
    std::swap(h, w);
  }
  if (flip) x = w - 1 - x;
  return {y, x, h, w};
}

template <typename T>
dfcn::BasicTensor<T> dihedral(const dfcn::BasicTensor<T>& t, int op) {
  const std::size_t r = t.rank();
  const std::int64_t h = t.dim(r - 2), w = t.dim(r - 1);
  const std::int64_t lead = static_cast<std::int64_t>(t.size()) / (h * w);
  const Placement shape = dihedral_place(0, 0, h, w, op);
  dfcn::Shape s = t.shape();
  s[r - 2] = shape.h;
  s[r - 1] = shape.w;
  dfcn::BasicTensor<T> out(s, T{});
  for (std::int64_t l = 0; l < lead; ++l) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const Placement p = dihedral_place(y, x, h, w, op);
        out[static_cast<std::size_t>((l * p.h + p.y) * p.w + p.x)] = t[static_cast<std::size_t>((l * h + y) * w + x)];
      }
    }
  }
  return out;
}

/// Best average fold entropy over every assignment of cases to folds with the given sizes.
inline double best_split_entropy(const std::vector<std::vector<std::int64_t>>& case_counts,
                                 const std::vector<std::size_t>& sizes) {
  const std::size_t n = case_counts.size(), folds = sizes.size(), classes = case_counts[0].size();
  std::vector<int> fold_of(n, 0);
  double best = -1.0;
  std::function<void(std::size_t, std::vector<std::size_t>&)> rec = [&](std::size_t i, std::vector<std::size_t>& fill) {
    if (i == n) {
      double sum = 0.0;
      for (std::size_t f = 0; f < folds; ++f) {
        std::vector<std::int64_t> c(classes, 0);
        for (std::size_t k = 0; k < n; ++k) {
          if (fold_of[k] == static_cast<int>(f)) {
            for (std::size_t j = 0; j < classes; ++j) c[j] += case_counts[k][j];
          }
        }
        sum += count_entropy(c);
      }
      best = std::max(best, sum / static_cast<double>(folds));
      return;
    }
    for (std::size_t f = 0; f < folds; ++f) {
      if (fill[f] == sizes[f]) continue;
      ++fill[f];
      fold_of[i] = static_cast<int>(f);
      rec(i + 1, fill);
      --fill[f];
    }
  };
  std::vector<std::size_t> fill(folds, 0);
  rec(0, fill);
  return best;
}

/// Distinct 1-D offsets reachable by summing one tap from each dilated 3-tap kernel.
inline std::set<std::int64_t> reachable(const std::vector<int>& dilations) {
  std::set<std::int64_t> cur{0};
  for (int d : dilations) {
    std::set<std::int64_t> next;
    for (auto o : cur) {
      for (int t = -1; t <= 1; ++t) next.insert(o + t * d);
    }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace oracle
