#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

namespace hiermeta {

struct ScalarMaximum {
  double x = 0.0;
  double value = -std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

/// Golden-section search for the maximum of `f` on [lo, hi].
///
/// `f` may return -inf (or NaN, treated as -inf) where it is undefined. The
/// bracket shrinks until it is narrower than `tol`. Both endpoints are
/// evaluated as well, so a maximum on the boundary is found exactly; ties
/// resolve toward `lo`.
template <class F>
ScalarMaximum golden_section_maximize(F&& f, double lo, double hi, double tol,
                                      int max_iter = 500) {
  constexpr double kInvPhi = 0.6180339887498948482;  // (sqrt(5) - 1) / 2
  auto eval = [&](double x) {
    const double v = f(x);
    return std::isnan(v) ? -std::numeric_limits<double>::infinity() : v;
  };

  ScalarMaximum best;
  auto consider = [&](double x, double v) {
    ++best.evaluations;
    if (v > best.value) {
      best.x = x;
      best.value = v;
    }
  };

  const double f_lo = eval(lo);
  consider(lo, f_lo);
  if (!(hi > lo)) return best;

  double a = lo;
  double b = hi;
  double c = b - kInvPhi * (b - a);
  double d = a + kInvPhi * (b - a);
  double fc = eval(c);
  double fd = eval(d);
  for (int it = 0; it < max_iter && (b - a) > tol; ++it) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - kInvPhi * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + kInvPhi * (b - a);
      fd = eval(d);
    }
    best.evaluations += 1;
  }
  const double mid = 0.5 * (a + b);
  consider(c, fc);
  consider(d, fd);
  consider(mid, eval(mid));
  consider(hi, eval(hi));
  // Prefer the lower boundary when it is not worse.
  if (f_lo >= best.value) {
    best.x = lo;
    best.value = f_lo;
  }
  return best;
}

/// Refines an interior maximizer by bisection on the sign of the derivative
/// `g` over [x - h, x + h] clipped to [lo, hi]. Comparing function values
/// cannot resolve a smooth maximum much below sqrt(epsilon) relative; the
/// derivative can. Returns `x` when g does not change sign from + to -.
template <class G>
double polish_stationary_point(G&& g, double x, double lo, double hi, double h) {
  double a = std::max(lo, x - h);
  double b = std::min(hi, x + h);
  if (!(g(a) > 0.0 && g(b) < 0.0)) return x;
  for (int it = 0; it < 200; ++it) {
    const double m = 0.5 * (a + b);
    if (m <= a || m >= b) break;
    const double gm = g(m);
    if (gm > 0.0) {
      a = m;
    } else if (gm < 0.0) {
      b = m;
    } else {
      return m;
    }
  }
  return 0.5 * (a + b);
}

}  // namespace hiermeta
