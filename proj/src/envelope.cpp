#include "windmpc/envelope.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace windmpc {

namespace {

constexpr double kGolden = 0.6180339887498949;

std::string dtos(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

// Least-squares affine fit over a contiguous index range [lo, hi).
AffineSegment ls_fit(const std::vector<std::pair<double, double>>& s, int lo,
                     int hi) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const int n = hi - lo;
  for (int i = lo; i < hi; ++i) {
    sx += s[i].first;
    sy += s[i].second;
    sxx += s[i].first * s[i].first;
    sxy += s[i].first * s[i].second;
  }
  const double det = n * sxx - sx * sx;
  AffineSegment seg;
  if (n >= 2 && std::abs(det) > 1e-30 * (1.0 + sxx * n)) {
    seg.a = (n * sxy - sx * sy) / det;
    seg.b = (sy - seg.a * sx) / n;
  } else {  // degenerate group: horizontal line through the mean
    seg.a = 0.0;
    seg.b = n > 0 ? sy / n : 0.0;
  }
  return seg;
}

double eval_min_affine(const std::vector<AffineSegment>& segs, double K) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& s : segs) m = std::min(m, s.a * K + s.b);
  return m;
}

double max_abs_residual(const std::vector<AffineSegment>& segs,
                        const std::vector<std::pair<double, double>>& s) {
  double r = 0.0;
  for (const auto& [K, f] : s) r = std::max(r, std::abs(eval_min_affine(segs, K) - f));
  return r;
}

// Largest gap between the samples and their upper concave hull, over the
// index range [lo, n).
double hull_deficit(const std::vector<std::pair<double, double>>& s,
                    std::size_t lo) {
  std::vector<std::pair<double, double>> hull;
  auto cross = [](const std::pair<double, double>& a,
                  const std::pair<double, double>& b,
                  const std::pair<double, double>& c) {
    return (b.first - a.first) * (c.second - a.second) -
           (b.second - a.second) * (c.first - a.first);
  };
  for (std::size_t i = lo; i < s.size(); ++i) {
    while (hull.size() >= 2 &&
           cross(hull[hull.size() - 2], hull.back(), s[i]) >= 0.0)
      hull.pop_back();
    hull.push_back(s[i]);
  }
  double worst = 0.0;
  std::size_t h = 0;
  for (std::size_t i = lo; i < s.size(); ++i) {
    const double K = s[i].first;
    while (h + 1 < hull.size() && hull[h + 1].first <= K) ++h;
    double hv = hull[h].second;
    if (h + 1 < hull.size() && hull[h + 1].first > hull[h].first) {
      const double w = (K - hull[h].first) / (hull[h + 1].first - hull[h].first);
      hv = (1.0 - w) * hull[h].second + w * hull[h + 1].second;
    }
    worst = std::max(worst, hv - s[i].second);
  }
  return worst;
}

}  // namespace

double available_power(const TurbineParams& params, const AeroSurface& surface,
                       double v, double K) {
  if (!(v > 0.0)) throw Error("available_power: wind speed must be positive");
  if (K < params.kinetic_min() - 1e-6 * params.kinetic_min() ||
      K > params.kinetic_max() + 1e-6 * params.kinetic_max())
    throw OutOfDomain("available_power: K outside speed-limit range");
  double lambda = params.tip_speed_ratio_from_kinetic(K, v);
  if (lambda < surface.lambda_min() - 1e-9 ||
      lambda > surface.lambda_max() + 1e-9)
    throw OutOfDomain("available_power: implied tip-speed ratio off the grid");
  lambda = std::clamp(lambda, surface.lambda_min(), surface.lambda_max());
  const double cp_max = surface.max_cp_over_theta(lambda);
  const double p =
      0.5 * params.air_density * params.rotor_area * v * v * v * cp_max;
  return std::max(p, 0.0);
}

std::vector<AffineSegment> fit_pwa(
    const std::vector<std::pair<double, double>>& samples_in, int k) {
  if (k < 1) throw Error("fit_pwa: need at least one segment");
  if (static_cast<int>(samples_in.size()) < 2 * k)
    throw Error("fit_pwa: need at least 2k samples");
  auto s = samples_in;
  std::sort(s.begin(), s.end());
  const int n = static_cast<int>(s.size());

  double fmax = 0.0;
  for (const auto& [K, f] : s) fmax = std::max(fmax, std::abs(f));
  fmax = std::max(fmax, 1e-300);
  const double tol = 0.01 * fmax;

  // Concavity gate: no sample may sit more than the tolerance below the
  // upper concave hull of the sample set.
  if (hull_deficit(s, 0) > tol)
    throw NotConcave("fit_pwa: samples convex beyond tolerance");

  // Work on normalized coordinates; the raw K magnitudes (~1e7 J) would
  // wreck the normal equations.
  const double K0 = s.front().first;
  const double Kspan = std::max(s.back().first - K0, 1e-300);
  struct Pt {
    double x, y, w;
  };
  std::vector<Pt> p(n);
  for (int i = 0; i < n; ++i) {
    p[i].x = (s[i].first - K0) / Kspan;
    p[i].y = s[i].second / fmax;
    // Mild relative weighting keeps the low-value tail tight without
    // loosening the peak.
    p[i].w = 1.0 / std::max(p[i].y, 0.05);
  }

  struct Line {
    double a = 0.0, b = 0.0;
  };
  auto wls = [&](int lo, int hi) {
    double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = lo; i < hi; ++i) {
      const double w2 = p[i].w * p[i].w;
      sw += w2;
      sx += w2 * p[i].x;
      sy += w2 * p[i].y;
      sxx += w2 * p[i].x * p[i].x;
      sxy += w2 * p[i].x * p[i].y;
    }
    const double det = sw * sxx - sx * sx;
    Line l;
    if (hi - lo >= 2 && std::abs(det) > 1e-14 * std::max(sw * sxx, 1.0)) {
      l.a = (sw * sxy - sx * sy) / det;
      l.b = (sy - l.a * sx) / sw;
    } else {
      l.a = 0.0;
      l.b = (hi > lo) ? sy / sw : 0.0;
    }
    return l;
  };
  auto eval_lines = [&](const std::vector<Line>& lines, double x) {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& l : lines) m = std::min(m, l.a * x + l.b);
    return m;
  };
  auto rel_residual = [&](const std::vector<Line>& lines) {
    double r = 0.0;
    for (const auto& q : p)
      r = std::max(r, std::abs(eval_lines(lines, q.x) - q.y) /
                          std::max(q.y, 0.05));
    return r;
  };

  auto clamp_partition = [&](std::vector<int> b) {
    b[0] = 0;
    b[k] = n;
    for (int g = 1; g < k; ++g) b[g] = std::clamp(b[g], 2 * g, n - 2 * (k - g));
    for (int g = 1; g < k; ++g) b[g] = std::max(b[g], b[g - 1] + 2);
    return b;
  };

  // Alternating partition / weighted-least-squares refinement. The
  // iteration is not monotone in the min-affine residual, so keep the best
  // iterate rather than the converged one.
  auto run_fit = [&](std::vector<int> boundaries) {
    std::vector<Line> lines(k), best_lines;
    double best = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 50; ++iter) {
      for (int g = 0; g < k; ++g) lines[g] = wls(boundaries[g], boundaries[g + 1]);
      const double res = rel_residual(lines);
      if (res < best) {
        best = res;
        best_lines = lines;
      }
      std::sort(lines.begin(), lines.end(),
                [](const Line& u, const Line& v) { return u.a > v.a; });
      // With slopes sorted decreasing the active (minimal) piece index is
      // non-decreasing in x, so reassignment is a single walk.
      std::vector<int> nb(k + 1, 0);
      nb[k] = n;
      int j = 0;
      for (int i = 0; i < n; ++i) {
        while (j + 1 < k && lines[j + 1].a * p[i].x + lines[j + 1].b <
                                lines[j].a * p[i].x + lines[j].b) {
          ++j;
          nb[j] = i;
        }
      }
      for (int g = j + 1; g < k; ++g) nb[g] = n;
      nb = clamp_partition(nb);
      if (nb == boundaries) break;
      boundaries = nb;
    }
    return best_lines;
  };

  // Deterministic starts: equal-count, half-shifted, and a weighted-SSE
  // dynamic-programming partition (the alternating loop alone stalls in
  // weak fixpoints on strongly curved data).
  std::vector<std::vector<int>> starts;
  {
    std::vector<int> eq(k + 1), sh(k + 1);
    for (int g = 0; g <= k; ++g) {
      eq[g] = g * n / k;
      sh[g] = g * n / k + n / (2 * k);
    }
    starts.push_back(clamp_partition(eq));
    starts.push_back(clamp_partition(sh));

    std::vector<double> pw(n + 1, 0), px(n + 1, 0), py(n + 1, 0),
        pxx(n + 1, 0), pxy(n + 1, 0), pyy(n + 1, 0);
    for (int i = 0; i < n; ++i) {
      const double w2 = p[i].w * p[i].w;
      pw[i + 1] = pw[i] + w2;
      px[i + 1] = px[i] + w2 * p[i].x;
      py[i + 1] = py[i] + w2 * p[i].y;
      pxx[i + 1] = pxx[i] + w2 * p[i].x * p[i].x;
      pxy[i + 1] = pxy[i] + w2 * p[i].x * p[i].y;
      pyy[i + 1] = pyy[i] + w2 * p[i].y * p[i].y;
    }
    auto group_cost = [&](int lo, int hi) {
      const double sw = pw[hi] - pw[lo], sx = px[hi] - px[lo];
      const double sy = py[hi] - py[lo], sxx = pxx[hi] - pxx[lo];
      const double sxy = pxy[hi] - pxy[lo], syy = pyy[hi] - pyy[lo];
      const double det = sw * sxx - sx * sx;
      double a = 0.0, b = sy / sw;
      if (std::abs(det) > 1e-14 * std::max(sw * sxx, 1.0)) {
        a = (sw * sxy - sx * sy) / det;
        b = (sy - a * sx) / sw;
      }
      return syy - 2 * a * sxy - 2 * b * sy + a * a * sxx + 2 * a * b * sx +
             b * b * sw;
    };
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> dp(k + 1, std::vector<double>(n + 1, inf));
    std::vector<std::vector<int>> arg(k + 1, std::vector<int>(n + 1, 0));
    dp[0][0] = 0.0;
    for (int g = 1; g <= k; ++g)
      for (int i = 2 * g; i <= n - 2 * (k - g); ++i)
        for (int j = 2 * (g - 1); j + 2 <= i; ++j) {
          if (dp[g - 1][j] == inf) continue;
          const double c = dp[g - 1][j] + group_cost(j, i);
          if (c < dp[g][i]) {
            dp[g][i] = c;
            arg[g][i] = j;
          }
        }
    std::vector<int> db(k + 1);
    db[k] = n;
    for (int g = k; g >= 1; --g) db[g - 1] = arg[g][db[g]];
    starts.push_back(clamp_partition(db));
  }

  std::vector<Line> best;
  double best_res = std::numeric_limits<double>::infinity();
  for (auto& b : starts) {
    auto lines = run_fit(b);
    const double res = rel_residual(lines);
    if (res < best_res) {
      best_res = res;
      best = lines;
    }
  }

  // Back to raw coordinates, canonical order, near-identical pieces merged
  // and the tail duplicated to k pieces.
  std::vector<AffineSegment> segs(best.size());
  for (std::size_t i = 0; i < best.size(); ++i) {
    segs[i].a = fmax * best[i].a / Kspan;
    segs[i].b = fmax * (best[i].b - best[i].a * K0 / Kspan);
  }
  std::sort(segs.begin(), segs.end(),
            [](const AffineSegment& x, const AffineSegment& y) { return x.a > y.a; });
  const double a_scale =
      std::max(std::abs(segs.front().a), std::abs(segs.back().a));
  std::vector<AffineSegment> merged;
  for (const auto& seg : segs) {
    if (!merged.empty() &&
        std::abs(seg.a - merged.back().a) <= 1e-9 * std::max(a_scale, 1e-300) &&
        std::abs(seg.b - merged.back().b) <= 1e-9 * fmax)
      continue;
    merged.push_back(seg);
  }
  while (static_cast<int>(merged.size()) < k) merged.push_back(merged.back());
  return merged;
}

std::tuple<int, int, double> PwaEnvelope::locate_wind(double v) const {
  const double slack = 1e-9 * (wind_grid.back() - wind_grid.front());
  if (v < wind_grid.front() - slack || v > wind_grid.back() + slack)
    throw OutOfDomain("envelope: wind speed outside grid");
  auto it = std::upper_bound(wind_grid.begin(), wind_grid.end(), v);
  int i = static_cast<int>(it - wind_grid.begin()) - 1;
  i = std::clamp(i, 0, static_cast<int>(wind_grid.size()) - 2);
  const double theta = (v - wind_grid[i]) / (wind_grid[i + 1] - wind_grid[i]);
  return {i, i + 1, std::clamp(theta, 0.0, 1.0)};
}

std::uint64_t envelope_cache_key(const TurbineParams& params,
                                 const AeroSurface& surface,
                                 const EnvelopeOptions& opts) {
  std::uint64_t h = surface.content_hash();
  const double fields[] = {params.J,            params.gearbox_ratio,
                           params.rotor_radius, params.rotor_area,
                           params.air_density,  params.eta_g,
                           params.omega_g_min,  params.omega_g_max,
                           opts.wind_min,       opts.wind_max,
                           opts.wind_step,      double(opts.segments),
                           double(opts.fit_samples),
                           opts.conservative_inner ? 1.0 : 0.0};
  const auto* bytes = reinterpret_cast<const unsigned char*>(fields);
  for (std::size_t i = 0; i < sizeof(fields); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

PwaEnvelope build_envelope(const TurbineParams& params,
                           const AeroSurface& surface,
                           const EnvelopeOptions& opts) {
  if (opts.segments < 1 || opts.fit_samples < 2 * opts.segments + 2)
    throw Error("build_envelope: bad segment/sample counts");
  PwaEnvelope env;
  env.k = opts.segments;
  env.K_min = params.kinetic_min();
  env.K_max = params.kinetic_max();
  env.source_hash = envelope_cache_key(params, surface, opts);
  const int n_w =
      static_cast<int>(std::round((opts.wind_max - opts.wind_min) / opts.wind_step)) + 1;
  if (n_w < 2) throw Error("build_envelope: wind grid needs >= 2 points");
  env.wind_grid.resize(n_w);
  for (int i = 0; i < n_w; ++i) env.wind_grid[i] = opts.wind_min + i * opts.wind_step;

  auto K_of_lambda = [&](double lambda, double v) {
    const double omega_g = lambda * v * params.gearbox_ratio / params.rotor_radius;
    return params.kinetic_at(omega_g);
  };

  env.segments.resize(n_w);
  env.fit_range.resize(n_w);
  for (int wi = 0; wi < n_w; ++wi) {
    const double v = env.wind_grid[wi];
    double K_lo = std::max(env.K_min, K_of_lambda(surface.lambda_min(), v));
    double K_hi = std::min(env.K_max, K_of_lambda(surface.lambda_max(), v));
    if (!(K_hi > K_lo))
      throw Error("build_envelope: surface domain excludes wind speed " +
                  dtos(v));
    const double v3 = v * v * v;
    auto sample_range = [&](double lo, double hi) {
      std::vector<std::pair<double, double>> samples(opts.fit_samples);
      for (int i = 0; i < opts.fit_samples; ++i) {
        const double K = lo + (hi - lo) * i / (opts.fit_samples - 1);
        samples[i] = {K, available_power(params, surface, v, K) / v3};
      }
      return samples;
    };

    // Convex wobbles near the band edges get leveraged across the whole
    // band when an edge piece extrapolates, so trim both ends until any
    // remaining concavity defect is tiny or sits in the interior where a
    // min-of-affine tolerates it.
    std::vector<AffineSegment> fitted;
    double lo = K_lo, hi = K_hi;
    {
      const auto all = sample_range(K_lo, K_hi);
      const int n = static_cast<int>(all.size());
      double fmax = 0.0;
      for (const auto& [K, f] : all) fmax = std::max(fmax, f);
      const double tol = 5e-4 * std::max(fmax, 1e-300);
      int a = 0, b = n;
      auto worst_gap = [&](int& where) {
        // Hull gap over the window [a, b).
        std::vector<std::pair<double, double>> win(all.begin() + a,
                                                   all.begin() + b);
        std::vector<std::pair<double, double>> hull;
        auto cross = [](const std::pair<double, double>& u,
                        const std::pair<double, double>& w,
                        const std::pair<double, double>& c) {
          return (w.first - u.first) * (c.second - u.second) -
                 (w.second - u.second) * (c.first - u.first);
        };
        for (const auto& pt : win) {
          while (hull.size() >= 2 &&
                 cross(hull[hull.size() - 2], hull.back(), pt) >= 0.0)
            hull.pop_back();
          hull.push_back(pt);
        }
        double worst = 0.0;
        std::size_t h = 0;
        where = a;
        for (int i = 0; i < static_cast<int>(win.size()); ++i) {
          const double K = win[i].first;
          while (h + 1 < hull.size() && hull[h + 1].first <= K) ++h;
          double hv = hull[h].second;
          if (h + 1 < hull.size() && hull[h + 1].first > hull[h].first) {
            const double w =
                (K - hull[h].first) / (hull[h + 1].first - hull[h].first);
            hv = (1.0 - w) * hull[h].second + w * hull[h + 1].second;
          }
          if (hv - win[i].second > worst) {
            worst = hv - win[i].second;
            where = a + i;
          }
        }
        return worst;
      };
      const double tol_interior = 6e-3 * std::max(fmax, 1e-300);
      while (b - a > 2 * opts.segments + 4) {
        int where = a;
        const double gap = worst_gap(where);
        if (gap <= tol) break;
        const double frac = double(where - a) / double(b - a);
        // Small interior defects are fine for a two-sided fit; edge defects
        // (and any large one) get trimmed toward the offending side.
        if (gap <= tol_interior && frac >= 0.3 && frac <= 0.7) break;
        if (frac < 0.5)
          ++a;
        else
          --b;
      }
      lo = all[a].first;
      hi = all[b - 1].first;
    }
    try {
      fitted = fit_pwa(sample_range(lo, hi), opts.segments);
    } catch (const NotConcave&) {
      throw NotConcave("build_envelope: available power not concave at v = " +
                       dtos(v));
    }
    if (opts.conservative_inner) {
      const auto samples = sample_range(lo, hi);
      double over = 0.0;
      for (const auto& [K, f] : samples)
        over = std::max(over, eval_min_affine(fitted, K) - f);
      for (auto& seg : fitted) seg.b -= over;
    }
    // Store distinct pieces only (strictly decreasing slopes).
    std::vector<AffineSegment> distinct;
    for (const auto& seg : fitted)
      if (distinct.empty() || seg.a < distinct.back().a) distinct.push_back(seg);
    env.segments[wi] = std::move(distinct);
    env.fit_range[wi] = {lo, hi};

    // Construction-time residual guarantee: 1 % of the peak at this speed.
    const auto samples = sample_range(lo, hi);
    double fmax = 0.0;
    for (const auto& [K, f] : samples) fmax = std::max(fmax, f);
    if (max_abs_residual(env.segments[wi], samples) > 0.01 * fmax)
      throw Error("build_envelope: PWA residual above 1% at v = " + dtos(v));
  }
  return env;
}

double eval_envelope(const PwaEnvelope& env, double v, double K) {
  const double kslack = 1e-9 * env.K_max;
  if (K < env.K_min - kslack || K > env.K_max + kslack)
    throw OutOfDomain("envelope: K outside validity interval");
  const auto [i1, i2, th] = env.locate_wind(v);
  const double v1 = env.wind_grid[i1], v2 = env.wind_grid[i2];
  const double p1 = eval_min_affine(env.segments[i1], K) * v1 * v1 * v1;
  const double p2 = eval_min_affine(env.segments[i2], K) * v2 * v2 * v2;
  return std::max((1.0 - th) * p1 + th * p2, 0.0);
}

std::vector<AffineSegment> torque_limit_cuts(
    const TurbineParams& params, const std::vector<double>& K_grid) {
  if (K_grid.size() < 3)
    throw Error("torque_limit_cuts: need at least 3 grid points");
  std::vector<AffineSegment> cuts;
  cuts.reserve(K_grid.size());
  for (double K0 : K_grid) {
    if (!(K0 > 0)) throw Error("torque_limit_cuts: K grid must be positive");
    const double f = params.eta_g * params.omega_from_kinetic(K0) * params.T_g_max;
    cuts.push_back({f / (2.0 * K0), 0.5 * f});
  }
  return cuts;
}

void save_envelope(const PwaEnvelope& env, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write envelope cache: " + file.string());
  out << "windmpc-envelope v1\n";
  out << "hash " << env.source_hash << "\n";
  out << "k " << env.k << " K_min " << dtos(env.K_min) << " K_max "
      << dtos(env.K_max) << "\n";
  out << "winds " << env.wind_grid.size() << "\n";
  for (std::size_t i = 0; i < env.wind_grid.size(); ++i) {
    out << dtos(env.wind_grid[i]) << " " << dtos(env.fit_range[i].first) << " "
        << dtos(env.fit_range[i].second) << " " << env.segments[i].size();
    for (const auto& seg : env.segments[i])
      out << " " << dtos(seg.a) << " " << dtos(seg.b);
    out << "\n";
  }
}

std::optional<PwaEnvelope> load_envelope(const std::filesystem::path& file,
                                         std::uint64_t expected_hash) {
  std::ifstream in(file);
  if (!in) return std::nullopt;
  std::string word, ver;
  in >> word >> ver;
  if (word != "windmpc-envelope" || ver != "v1") return std::nullopt;
  PwaEnvelope env;
  std::uint64_t hash = 0;
  in >> word >> hash;
  if (word != "hash" || hash != expected_hash) return std::nullopt;
  std::string k1, k2, k3;
  in >> k1 >> env.k >> k2 >> env.K_min >> k3 >> env.K_max;
  std::size_t n_w = 0;
  in >> word >> n_w;
  if (!in || word != "winds") return std::nullopt;
  env.wind_grid.resize(n_w);
  env.segments.resize(n_w);
  env.fit_range.resize(n_w);
  for (std::size_t i = 0; i < n_w; ++i) {
    std::size_t count = 0;
    in >> env.wind_grid[i] >> env.fit_range[i].first >>
        env.fit_range[i].second >> count;
    env.segments[i].resize(count);
    for (auto& seg : env.segments[i]) in >> seg.a >> seg.b;
  }
  if (!in) return std::nullopt;
  env.source_hash = hash;
  return env;
}

}  // namespace windmpc
