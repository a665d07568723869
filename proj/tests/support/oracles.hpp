// SPDX-License-Identifier: Apache-2.0
//
// Naive-loop reference implementations. Deliberately written with scalar
// loops over std::vector so they share nothing with the Eigen/graph code.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "scalecomm/numcore/rng.hpp"
#include "scalecomm/numcore/tensor.hpp"

namespace scalecomm::oracle {

using Rows = std::vector<std::vector<double>>;

inline Rows rows_of(const num::Matrix& m) {
  Rows r(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (long i = 0; i < m.rows(); ++i) {
    for (long j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  }
  return r;
}

inline num::Matrix random_matrix(num::Rng& rng, long r, long c, double scale = 1.0) {
  num::Matrix m(r, c);
  for (long i = 0; i < r; ++i) {
    for (long j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, scale);
  }
  return m;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / (std::sqrt(dot(a, a)) * std::sqrt(dot(b, b)));
}

// -log( exp(s_pos/τ) / Σ_j exp(s_j/τ) ), with a max shift for stability.
inline double nce_term(const std::vector<double>& sims, std::size_t pos, double tau) {
  double mx = sims[0] / tau;
  for (double s : sims) mx = std::max(mx, s / tau);
  double z = 0;
  for (double s : sims) z += std::exp(s / tau - mx);
  return -(sims[pos] / tau - mx - std::log(z));
}

inline double x_contrast(const Rows& m, const Rows& keys, double tau) {
  double total = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::vector<double> s;
    for (std::size_t j = 0; j < keys.size(); ++j) s.push_back(cosine(m[i], keys[j]));
    total += nce_term(s, i, tau);
  }
  return total / static_cast<double>(m.size());
}

// Positive in column 0, then every negative.
inline double queue_contrast(const Rows& m, const Rows& pos, const Rows& neg, double tau) {
  double total = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::vector<double> s{cosine(m[i], pos[i])};
    for (const auto& n : neg) s.push_back(cosine(m[i], n));
    total += nce_term(s, 0, tau);
  }
  return total / static_cast<double>(m.size());
}

inline double proto(const Rows& m, const Rows& protos, const Rows& codes, double tau) {
  double total = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::vector<double> s;
    for (const auto& p : protos) s.push_back(cosine(m[i], p) / tau);
    double mx = s[0];
    for (double v : s) mx = std::max(mx, v);
    double z = 0;
    for (double v : s) z += std::exp(v - mx);
    for (std::size_t k = 0; k < protos.size(); ++k) total -= codes[i][k] * (s[k] - mx - std::log(z));
  }
  return total / static_cast<double>(m.size());
}

inline double cka(const Rows& x, const Rows& y) {
  const std::size_t n = x.size(), p = x[0].size(), q = y[0].size();
  Rows xc = x, yc = y;
  for (std::size_t j = 0; j < p; ++j) {
    double mu = 0;
    for (std::size_t i = 0; i < n; ++i) mu += x[i][j];
    mu /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) xc[i][j] -= mu;
  }
  for (std::size_t j = 0; j < q; ++j) {
    double mu = 0;
    for (std::size_t i = 0; i < n; ++i) mu += y[i][j];
    mu /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) yc[i][j] -= mu;
  }
  auto gram_fro2 = [&](const Rows& a, std::size_t da, const Rows& b, std::size_t db) {
    double s = 0;
    for (std::size_t u = 0; u < da; ++u) {
      for (std::size_t v = 0; v < db; ++v) {
        double e = 0;
        for (std::size_t i = 0; i < n; ++i) e += a[i][u] * b[i][v];
        s += e * e;
      }
    }
    return s;
  };
  return gram_fro2(xc, p, yc, q) / (std::sqrt(gram_fro2(xc, p, xc, p)) * std::sqrt(gram_fro2(yc, q, yc, q)));
}

inline double nmi(const std::vector<int>& a, const std::vector<int>& b) {
  const double n = static_cast<double>(a.size());
  std::vector<int> la(a), lb(b);
  std::sort(la.begin(), la.end());
  la.erase(std::unique(la.begin(), la.end()), la.end());
  std::sort(lb.begin(), lb.end());
  lb.erase(std::unique(lb.begin(), lb.end()), lb.end());
  if (la.size() < 2 || lb.size() < 2) return 0.0;
  std::vector<std::vector<double>> table(la.size(), std::vector<double>(lb.size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto r = static_cast<std::size_t>(std::lower_bound(la.begin(), la.end(), a[i]) - la.begin());
    const auto c = static_cast<std::size_t>(std::lower_bound(lb.begin(), lb.end(), b[i]) - lb.begin());
    table[r][c] += 1;
  }
  std::vector<double> ra(la.size(), 0.0), cb(lb.size(), 0.0);
  for (std::size_t r = 0; r < la.size(); ++r) {
    for (std::size_t c = 0; c < lb.size(); ++c) {
      ra[r] += table[r][c];
      cb[c] += table[r][c];
    }
  }
  double mi = 0, ha = 0, hb = 0;
  for (std::size_t r = 0; r < la.size(); ++r) {
    for (std::size_t c = 0; c < lb.size(); ++c) {
      if (table[r][c] > 0) mi += table[r][c] / n * std::log(n * table[r][c] / (ra[r] * cb[c]));
    }
  }
  for (double v : ra) ha -= v / n * std::log(v / n);
  for (double v : cb) hb -= v / n * std::log(v / n);
  return mi / (0.5 * (ha + hb));
}

// Argmax-cosine prototype per message, then NMI against the labels.
inline double proto_nmi(const Rows& m, const Rows& protos, const std::vector<int>& labels) {
  std::vector<int> assign;
  for (const auto& row : m) {
    int best = 0;
    for (std::size_t k = 1; k < protos.size(); ++k) {
      if (cosine(row, protos[k]) > cosine(row, protos[static_cast<std::size_t>(best)])) best = static_cast<int>(k);
    }
    assign.push_back(best);
  }
  return nmi(assign, labels);
}

// δ_t = r_t + γ(1−d_t)V_{t+1} − V_t; A_t = δ_t + γλ(1−d_t)A_{t+1}, by hand.
inline std::vector<double> gae(const std::vector<double>& r, const std::vector<double>& v,
                               const std::vector<bool>& done, double bootstrap, double gamma, double lam) {
  const std::size_t T = r.size();
  std::vector<double> adv(T, 0.0);
  double next_adv = 0.0;
  double next_v = bootstrap;
  for (std::size_t k = 0; k < T; ++k) {
    const std::size_t t = T - 1 - k;
    const double nd = done[t] ? 0.0 : 1.0;
    const double delta = r[t] + gamma * nd * next_v - v[t];
    adv[t] = delta + gamma * lam * nd * next_adv;
    next_adv = adv[t];
    next_v = v[t];
  }
  return adv;
}

}  // namespace scalecomm::oracle
