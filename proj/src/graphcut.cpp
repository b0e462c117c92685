#include "regsynth/graphcut.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace regsynth {

Maxflow::Maxflow(int n_nodes)
    : n_(n_nodes), head_(std::size_t(n_nodes) + 2, -1), src_(std::size_t(n_nodes), 0.0),
      snk_(std::size_t(n_nodes), 0.0), source_(n_nodes), sink_(n_nodes + 1) {}

int Maxflow::add_arc(int u, int v, double cap) {
  const int id = int(to_.size());
  to_.push_back(v);
  cap_.push_back(cap);
  next_.push_back(head_[std::size_t(u)]);
  head_[std::size_t(u)] = id;
  to_.push_back(u);
  cap_.push_back(0.0);
  next_.push_back(head_[std::size_t(v)]);
  head_[std::size_t(v)] = id + 1;
  return id;
}

void Maxflow::add_unary(int node, double cost0, double cost1) {
  // cut p->sink pays cost0 (p in S means label 0), source->p pays cost1
  snk_[std::size_t(node)] += cost0;
  src_[std::size_t(node)] += cost1;
}

void Maxflow::add_directed(int from, int to, double cost) {
  if (cost <= 0.0) return;
  add_arc(from, to, cost);
}

bool Maxflow::bfs() {
  level_.assign(std::size_t(n_) + 2, -1);
  std::vector<int> queue;
  queue.push_back(source_);
  level_[std::size_t(source_)] = 0;
  for (std::size_t qi = 0; qi < queue.size(); ++qi) {
    const int u = queue[qi];
    for (int e = head_[std::size_t(u)]; e >= 0; e = next_[std::size_t(e)]) {
      if (cap_[std::size_t(e)] > 1e-12 && level_[std::size_t(to_[std::size_t(e)])] < 0) {
        level_[std::size_t(to_[std::size_t(e)])] = level_[std::size_t(u)] + 1;
        queue.push_back(to_[std::size_t(e)]);
      }
    }
  }
  return level_[std::size_t(sink_)] >= 0;
}

double Maxflow::dfs(int u, double limit) {
  if (u == sink_) return limit;
  double sent = 0.0;
  for (int& e = iter_[std::size_t(u)]; e >= 0; e = next_[std::size_t(e)]) {
    const int v = to_[std::size_t(e)];
    if (cap_[std::size_t(e)] > 1e-12 && level_[std::size_t(v)] == level_[std::size_t(u)] + 1) {
      const double d = dfs(v, std::min(limit - sent, cap_[std::size_t(e)]));
      if (d > 0.0) {
        cap_[std::size_t(e)] -= d;
        cap_[std::size_t(e ^ 1)] += d;
        sent += d;
        if (sent >= limit) return sent;
      } else {
        level_[std::size_t(v)] = -1;
      }
    }
  }
  return sent;
}

double Maxflow::run() {
  if (!built_) {
    // realise accumulated t-links, folding out the shared constant
    for (int p = 0; p < n_; ++p) {
      const double c0 = snk_[std::size_t(p)], c1 = src_[std::size_t(p)];
      const double base = std::min(c0, c1);
      if (c1 - base > 0.0) add_arc(source_, p, c1 - base);
      if (c0 - base > 0.0) add_arc(p, sink_, c0 - base);
    }
    built_ = true;
  }
  double flow = 0.0;
  while (bfs()) {
    iter_ = head_;
    double f;
    while ((f = dfs(source_, std::numeric_limits<double>::max())) > 0.0) flow += f;
  }
  return flow;
}

bool Maxflow::source_side(int node) const { return level_[std::size_t(node)] >= 0; }

std::vector<double> discrete_registration_unaries(const Image2D& m,
                                                  const SynthesisPrediction& pred,
                                                  const LandmarkSet& landmarks,
                                                  const MrfParams& mrf,
                                                  const ShiftCatalog& catalog) {
  if (pred.width != m.width || pred.height != m.height)
    throw std::invalid_argument("graphcut: prediction grid mismatch");
  if (catalog.size() < 1) throw std::invalid_argument("graphcut: empty shift catalog");
  const int s_count = catalog.size();
  std::vector<double> unary(std::size_t(m.width) * m.height * std::size_t(s_count));
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const std::size_t p = std::size_t(y) * m.width + x;
      const double mu = pred.mean[p];
      const double inv2v = 0.5 / pred.variance[p];
      double* out = unary.data() + p * std::size_t(s_count);
      for (int s = 0; s < s_count; ++s) {
        const double v = bilinear_sample(m, x + catalog.dx[std::size_t(s)] / m.spacing,
                                         y + catalog.dy[std::size_t(s)] / m.spacing);
        out[s] = (v - mu) * (v - mu) * inv2v +
                 mrf.shift_weight * catalog.norm2[std::size_t(s)];
      }
    }
  // landmark quadratics at the pixel nearest to each k_h
  const double inv2k = 0.5 / (landmarks.sigma_mm * landmarks.sigma_mm);
  for (const auto& lm : landmarks.points) {
    const int px = int(std::lround(lm.hx / m.spacing));
    const int py = int(std::lround(lm.hy / m.spacing));
    if (px < 0 || px >= m.width || py < 0 || py >= m.height) continue;
    double* out = unary.data() + (std::size_t(py) * m.width + px) * std::size_t(s_count);
    for (int s = 0; s < s_count; ++s) {
      const double rx = lm.hx - lm.mx + catalog.dx[std::size_t(s)];
      const double ry = lm.hy - lm.my + catalog.dy[std::size_t(s)];
      out[s] += (rx * rx + ry * ry) * inv2k;
    }
  }
  return unary;
}

double discrete_registration_energy(const std::vector<int>& labels, int width, int height,
                                    const std::vector<double>& unary,
                                    const MrfParams& mrf, const ShiftCatalog& catalog) {
  const int s_count = catalog.size();
  double e = 0.0;
  for (std::size_t p = 0; p < labels.size(); ++p)
    e += unary[p * std::size_t(s_count) + std::size_t(labels[p])];
  auto diff2 = [&](int a, int b) {
    const double dx = catalog.dx[std::size_t(a)] - catalog.dx[std::size_t(b)];
    const double dy = catalog.dy[std::size_t(a)] - catalog.dy[std::size_t(b)];
    return dx * dx + dy * dy;
  };
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t p = std::size_t(y) * width + x;
      if (x + 1 < width) e += mrf.smooth_weight * diff2(labels[p], labels[p + 1]);
      if (y + 1 < height)
        e += mrf.smooth_weight * diff2(labels[p], labels[p + std::size_t(width)]);
    }
  return e;
}

GraphcutResult map_registration_graphcut(const Image2D& m, const SynthesisPrediction& pred,
                                         const LandmarkSet& landmarks, const MrfParams& mrf,
                                         const ShiftCatalog& catalog, int max_cycles) {
  const int w = m.width, h = m.height, s_count = catalog.size();
  const std::vector<double> unary =
      discrete_registration_unaries(m, pred, landmarks, mrf, catalog);
  const std::size_t n = std::size_t(w) * h;

  // start from the decoupled (unary-only) optimum
  std::vector<int> labels(n, 0);
  for (std::size_t p = 0; p < n; ++p) {
    const double* u = unary.data() + p * std::size_t(s_count);
    labels[p] = int(std::min_element(u, u + s_count) - u);
  }

  GraphcutResult result;
  double energy = discrete_registration_energy(labels, w, h, unary, mrf, catalog);
  result.energy_trace.push_back(energy);

  // truncation keeps each expansion move representable as a cut
  const double tau = 64.0 * catalog.step_mm * catalog.step_mm; // (2 * step * 4)^2
  auto vcost = [&](int a, int b) {
    const double dx = catalog.dx[std::size_t(a)] - catalog.dx[std::size_t(b)];
    const double dy = catalog.dy[std::size_t(a)] - catalog.dy[std::size_t(b)];
    return mrf.smooth_weight * std::min(dx * dx + dy * dy, tau);
  };

  std::vector<int> proposal(n);
  for (int cycle = 0; cycle < max_cycles && mrf.smooth_weight > 0.0; ++cycle) {
    bool any_accepted = false;
    for (int alpha = 0; alpha < s_count; ++alpha) {
      Maxflow graph{int(n)};
      for (std::size_t p = 0; p < n; ++p) {
        const double* u = unary.data() + p * std::size_t(s_count);
        graph.add_unary(int(p), u[labels[p]], u[alpha]);
      }
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const std::size_t p = std::size_t(y) * w + x;
          for (int k = 0; k < 2; ++k) {
            if (k == 0 && x + 1 >= w) continue;
            if (k == 1 && y + 1 >= h) continue;
            const std::size_t q = k == 0 ? p + 1 : p + std::size_t(w);
            // binary move energy: E(0,0)=A keep/keep, E(0,1)=B, E(1,0)=C, E(1,1)=0
            const double b_cost = vcost(labels[p], alpha);
            const double c_cost = vcost(alpha, labels[q]);
            const double a_cost = std::min(vcost(labels[p], labels[q]), b_cost + c_cost);
            // E = A + (C-A) yp - C yq + (B+C-A)(1-yp) yq
            graph.add_unary(int(p), 0.0, c_cost - a_cost);
            graph.add_unary(int(q), 0.0, -c_cost);
            graph.add_directed(int(p), int(q), b_cost + c_cost - a_cost);
          }
        }
      graph.run();
      for (std::size_t p = 0; p < n; ++p)
        proposal[p] = graph.source_side(int(p)) ? labels[p] : alpha;
      const double e_new = discrete_registration_energy(proposal, w, h, unary, mrf, catalog);
      // acceptance on the true (untruncated) energy
      if (e_new < energy - 1e-12) {
        labels = proposal;
        energy = e_new;
        result.energy_trace.push_back(energy);
        ++result.moves_accepted;
        any_accepted = true;
      }
    }
    if (!any_accepted) break;
  }

  result.final_energy = energy;
  result.field = DeformationField(w, h, m.spacing);
  for (std::size_t p = 0; p < n; ++p) {
    result.field.dx[p] = catalog.dx[std::size_t(labels[p])];
    result.field.dy[p] = catalog.dy[std::size_t(labels[p])];
  }
  return result;
}

} // namespace regsynth
