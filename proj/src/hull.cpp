// SPDX-License-Identifier: Apache-2.0
// Incremental 3-D convex hull, used only for workspace volume summaries.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "gex/kinematics.hpp"

namespace gex {

namespace {

struct Face {
  int a, b, c;
  Vec3 normal;
  double offset;
  bool alive = true;
};

std::uint64_t edge_key(int u, int v) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(u)) << 32) | static_cast<std::uint32_t>(v);
}

struct Hull {
  std::vector<Face> faces;
  std::vector<int> alive;
  Vec3 interior = Vec3::Zero();
};

// Returns an empty hull for degenerate input.
Hull build_hull(std::span<const Vec3> pts) {
  Hull hull;
  const int n = static_cast<int>(pts.size());
  if (n < 4) return hull;

  Vec3 lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double scale = (hi - lo).norm();
  if (scale == 0.0) return hull;
  const double eps = 1e-11 * scale;

  // Initial tetrahedron from extreme points.
  int i0 = 0;
  for (int i = 1; i < n; ++i)
    if (pts[i].x() < pts[i0].x()) i0 = i;
  int i1 = -1;
  double best = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = (pts[i] - pts[i0]).norm();
    if (d > best) best = d, i1 = i;
  }
  if (i1 < 0 || best <= eps) return hull;
  const Vec3 dir = (pts[i1] - pts[i0]).normalized();
  int i2 = -1;
  best = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = (pts[i] - pts[i0]).cross(dir).norm();
    if (d > best) best = d, i2 = i;
  }
  if (i2 < 0 || best <= eps) return hull;
  const Vec3 pn = (pts[i1] - pts[i0]).cross(pts[i2] - pts[i0]).normalized();
  int i3 = -1;
  best = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = std::abs(pn.dot(pts[i] - pts[i0]));
    if (d > best) best = d, i3 = i;
  }
  if (i3 < 0 || best <= eps) return hull;

  const Vec3 interior = (pts[i0] + pts[i1] + pts[i2] + pts[i3]) / 4.0;
  std::vector<Face>& faces = hull.faces;
  std::unordered_map<std::uint64_t, int> edges;

  auto add_face = [&](int a, int b, int c) {
    Vec3 nrm = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
    nrm.normalize();
    if (nrm.dot(interior - pts[a]) > 0.0) {
      std::swap(b, c);
      nrm = -nrm;
    }
    const int id = static_cast<int>(faces.size());
    faces.push_back({a, b, c, nrm, nrm.dot(pts[a]), true});
    edges[edge_key(a, b)] = id;
    edges[edge_key(b, c)] = id;
    edges[edge_key(c, a)] = id;
  };
  add_face(i0, i1, i2);
  add_face(i0, i1, i3);
  add_face(i0, i2, i3);
  add_face(i1, i2, i3);

  std::vector<int>& alive = hull.alive;
  alive = {0, 1, 2, 3};
  std::vector<int> visible;
  std::vector<char> is_visible;
  std::vector<std::pair<int, int>> horizon;

  for (int p = 0; p < n; ++p) {
    if (p == i0 || p == i1 || p == i2 || p == i3) continue;
    visible.clear();
    for (int f : alive) {
      if (faces[f].normal.dot(pts[p]) - faces[f].offset > eps) visible.push_back(f);
    }
    if (visible.empty()) continue;

    is_visible.assign(faces.size(), 0);
    for (int f : visible) is_visible[f] = 1;
    horizon.clear();
    for (int f : visible) {
      const int vs[3] = {faces[f].a, faces[f].b, faces[f].c};
      for (int e = 0; e < 3; ++e) {
        const int u = vs[e], v = vs[(e + 1) % 3];
        const auto it = edges.find(edge_key(v, u));
        if (it == edges.end() || !is_visible[it->second]) horizon.emplace_back(u, v);
      }
    }
    for (int f : visible) {
      faces[f].alive = false;
      const int vs[3] = {faces[f].a, faces[f].b, faces[f].c};
      for (int e = 0; e < 3; ++e) {
        const auto it = edges.find(edge_key(vs[e], vs[(e + 1) % 3]));
        if (it != edges.end() && it->second == f) edges.erase(it);
      }
    }
    for (const auto& [u, v] : horizon) {
      const int id = static_cast<int>(faces.size());
      Vec3 nrm = (pts[v] - pts[u]).cross(pts[p] - pts[u]).normalized();
      faces.push_back({u, v, p, nrm, nrm.dot(pts[u]), true});
      edges[edge_key(u, v)] = id;
      edges[edge_key(v, p)] = id;
      edges[edge_key(p, u)] = id;
    }
    alive.erase(std::remove_if(alive.begin(), alive.end(), [&](int f) { return !faces[f].alive; }),
                alive.end());
    for (std::size_t k = faces.size() - horizon.size(); k < faces.size(); ++k) {
      alive.push_back(static_cast<int>(k));
    }
  }

  hull.interior = interior;
  return hull;
}

}  // namespace

double convex_hull_volume(std::span<const Vec3> pts) {
  if (pts.size() < 4) return 0.0;
  // Discard points strictly inside the hull of a few extreme points before the full pass.
  std::vector<Vec3> extremes;
  for (int dx = -1; dx <= 1; ++dx)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dz = -1; dz <= 1; ++dz) {
        if (dx == 0 && dy == 0 && dz == 0) continue;
        const Vec3 d(dx, dy, dz);
        std::size_t best = 0;
        for (std::size_t i = 1; i < pts.size(); ++i)
          if (d.dot(pts[i]) > d.dot(pts[best])) best = i;
        extremes.push_back(pts[best]);
      }
  const Hull coarse = build_hull(extremes);
  std::vector<Vec3> candidates = extremes;
  if (coarse.faces.empty()) {
    candidates.assign(pts.begin(), pts.end());
  } else {
    for (const auto& p : pts) {
      bool inside = true;
      for (int f : coarse.alive) {
        if (coarse.faces[f].normal.dot(p) - coarse.faces[f].offset >= 0.0) {
          inside = false;
          break;
        }
      }
      if (!inside) candidates.push_back(p);
    }
  }
  const Hull hull = build_hull(candidates);
  double vol = 0.0;
  for (int f : hull.alive) {
    const auto& fc = hull.faces[f];
    const Vec3& c = hull.interior;
    vol += (candidates[fc.a] - c).dot((candidates[fc.b] - c).cross(candidates[fc.c] - c));
  }
  return vol / 6.0;
}

}  // namespace gex
