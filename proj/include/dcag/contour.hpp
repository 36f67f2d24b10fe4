#pragma once

// Marching-squares iso-lines on a rectilinear grid. Corner values equal to
// the level count as "above". Saddle cells are disambiguated with the mean
// of the four corners. Crossings are linearly interpolated along cell edges,
// and segments sharing an edge crossing are chained into polylines.

#include <algorithm>
#include <cstddef>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "dcag/error.hpp"
#include "dcag/format.hpp"
#include "dcag/tensor.hpp"

namespace dcag {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

using Polyline = std::vector<Point>;

/// Iso-lines of `values` ([nx x ny], values(i, j) at (xs[i], ys[j])) at `level`.
/// Closed loops repeat their first vertex at the end. Levels outside the
/// observed value range yield no polylines.
inline std::vector<Polyline> marching_squares(std::span<const double> xs, std::span<const double> ys,
                                              const Tensor& values, double level) {
  const std::size_t nx = xs.size(), ny = ys.size();
  if (values.rank() != 2 || values.dim(0) != nx || values.dim(1) != ny) {
    throw ShapeError("marching_squares: values " + shape_to_string(values.shape()) + " do not match a " +
                     std::to_string(nx) + "x" + std::to_string(ny) + " grid");
  }
  if (nx < 2 || ny < 2) return {};
  const auto [lo_it, hi_it] = std::minmax_element(values.data().begin(), values.data().end());
  if (level < *lo_it || level > *hi_it) return {};

  const auto above = [&](std::size_t i, std::size_t j) { return values(i, j) >= level; };

  // Edge ids: horizontal edge (i,j)-(i+1,j) -> i*ny + j; vertical edge
  // (i,j)-(i,j+1) -> nx*ny + i*ny + j.
  const std::size_t vertical_base = nx * ny;
  const auto h_edge = [&](std::size_t i, std::size_t j) { return i * ny + j; };
  const auto v_edge = [&](std::size_t i, std::size_t j) { return vertical_base + i * ny + j; };

  const auto crossing = [&](std::size_t edge) {
    const bool vertical = edge >= vertical_base;
    const std::size_t local = vertical ? edge - vertical_base : edge;
    const std::size_t i = local / ny, j = local % ny;
    const std::size_t i2 = vertical ? i : i + 1, j2 = vertical ? j + 1 : j;
    const double v0 = values(i, j), v1 = values(i2, j2);
    const double t = (level - v0) / (v1 - v0);
    return Point{xs[i] + t * (xs[i2] - xs[i]), ys[j] + t * (ys[j2] - ys[j])};
  };

  std::vector<std::pair<std::size_t, std::size_t>> segments;
  for (std::size_t i = 0; i + 1 < nx; ++i) {
    for (std::size_t j = 0; j + 1 < ny; ++j) {
      // Corners counter-clockwise from (i,j); edge k joins corner k and k+1.
      const bool c[4] = {above(i, j), above(i + 1, j), above(i + 1, j + 1), above(i, j + 1)};
      const std::size_t e[4] = {h_edge(i, j), v_edge(i + 1, j), h_edge(i, j + 1), v_edge(i, j)};
      std::vector<std::size_t> crossed;
      for (std::size_t k = 0; k < 4; ++k) {
        if (c[k] != c[(k + 1) % 4]) crossed.push_back(e[k]);
      }
      if (crossed.size() == 2) {
        segments.emplace_back(crossed[0], crossed[1]);
      } else if (crossed.size() == 4) {
        const double center = (values(i, j) + values(i + 1, j) + values(i + 1, j + 1) + values(i, j + 1)) / 4.0;
        if (c[0] != (center >= level)) {
          // Corners 0 and 2 are cut off from the center region.
          segments.emplace_back(e[3], e[0]);
          segments.emplace_back(e[1], e[2]);
        } else {
          segments.emplace_back(e[0], e[1]);
          segments.emplace_back(e[2], e[3]);
        }
      }
    }
  }

  // Each edge crossing joins at most two segments (the cells on either side).
  std::vector<std::vector<std::size_t>> incident(2 * nx * ny);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    incident[segments[s].first].push_back(s);
    incident[segments[s].second].push_back(s);
  }
  std::vector<bool> used(segments.size(), false);

  const auto trace = [&](std::size_t start_seg, std::size_t start_edge) {
    Polyline line{crossing(start_edge)};
    std::size_t seg = start_seg, edge = start_edge;
    while (true) {
      used[seg] = true;
      edge = segments[seg].first == edge ? segments[seg].second : segments[seg].first;
      line.push_back(crossing(edge));
      std::size_t next = segments.size();
      for (std::size_t cand : incident[edge]) {
        if (!used[cand]) next = cand;
      }
      if (next == segments.size()) break;
      seg = next;
    }
    return line;
  };

  std::vector<Polyline> lines;
  // Open lines start at crossings with a single incident segment.
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (used[s]) continue;
    for (std::size_t end : {segments[s].first, segments[s].second}) {
      if (!used[s] && incident[end].size() == 1) lines.push_back(trace(s, end));
    }
  }
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (!used[s]) lines.push_back(trace(s, segments[s].first));
  }
  return lines;
}

/// Bilinear interpolation of the grid surface at p (p inside the grid).
inline double bilinear(std::span<const double> xs, std::span<const double> ys, const Tensor& values, Point p) {
  const auto cell = [](std::span<const double> axis, double v) {
    std::size_t i = static_cast<std::size_t>(std::upper_bound(axis.begin(), axis.end(), v) - axis.begin());
    i = i == 0 ? 0 : i - 1;
    return std::min(i, axis.size() - 2);
  };
  const std::size_t i = cell(xs, p.x), j = cell(ys, p.y);
  const double tx = (p.x - xs[i]) / (xs[i + 1] - xs[i]);
  const double ty = (p.y - ys[j]) / (ys[j + 1] - ys[j]);
  return (1 - tx) * (1 - ty) * values(i, j) + tx * (1 - ty) * values(i + 1, j) + tx * ty * values(i + 1, j + 1) +
         (1 - tx) * ty * values(i, j + 1);
}

/// One `x,y` vertex per line; a blank line separates polylines.
inline void write_polylines(std::ostream& os, const std::vector<Polyline>& lines) {
  for (std::size_t k = 0; k < lines.size(); ++k) {
    if (k) os << '\n';
    for (const Point& p : lines[k]) os << format_number(p.x) << ',' << format_number(p.y) << '\n';
  }
}

}  // namespace dcag
