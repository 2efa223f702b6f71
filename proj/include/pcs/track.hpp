#pragma once

// Track geometry: occupancy grid, closed centerline with Frenet projection,
// raceline representation, and disc-footprint collision queries.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcs/csv.hpp"
#include "pcs/math.hpp"

namespace pcs {

// Row-major boolean occupancy. Cell (ix, iy) covers
// [origin + ix*res, origin + (ix+1)*res) on each axis; iy = 0 is the lowest y.
// Anything outside the grid counts as occupied.
struct GridMap {
  int width = 0;
  int height = 0;
  double resolution = 0.05;
  Vec2 origin{0.0, 0.0};
  std::vector<std::uint8_t> occ;

  bool in_bounds(int ix, int iy) const { return ix >= 0 && iy >= 0 && ix < width && iy < height; }
  bool occupied(int ix, int iy) const {
    if (!in_bounds(ix, iy)) return true;
    return occ[static_cast<std::size_t>(iy) * width + ix] != 0;
  }
  void set(int ix, int iy, bool value) { occ[static_cast<std::size_t>(iy) * width + ix] = value ? 1 : 0; }
  int cell_x(double x) const { return static_cast<int>(std::floor((x - origin.x) / resolution)); }
  int cell_y(double y) const { return static_cast<int>(std::floor((y - origin.y) / resolution)); }
  bool occupied_at(double x, double y) const { return occupied(cell_x(x), cell_y(y)); }
  double max_x() const { return origin.x + width * resolution; }
  double max_y() const { return origin.y + height * resolution; }
};

struct FrenetPose {
  double s = 0.0;  // arc length along the centerline, wrapped to [0, length)
  double d = 0.0;  // signed lateral offset, positive left of travel direction
};

struct TrackMap {
  GridMap grid;
  std::vector<Vec2> centerline;  // resampled, closed implicitly (last connects to first)
  std::vector<double> cum_s;     // cum_s[i] = arc length from point 0 to point i
  double total_length = 0.0;

  std::size_t size() const { return centerline.size(); }
  Vec2 point(std::size_t i) const { return centerline[i % centerline.size()]; }
  Vec2 segment_dir(std::size_t i) const {
    Vec2 a = point(i), b = point(i + 1);
    return (b - a).normalized();
  }
  double segment_len(std::size_t i) const {
    double next = (i + 1 < centerline.size()) ? cum_s[i + 1] : total_length;
    return next - cum_s[i];
  }
  double wrap_s(double s) const {
    s = std::fmod(s, total_length);
    if (s < 0.0) s += total_length;
    return s;
  }
};

struct RacelineWaypoint {
  double x = 0.0, y = 0.0;
  double theta = 0.0;
  double v = 1.0;
};

struct Raceline {
  std::vector<RacelineWaypoint> waypoints;
  std::vector<double> cumulative_s;
  double total_length = 0.0;

  std::size_t size() const { return waypoints.size(); }
  Vec2 position(std::size_t i) const {
    const auto& w = waypoints[i % waypoints.size()];
    return {w.x, w.y};
  }
  double wrap_s(double s) const {
    s = std::fmod(s, total_length);
    if (s < 0.0) s += total_length;
    return s;
  }
};

struct TrackOptions {
  double resolution = 0.05;       // meters/cell for grid files without metadata
  Vec2 origin{0.0, 0.0};
  int free_threshold = 128;       // PGM: pixel >= threshold is free
  double resample_spacing = 0.1;  // target centerline spacing (m)
  double closure_ratio = 3.0;     // closing segment vs median input segment
};

namespace detail {

inline GridMap load_pgm(const std::string& path, const TrackOptions& opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("track: cannot open grid file " + path);
  auto next_token = [&in, &path]() {
    std::string tok;
    for (;;) {
      int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
        continue;
      }
      if (std::isspace(c)) {
        in.get();
        continue;
      }
      break;
    }
    if (!(in >> tok)) throw std::runtime_error("track: truncated PGM " + path);
    return tok;
  };
  std::string magic = next_token();
  if (magic != "P2" && magic != "P5") throw std::runtime_error("track: unsupported PGM magic '" + magic + "'");
  int width = std::stoi(next_token());
  int height = std::stoi(next_token());
  int maxval = std::stoi(next_token());
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error("track: bad PGM dimensions in " + path);
  GridMap g;
  g.width = width;
  g.height = height;
  g.resolution = opt.resolution;
  g.origin = opt.origin;
  g.occ.assign(static_cast<std::size_t>(width) * height, 1);
  // File rows run top to bottom; internal row 0 is the lowest y.
  auto store = [&](int file_row, int col, int value) {
    int iy = height - 1 - file_row;
    g.occ[static_cast<std::size_t>(iy) * width + col] = value >= opt.free_threshold ? 0 : 1;
  };
  if (magic == "P2") {
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) store(r, c, std::stoi(next_token()));
  } else {
    in.get();  // single whitespace after maxval
    std::vector<char> buf(static_cast<std::size_t>(width) * height);
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
      throw std::runtime_error("track: truncated PGM pixel data " + path);
    for (int r = 0; r < height; ++r)
      for (int c = 0; c < width; ++c) store(r, c, static_cast<std::uint8_t>(buf[static_cast<std::size_t>(r) * width + c]));
  }
  return g;
}

inline GridMap load_grid_csv(const std::string& path, const TrackOptions& opt) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("track: cannot open grid file " + path);
  std::vector<std::vector<int>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    std::vector<int> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      if (c.empty()) continue;
      if (c != "0" && c != "1") throw std::runtime_error("track: grid CSV cells must be 0/1, got '" + c + "'");
      row.push_back(c == "1" ? 1 : 0);
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("track: empty grid CSV " + path);
  std::size_t width = rows[0].size();
  for (const auto& r : rows)
    if (r.size() != width) throw std::runtime_error("track: ragged grid CSV " + path);
  GridMap g;
  g.width = static_cast<int>(width);
  g.height = static_cast<int>(rows.size());
  g.resolution = opt.resolution;
  g.origin = opt.origin;
  g.occ.assign(width * rows.size(), 0);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::size_t iy = rows.size() - 1 - r;  // first CSV row is the top of the map
    for (std::size_t c = 0; c < width; ++c) g.occ[iy * width + c] = static_cast<std::uint8_t>(rows[r][c]);
  }
  return g;
}

inline std::vector<Vec2> load_polyline_csv(const std::string& path) {
  CsvTable t = read_csv(path);
  int cx = t.require_column("x");
  int cy = t.require_column("y");
  std::vector<Vec2> pts;
  pts.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    if (static_cast<int>(row.size()) <= std::max(cx, cy))
      throw std::runtime_error("track: short row in " + path);
    std::string ctx = path + " row " + std::to_string(i + 2);
    pts.push_back({csv_double(row[cx], ctx), csv_double(row[cy], ctx)});
  }
  return pts;
}

}  // namespace detail

// True iff an occupied cell (or out-of-bounds space) intersects the disc of
// footprint_radius centered at (x, y). A zero radius degenerates to a point test.
inline bool is_collision(const GridMap& grid, double x, double y, double footprint_radius) {
  double r = std::max(footprint_radius, 0.0);
  if (x - r < grid.origin.x || y - r < grid.origin.y || x + r > grid.max_x() || y + r > grid.max_y())
    return true;
  int ix0 = grid.cell_x(x - r), ix1 = grid.cell_x(x + r);
  int iy0 = grid.cell_y(y - r), iy1 = grid.cell_y(y + r);
  for (int iy = iy0; iy <= iy1; ++iy) {
    for (int ix = ix0; ix <= ix1; ++ix) {
      if (!grid.occupied(ix, iy)) continue;
      double cx0 = grid.origin.x + ix * grid.resolution;
      double cy0 = grid.origin.y + iy * grid.resolution;
      double nx = pcs::clamp(x, cx0, cx0 + grid.resolution);
      double ny = pcs::clamp(y, cy0, cy0 + grid.resolution);
      double dx = x - nx, dy = y - ny;
      if (dx * dx + dy * dy <= r * r) return true;
    }
  }
  return false;
}

inline bool is_collision(const TrackMap& map, double x, double y, double footprint_radius) {
  return is_collision(map.grid, x, y, footprint_radius);
}

// Nearest-segment Frenet projection. Equidistant segments resolve to the one
// with lower cumulative s.
inline FrenetPose to_frenet(const TrackMap& map, double x, double y) {
  const Vec2 p{x, y};
  double best_d2 = std::numeric_limits<double>::infinity();
  FrenetPose best;
  const std::size_t n = map.size();
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 a = map.point(i);
    Vec2 b = map.point(i + 1);
    Vec2 ab = b - a;
    double len2 = ab.norm2();
    double t = len2 > 0.0 ? pcs::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    Vec2 proj = a + ab * t;
    double d2 = (p - proj).norm2();
    if (d2 < best_d2 - 1e-15) {
      best_d2 = d2;
      Vec2 dir = ab.normalized();
      double side = dir.cross(p - proj) >= 0.0 ? 1.0 : -1.0;
      best.s = map.wrap_s(map.cum_s[i] + t * std::sqrt(len2));
      best.d = side * std::sqrt(d2);
    }
  }
  return best;
}

inline Vec2 frenet_to_world(const TrackMap& map, const FrenetPose& f) {
  double s = map.wrap_s(f.s);
  const std::size_t n = map.size();
  std::size_t i = 0;
  // cum_s is uniform after resampling; direct index then fix up.
  double spacing = map.total_length / static_cast<double>(n);
  i = std::min(static_cast<std::size_t>(s / spacing), n - 1);
  while (i + 1 < n && map.cum_s[i + 1] <= s) ++i;
  while (i > 0 && map.cum_s[i] > s) --i;
  Vec2 dir = map.segment_dir(i);
  Vec2 base = map.point(i) + dir * (s - map.cum_s[i]);
  return base + dir.left() * f.d;
}

// Heading of the centerline segment containing arc position s.
inline double centerline_heading(const TrackMap& map, double s) {
  double sw = map.wrap_s(s);
  const std::size_t n = map.size();
  double spacing = map.total_length / static_cast<double>(n);
  std::size_t i = std::min(static_cast<std::size_t>(sw / spacing), n - 1);
  while (i + 1 < n && map.cum_s[i + 1] <= sw) ++i;
  while (i > 0 && map.cum_s[i] > sw) --i;
  Vec2 d = map.segment_dir(i);
  return std::atan2(d.y, d.x);
}

namespace detail {

inline std::vector<Vec2> resample_closed(const std::vector<Vec2>& pts, double spacing) {
  double length = 0.0;
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i) length += (pts[(i + 1) % n] - pts[i]).norm();
  std::size_t count = std::max<std::size_t>(4, static_cast<std::size_t>(std::llround(length / spacing)));
  double step = length / static_cast<double>(count);
  std::vector<Vec2> out;
  out.reserve(count);
  std::size_t seg = 0;
  double seg_start = 0.0;
  double seg_len = (pts[1 % n] - pts[0]).norm();
  for (std::size_t k = 0; k < count; ++k) {
    double target = step * static_cast<double>(k);
    while (target > seg_start + seg_len + 1e-12) {
      seg_start += seg_len;
      ++seg;
      seg_len = (pts[(seg + 1) % n] - pts[seg % n]).norm();
    }
    double t = seg_len > 0.0 ? (target - seg_start) / seg_len : 0.0;
    Vec2 a = pts[seg % n], b = pts[(seg + 1) % n];
    out.push_back(a + (b - a) * pcs::clamp(t, 0.0, 1.0));
  }
  return out;
}

}  // namespace detail

// Builds a TrackMap from in-memory parts: validates the polyline, closes the
// loop, resamples to uniform spacing, and checks free-space membership.
inline TrackMap make_track(GridMap grid, std::vector<Vec2> centerline, const TrackOptions& opt = {}) {
  if (centerline.size() >= 2 && (centerline.front() - centerline.back()).norm() < 1e-9)
    centerline.pop_back();  // drop an explicit duplicate closing point
  if (centerline.size() < 3) throw std::runtime_error("track: centerline needs at least 3 distinct points");
  std::vector<double> seg_lens;
  for (std::size_t i = 0; i + 1 < centerline.size(); ++i) {
    double len = (centerline[i + 1] - centerline[i]).norm();
    if (len < 1e-9) throw std::runtime_error("track: consecutive centerline points coincide");
    seg_lens.push_back(len);
  }
  double closing = (centerline.front() - centerline.back()).norm();
  if (closing < 1e-9) throw std::runtime_error("track: consecutive centerline points coincide");
  std::vector<double> sorted = seg_lens;
  std::sort(sorted.begin(), sorted.end());
  double median = sorted[sorted.size() / 2];
  if (closing > opt.closure_ratio * median)
    throw std::runtime_error("track: centerline is not closed (closing segment " + std::to_string(closing) +
                             " m vs median step " + std::to_string(median) + " m)");

  TrackMap map;
  map.grid = std::move(grid);
  map.centerline = detail::resample_closed(centerline, opt.resample_spacing);
  const std::size_t n = map.centerline.size();
  map.cum_s.resize(n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    map.cum_s[i] = s;
    s += (map.centerline[(i + 1) % n] - map.centerline[i]).norm();
  }
  map.total_length = s;
  for (const auto& p : map.centerline)
    if (map.grid.occupied_at(p.x, p.y))
      throw std::runtime_error("track: centerline exits free space at (" + std::to_string(p.x) + ", " +
                               std::to_string(p.y) + ")");
  return map;
}

inline TrackMap load_track(const std::string& grid_file, const std::string& centerline_file,
                           const TrackOptions& opt = {}) {
  GridMap grid;
  auto ends_with = [](const std::string& s, const std::string& suf) {
    return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends_with(grid_file, ".pgm") || ends_with(grid_file, ".PGM"))
    grid = detail::load_pgm(grid_file, opt);
  else
    grid = detail::load_grid_csv(grid_file, opt);
  auto pts = detail::load_polyline_csv(centerline_file);
  return make_track(std::move(grid), std::move(pts), opt);
}

// Fallback raceline: the centerline with forward-difference headings and a
// constant speed everywhere.
inline Raceline default_raceline(const TrackMap& map, double v_const) {
  if (!(v_const > 0.0)) throw std::invalid_argument("default_raceline: v_const must be positive");
  Raceline rl;
  const std::size_t n = map.size();
  rl.waypoints.resize(n);
  rl.cumulative_s = map.cum_s;
  rl.total_length = map.total_length;
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 p = map.point(i);
    Vec2 d = map.segment_dir(i);
    rl.waypoints[i] = {p.x, p.y, std::atan2(d.y, d.x), v_const};
  }
  return rl;
}

inline Raceline load_raceline(const std::string& path) {
  CsvTable t = read_csv(path);
  int cx = t.require_column("x");
  int cy = t.require_column("y");
  int ct = t.require_column("theta");
  int cv = t.require_column("v");
  Raceline rl;
  rl.waypoints.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    std::string ctx = path + " row " + std::to_string(i + 2);
    RacelineWaypoint w{csv_double(row[cx], ctx), csv_double(row[cy], ctx), csv_double(row[ct], ctx),
                       csv_double(row[cv], ctx)};
    if (!(w.v > 0.0)) throw std::runtime_error("track: raceline speed must be positive in " + ctx);
    rl.waypoints.push_back(w);
  }
  if (rl.waypoints.size() < 3) throw std::runtime_error("track: raceline needs at least 3 waypoints");
  rl.cumulative_s.resize(rl.waypoints.size());
  double s = 0.0;
  for (std::size_t i = 0; i < rl.waypoints.size(); ++i) {
    rl.cumulative_s[i] = s;
    Vec2 a = rl.position(i), b = rl.position(i + 1);
    s += (b - a).norm();
  }
  rl.total_length = s;
  return rl;
}

inline void save_raceline(const std::string& path, const Raceline& rl) {
  CsvWriter w(path, {"x", "y", "theta", "v"});
  for (const auto& wp : rl.waypoints)
    w.row({CsvWriter::num(wp.x), CsvWriter::num(wp.y), CsvWriter::num(wp.theta), CsvWriter::num(wp.v)});
}

// Raceline queries used by the planner. Projection mirrors the centerline
// logic (nearest segment, tie to lower s).
struct RacelineSample {
  double s = 0.0;
  double d = 0.0;
  std::size_t segment = 0;
};

inline RacelineSample raceline_project(const Raceline& rl, Vec2 p) {
  double best_d2 = std::numeric_limits<double>::infinity();
  RacelineSample best;
  const std::size_t n = rl.size();
  for (std::size_t i = 0; i < n; ++i) {
    Vec2 a = rl.position(i);
    Vec2 b = rl.position(i + 1);
    Vec2 ab = b - a;
    double len2 = ab.norm2();
    double t = len2 > 0.0 ? pcs::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    Vec2 proj = a + ab * t;
    double d2 = (p - proj).norm2();
    if (d2 < best_d2 - 1e-15) {
      best_d2 = d2;
      Vec2 dir = ab.normalized();
      double side = dir.cross(p - proj) >= 0.0 ? 1.0 : -1.0;
      best.s = rl.wrap_s(rl.cumulative_s[i] + t * std::sqrt(len2));
      best.d = side * std::sqrt(d2);
      best.segment = i;
    }
  }
  return best;
}

struct RacelinePose {
  Vec2 position;
  double theta = 0.0;
  double v = 1.0;
};

inline RacelinePose raceline_at(const Raceline& rl, double s) {
  double sw = rl.wrap_s(s);
  const std::size_t n = rl.size();
  auto it = std::upper_bound(rl.cumulative_s.begin(), rl.cumulative_s.end(), sw);
  std::size_t i = it == rl.cumulative_s.begin() ? 0 : static_cast<std::size_t>(it - rl.cumulative_s.begin() - 1);
  if (i >= n) i = n - 1;
  double seg_end = (i + 1 < n) ? rl.cumulative_s[i + 1] : rl.total_length;
  double seg_len = seg_end - rl.cumulative_s[i];
  double t = seg_len > 0.0 ? (sw - rl.cumulative_s[i]) / seg_len : 0.0;
  Vec2 a = rl.position(i), b = rl.position(i + 1);
  const auto& wa = rl.waypoints[i];
  const auto& wb = rl.waypoints[(i + 1) % n];
  RacelinePose out;
  out.position = a + (b - a) * t;
  Vec2 dir = (b - a).normalized();
  out.theta = std::atan2(dir.y, dir.x);
  out.v = wa.v + (wb.v - wa.v) * t;
  return out;
}

// Incremental Frenet tracking for simulation loops: projects near the last
// known segment and unwraps s across lap boundaries.
class FrenetTracker {
 public:
  FrenetTracker(const TrackMap& map, Vec2 start) : map_(&map) {
    FrenetPose f = to_frenet(map, start.x, start.y);
    unwrapped_ = f.s;
    wrapped_ = f.s;
  }

  double update(Vec2 p) {
    FrenetPose f = to_frenet(*map_, p.x, p.y);
    double delta = f.s - wrapped_;
    double half = map_->total_length / 2.0;
    if (delta > half) delta -= map_->total_length;
    if (delta < -half) delta += map_->total_length;
    unwrapped_ += delta;
    wrapped_ = f.s;
    return unwrapped_;
  }

  double unwrapped() const { return unwrapped_; }
  double wrapped() const { return wrapped_; }

 private:
  const TrackMap* map_;
  double unwrapped_ = 0.0;
  double wrapped_ = 0.0;
};

}  // namespace pcs
