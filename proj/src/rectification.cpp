#include "plenocal/rectification.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numeric>
#include <unordered_map>

#include "plenocal/errors.hpp"
#include "plenocal/rotation.hpp"

namespace plenocal {

namespace {

/// Buckets 2D points in square cells for radius queries.
class SpatialHash {
 public:
  SpatialHash(std::span<const Eigen::Vector2d> pts, double cell) : pts_(pts), cell_(cell) {
    for (std::size_t k = 0; k < pts.size(); ++k) cells_[key(pts[k])].push_back(k);
  }

  /// Index of the nearest point within `radius` of `q`, or -1.
  long nearest(const Eigen::Vector2d& q, double radius, long exclude = -1) const {
    const long cx = cell_index(q.x());
    const long cy = cell_index(q.y());
    const long reach = static_cast<long>(std::ceil(radius / cell_));
    long best = -1;
    double best_d2 = radius * radius;
    for (long dy = -reach; dy <= reach; ++dy) {
      for (long dx = -reach; dx <= reach; ++dx) {
        const auto it = cells_.find(pack(cx + dx, cy + dy));
        if (it == cells_.end()) continue;
        for (std::size_t k : it->second) {
          if (static_cast<long>(k) == exclude) continue;
          const double d2 = (pts_[k] - q).squaredNorm();
          if (d2 < best_d2 || (d2 == best_d2 && best >= 0 && static_cast<long>(k) < best)) {
            best_d2 = d2;
            best = static_cast<long>(k);
          }
        }
      }
    }
    return best;
  }

 private:
  long cell_index(double v) const { return static_cast<long>(std::floor(v / cell_)); }
  static long long pack(long x, long y) {
    return (static_cast<long long>(x) << 32) ^ static_cast<long long>(static_cast<unsigned>(y));
  }
  long long key(const Eigen::Vector2d& p) const { return pack(cell_index(p.x()), cell_index(p.y())); }

  std::span<const Eigen::Vector2d> pts_;
  double cell_;
  std::unordered_map<long long, std::vector<std::size_t>> cells_;
};

struct Peak {
  int x;
  int y;
  std::uint16_t value;
};

double percentile(const Raster16& img, double q) {
  std::vector<std::uint16_t> v = img.pixels;
  const auto k = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

std::vector<Peak> row_peaks(const Raster16& img, int y, double threshold) {
  std::vector<Peak> out;
  for (int x = 1; x + 1 < img.width; ++x) {
    const std::uint16_t c = img.at(x, y);
    if (c <= threshold) continue;
    bool is_max = true;
    for (int dy = -1; dy <= 1 && is_max; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        const std::uint16_t n = img.at(x + dx, y + dy);
        // Strict on the preceding half-neighbourhood so plateaus yield one peak.
        if (n > c || (n == c && (dy < 0 || (dy == 0 && dx < 0)))) {
          is_max = false;
          break;
        }
      }
    }
    if (is_max) out.push_back({x, y, c});
  }
  return out;
}

/// Intensity-weighted centroid; false when the window leaves the image.
bool centroid(const Raster16& img, double bg, double radius, int iterations,
              Eigen::Vector2d& c) {
  for (int it = 0; it < iterations; ++it) {
    const int x0 = static_cast<int>(std::floor(c.x() - radius));
    const int x1 = static_cast<int>(std::ceil(c.x() + radius));
    const int y0 = static_cast<int>(std::floor(c.y() - radius));
    const int y1 = static_cast<int>(std::ceil(c.y() + radius));
    if (x0 < 0 || y0 < 0 || x1 >= img.width || y1 >= img.height) return false;
    double sw = 0.0, sx = 0.0, sy = 0.0;
    const double r2 = radius * radius;
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = x - c.x();
        const double dy = y - c.y();
        if (dx * dx + dy * dy > r2) continue;
        const double w = static_cast<double>(img.at(x, y)) - bg;
        if (w <= 0.0) continue;
        sw += w;
        sx += w * x;
        sy += w * y;
      }
    }
    if (sw <= 0.0) return false;
    c = {sx / sw, sy / sw};
  }
  return true;
}

std::vector<MicroImageCenter> detect_impl(const Raster16& img, double pitch,
                                          const DetectionOptions& opt, bool parallel) {
  if (!(pitch > 4.0)) throw Error(ErrorKind::InvalidInput, "expected pitch must exceed 4 px");
  if (img.width < 3.0 * pitch || img.height < 3.0 * pitch) {
    throw Error(ErrorKind::InvalidInput, "image is smaller than three pitches");
  }
  const double bg = percentile(img, opt.background_percentile);
  const double peak = *std::max_element(img.pixels.begin(), img.pixels.end());
  if (!(peak > bg)) throw Error(ErrorKind::NoGridFound, "image has no contrast");
  const double threshold = bg + opt.peak_fraction * (peak - bg);

  // Peak search, one task per row, merged in row order.
  std::vector<std::vector<Peak>> rows(img.height);
  const int h = img.height;
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (int y = 1; y < h - 1; ++y) rows[y] = row_peaks(img, y, threshold);
  } else {
    for (int y = 1; y < h - 1; ++y) rows[y] = row_peaks(img, y, threshold);
  }
  std::vector<Peak> peaks;
  for (auto& r : rows) peaks.insert(peaks.end(), r.begin(), r.end());

  // Greedy merge of peaks closer than half a pitch, strongest first.
  std::stable_sort(peaks.begin(), peaks.end(),
                   [](const Peak& a, const Peak& b) { return a.value > b.value; });
  std::vector<Eigen::Vector2d> kept;
  {
    const double merge = 0.5 * pitch;
    std::unordered_map<long long, std::vector<std::size_t>> grid;
    auto cell = [&](double v) { return static_cast<long>(std::floor(v / merge)); };
    auto pack = [](long x, long y) {
      return (static_cast<long long>(x) << 32) ^ static_cast<long long>(static_cast<unsigned>(y));
    };
    for (const auto& p : peaks) {
      const Eigen::Vector2d q(p.x, p.y);
      const long cx = cell(q.x()), cy = cell(q.y());
      bool near = false;
      for (long dy = -1; dy <= 1 && !near; ++dy) {
        for (long dx = -1; dx <= 1 && !near; ++dx) {
          const auto it = grid.find(pack(cx + dx, cy + dy));
          if (it == grid.end()) continue;
          for (std::size_t k : it->second) {
            if ((kept[k] - q).norm() < merge) {
              near = true;
              break;
            }
          }
        }
      }
      if (!near) {
        grid[pack(cx, cy)].push_back(kept.size());
        kept.push_back(q);
      }
    }
  }

  // Centroid refinement; clipped windows are dropped.
  const double radius = opt.window_radius * pitch;
  std::vector<char> ok(kept.size(), 0);
  const auto n_kept = static_cast<std::ptrdiff_t>(kept.size());
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < n_kept; ++k) {
      ok[k] = centroid(img, bg, radius, opt.centroid_iterations, kept[k]);
    }
  } else {
    for (std::ptrdiff_t k = 0; k < n_kept; ++k) {
      ok[k] = centroid(img, bg, radius, opt.centroid_iterations, kept[k]);
    }
  }
  std::vector<Eigen::Vector2d> blobs;
  for (std::size_t k = 0; k < kept.size(); ++k) {
    if (ok[k]) blobs.push_back(kept[k]);
  }
  // Row-major order makes the rest independent of peak discovery order.
  std::sort(blobs.begin(), blobs.end(), [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return std::make_pair(a.y(), a.x()) < std::make_pair(b.y(), b.x());
  });
  if (blobs.size() < 10) {
    throw Error(ErrorKind::NoGridFound, "found " + std::to_string(blobs.size()) + " blobs");
  }

  const SpatialHash hash(blobs, pitch);
  std::vector<double> nn;
  nn.reserve(blobs.size());
  for (std::size_t k = 0; k < blobs.size(); ++k) {
    const long m = hash.nearest(blobs[k], 2.0 * pitch, static_cast<long>(k));
    if (m >= 0) nn.push_back((blobs[m] - blobs[k]).norm());
  }
  if (nn.empty()) throw Error(ErrorKind::AmbiguousPitch, "blobs have no neighbours");
  std::nth_element(nn.begin(), nn.begin() + static_cast<std::ptrdiff_t>(nn.size() / 2), nn.end());
  const double spacing = nn[nn.size() / 2];
  if (std::abs(spacing - pitch) > 0.25 * pitch) {
    throw Error(ErrorKind::AmbiguousPitch, "median spacing " + std::to_string(spacing) +
                                               " px vs expected " + std::to_string(pitch));
  }

  // Seed at the blob nearest the image center; lattice steps from its neighbours.
  const Eigen::Vector2d mid(0.5 * (img.width - 1), 0.5 * (img.height - 1));
  std::size_t seed = 0;
  for (std::size_t k = 1; k < blobs.size(); ++k) {
    if ((blobs[k] - mid).squaredNorm() < (blobs[seed] - mid).squaredNorm()) seed = k;
  }
  const double tol = 0.3 * spacing;
  auto step_towards = [&](std::size_t from, const Eigen::Vector2d& dir) -> long {
    return hash.nearest(blobs[from] + dir * spacing, tol, static_cast<long>(from));
  };
  const long east = step_towards(seed, {1.0, 0.0});
  const long south = step_towards(seed, {0.0, 1.0});
  Eigen::Vector2d a1 = east >= 0 ? Eigen::Vector2d(blobs[east] - blobs[seed])
                                 : Eigen::Vector2d(spacing, 0.0);
  Eigen::Vector2d a2 = south >= 0 ? Eigen::Vector2d(blobs[south] - blobs[seed])
                                  : Eigen::Vector2d(0.0, spacing);

  std::vector<char> seen(blobs.size(), 0);
  std::vector<Eigen::Vector2i> label(blobs.size(), Eigen::Vector2i::Zero());
  std::deque<std::size_t> queue{seed};
  seen[seed] = 1;
  const std::array<std::pair<Eigen::Vector2i, int>, 4> moves{
      {{{1, 0}, 0}, {{-1, 0}, 0}, {{0, 1}, 1}, {{0, -1}, 1}}};
  while (!queue.empty()) {
    const std::size_t cur = queue.front();
    queue.pop_front();
    for (const auto& [d, axis] : moves) {
      const Eigen::Vector2d step = (axis == 0 ? a1 : a2) * static_cast<double>(d.sum());
      const long next = hash.nearest(blobs[cur] + step, tol, static_cast<long>(cur));
      if (next < 0 || seen[next]) continue;
      seen[next] = 1;
      label[next] = label[cur] + d;
      queue.push_back(static_cast<std::size_t>(next));
    }
  }

  std::vector<MicroImageCenter> out;
  for (std::size_t k = 0; k < blobs.size(); ++k) {
    if (seen[k]) out.push_back({label[k](0), label[k](1), blobs[k]});
  }
  std::sort(out.begin(), out.end(), [](const MicroImageCenter& a, const MicroImageCenter& b) {
    return std::make_pair(a.j, a.i) < std::make_pair(b.j, b.i);
  });
  return out;
}

Eigen::Matrix3d similarity_normalizer(std::span<const Eigen::Vector2d> pts) {
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double ss = 0.0;
  for (const auto& p : pts) ss += (p - c).squaredNorm();
  const double rms = std::sqrt(ss / static_cast<double>(pts.size()));
  const double s = rms > 0.0 ? std::sqrt(2.0) / rms : 1.0;
  Eigen::Matrix3d t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

double median(std::vector<double> v) {
  const std::size_t m = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m), v.end());
  const double hi = v[m];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(m));
  return 0.5 * (lo + hi);
}

}  // namespace

void MlaMisalignmentSpec::validate() const {
  if (!(offset.z() > 0.0)) throw Error(ErrorKind::InvalidInput, "MLA distance L must be positive");
  if (!(lens_pitch > 0.0)) throw Error(ErrorKind::InvalidInput, "lens pitch must be positive");
  if (!(sensor_gap > 0.0)) throw Error(ErrorKind::InvalidInput, "sensor gap must be positive");
  if (!(pixel_pitch > 0.0)) throw Error(ErrorKind::InvalidInput, "pixel pitch must be positive");
}

Eigen::Matrix3d MlaMisalignmentSpec::label_to_pixel() const {
  const Eigen::Matrix3d r = rodrigues(rotation);
  Eigen::Matrix3d b;
  b << r.col(0) * lens_pitch, r.col(1) * lens_pitch, offset;
  const double m = (offset.z() + sensor_gap) / pixel_pitch;
  Eigen::Matrix3d a;
  a << m, 0, -sensor_origin.x() / pixel_pitch, 0, m, -sensor_origin.y() / pixel_pitch, 0, 0, 1;
  return a * b;
}

MicroImageCenter project_center(const MlaMisalignmentSpec& spec, int i, int j) {
  spec.validate();
  const Eigen::Matrix3d r = rodrigues(spec.rotation);
  const Eigen::Vector3d g = r * Eigen::Vector3d(i * spec.lens_pitch, j * spec.lens_pitch, 0.0) +
                            spec.offset;
  if (!(g.z() > 0.0)) {
    throw Error(ErrorKind::DegenerateGeometry, "micro-lens lies at or behind the main lens plane");
  }
  const double m = (spec.offset.z() + spec.sensor_gap) / g.z();
  MicroImageCenter c;
  c.i = i;
  c.j = j;
  c.center = (m * g.head<2>() - spec.sensor_origin) / spec.pixel_pitch;
  return c;
}

std::vector<MicroImageCenter> detect_centers(const Raster16& white, double expected_pitch,
                                             const DetectionOptions& options) {
  return detect_impl(white, expected_pitch, options, true);
}

std::vector<MicroImageCenter> detect_centers_serial(const Raster16& white, double expected_pitch,
                                                    const DetectionOptions& options) {
  return detect_impl(white, expected_pitch, options, false);
}

std::vector<std::pair<int, double>> row_slopes(std::span<const MicroImageCenter> centers) {
  std::map<int, std::vector<Eigen::Vector2d>> rows;
  for (const auto& c : centers) rows[c.j].push_back(c.center);
  std::vector<std::pair<int, double>> out;
  for (const auto& [j, pts] : rows) {
    if (pts.size() < 10) continue;
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& p : pts) cov += (p - mean) * (p - mean).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    const Eigen::Vector2d dir = es.eigenvectors().col(1);
    out.emplace_back(j, dir.y() / dir.x());
  }
  if (out.size() < 2) {
    throw Error(ErrorKind::TooFewCenters, "need two rows with at least 10 centers");
  }
  return out;
}

double slope_range(std::span<const std::pair<int, double>> slopes) {
  if (slopes.empty()) return 0.0;
  double lo = slopes.front().second, hi = lo;
  for (const auto& [j, s] : slopes) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  return hi - lo;
}

Eigen::Matrix3d fit_homography(std::span<const Eigen::Vector2d> from,
                               std::span<const Eigen::Vector2d> to) {
  if (from.size() != to.size() || from.size() < 4) {
    throw Error(ErrorKind::DegenerateConfiguration, "homography needs 4 correspondences");
  }
  const Eigen::Matrix3d ta = similarity_normalizer(from);
  const Eigen::Matrix3d tb = similarity_normalizer(to);
  Eigen::MatrixXd a(2 * from.size(), 9);
  for (std::size_t k = 0; k < from.size(); ++k) {
    const Eigen::Vector3d p = ta * from[k].homogeneous();
    const Eigen::Vector3d q = tb * to[k].homogeneous();
    a.row(2 * k) << 0, 0, 0, -q.z() * p.transpose(), q.y() * p.transpose();
    a.row(2 * k + 1) << q.z() * p.transpose(), 0, 0, 0, -q.x() * p.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (s(7) < 1e-10 * s(0)) {
    throw Error(ErrorKind::DegenerateConfiguration, "homography system is rank deficient");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  Eigen::Matrix3d out = tb.inverse() * hn * ta;
  if (out(2, 2) == 0.0) {
    throw Error(ErrorKind::DegenerateConfiguration, "homography maps the origin to infinity");
  }
  return out / out(2, 2);
}

Eigen::Vector2d apply_homography(const Eigen::Matrix3d& h, const Eigen::Vector2d& p) {
  const Eigen::Vector3d q = h * p.homogeneous();
  if (std::abs(q.z()) < 1e-14 * q.norm()) {
    throw Error(ErrorKind::PointAtInfinity, "point maps to the line at infinity");
  }
  return q.head<2>() / q.z();
}

RectifyingHomography estimate_rectifying_homography(std::span<const MicroImageCenter> centers,
                                                    double pitch_hint) {
  if (centers.size() < 5) {
    throw Error(ErrorKind::DegenerateConfiguration, "need at least 5 labelled centers");
  }
  std::map<std::pair<int, int>, Eigen::Vector2d> by_label;
  int i_min = centers.front().i, i_max = i_min, j_min = centers.front().j, j_max = j_min;
  for (const auto& c : centers) {
    by_label[{c.i, c.j}] = c.center;
    i_min = std::min(i_min, c.i);
    i_max = std::max(i_max, c.i);
    j_min = std::min(j_min, c.j);
    j_max = std::max(j_max, c.j);
  }
  if (i_max == i_min || j_max == j_min) {
    throw Error(ErrorKind::DegenerateConfiguration, "centers must span two rows and two columns");
  }

  std::vector<double> spacings;
  for (const auto& [ij, p] : by_label) {
    for (const auto& nb : {std::make_pair(ij.first + 1, ij.second),
                           std::make_pair(ij.first, ij.second + 1)}) {
      const auto it = by_label.find(nb);
      if (it != by_label.end()) spacings.push_back((it->second - p).norm());
    }
  }
  RectifyingHomography out;
  out.pitch = spacings.empty() ? pitch_hint : median(spacings);
  if (!(out.pitch > 0.0)) {
    throw Error(ErrorKind::DegenerateConfiguration, "no adjacent centers to fit a pitch");
  }

  std::vector<Eigen::Vector2d> from, lattice;
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& c : centers) {
    from.push_back(c.center);
    lattice.emplace_back(out.pitch * c.i, out.pitch * c.j);
    mean += c.center - lattice.back();
  }
  out.origin = mean / static_cast<double>(centers.size());
  std::vector<Eigen::Vector2d> to;
  for (const auto& l : lattice) to.push_back(out.origin + l);

  out.h = fit_homography(from, to);
  double ss = 0.0;
  for (std::size_t k = 0; k < from.size(); ++k) {
    ss += (apply_homography(out.h, from[k]) - to[k]).squaredNorm();
  }
  out.rms = std::sqrt(ss / static_cast<double>(from.size()));
  return out;
}

std::vector<Observation> rectify_observations(std::span<const Observation> obs,
                                              const Eigen::Matrix3d& h) {
  if (!h.allFinite() || std::abs(h.determinant()) < 1e-300) {
    throw Error(ErrorKind::InvalidInput, "rectifying homography is singular");
  }
  std::vector<Observation> out(obs.begin(), obs.end());
  for (auto& o : out) {
    const Eigen::Vector2d p = apply_homography(h, {o.px, o.py});
    o.px = p.x();
    o.py = p.y();
  }
  return out;
}

std::vector<MicroImageCenter> rectify_centers(std::span<const MicroImageCenter> centers,
                                              const Eigen::Matrix3d& h) {
  std::vector<MicroImageCenter> out(centers.begin(), centers.end());
  for (auto& c : out) c.center = apply_homography(h, c.center);
  return out;
}

Raster16 warp_image(const Raster16& image, const Eigen::Matrix3d& h) {
  const Eigen::Matrix3d inv = h.inverse();
  Raster16 out(image.width, image.height, image.max_value);
  const int height = image.height;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const Eigen::Vector3d s = inv * Eigen::Vector3d(x, y, 1.0);
      if (s.z() == 0.0) continue;
      const double sx = s.x() / s.z();
      const double sy = s.y() / s.z();
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      if (x0 < 0 || y0 < 0 || x0 + 1 >= image.width || y0 + 1 >= image.height) continue;
      const double fx = sx - x0;
      const double fy = sy - y0;
      const double v = (1 - fx) * (1 - fy) * image.at(x0, y0) + fx * (1 - fy) * image.at(x0 + 1, y0) +
                       (1 - fx) * fy * image.at(x0, y0 + 1) + fx * fy * image.at(x0 + 1, y0 + 1);
      out.at(x, y) = static_cast<std::uint16_t>(std::lround(v));
    }
  }
  return out;
}

}  // namespace plenocal
