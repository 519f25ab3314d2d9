#include "cfstab/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "cfstab/errors.hpp"
#include "cfstab/rng.hpp"

namespace cfstab {

namespace {

nlohmann::json vec_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

void require_binary(const Network& net, const char* what) {
  if (net.output_dim() != 1) {
    throw ConfigError(std::string(what) + " needs a single-logit network");
  }
}

// Normal and offset flipped, if needed, so that normal.x + offset >= 0.
BoundaryProbe oriented_towards(const BoundaryProbe& p, const Vec& x) {
  BoundaryProbe out = p;
  if (p.normal.dot(x) + p.offset < 0.0) {
    out.normal = -p.normal;
    out.offset = -p.offset;
  }
  return out;
}

}  // namespace

BoundaryProbe probe_at(const Network& net, const Vec& point) {
  require_binary(net, "boundary probing");
  const LocalLinearMap map = local_linear_map(net, point);
  return {activation_pattern(net, point), map.weights.row(0).transpose(), map.offsets[0]};
}

Vec region_normal(const Network& net, const ActivationPattern& pattern) {
  if (net.layers.size() != 2 || net.output_dim() != 1) {
    throw ConfigError("region_normal is defined for one-hidden-layer single-logit networks");
  }
  const Mat& w0 = net.layers[0].weight;
  const Mat& w1 = net.layers[1].weight;
  Vec n = Vec::Zero(w0.cols());
  for (Eigen::Index i = 0; i < w0.rows(); ++i) {
    if (pattern.bits[static_cast<std::size_t>(i)]) n += w1(0, i) * w0.row(i).transpose();
  }
  return n;
}

double distance_to_hyperplane(const Vec& x, const BoundaryProbe& probe) {
  const double norm = probe.normal.norm();
  if (!(norm > 0.0)) throw NumericError("boundary probe has a zero normal");
  return std::abs(probe.normal.dot(x) + probe.offset) / norm;
}

double cos_angle(const BoundaryProbe& a, const BoundaryProbe& b) {
  const double na = a.normal.norm();
  const double nb = b.normal.norm();
  if (!(na > 0.0 && nb > 0.0)) throw NumericError("boundary probe has a zero normal");
  return std::clamp(a.normal.dot(b.normal) / (na * nb), -1.0, 1.0);
}

double lemma1_threshold(const Vec& x, const BoundaryProbe& h1, const BoundaryProbe& h2) {
  const double c = cos_angle(h1, h2);
  if (std::abs(c) >= 1.0 - 1e-12) return std::numeric_limits<double>::infinity();
  if (c == 0.0) return 0.0;
  return x.norm() / (1.0 / c - c);
}

Theorem1Point construct_theorem1_point(const Vec& x, const BoundaryProbe& h1,
                                       const BoundaryProbe& h2, double eta) {
  if (!(eta > 0.0)) throw ConfigError("eta must be positive");
  const BoundaryProbe a = oriented_towards(h1, x);
  const BoundaryProbe b = oriented_towards(h2, x);
  const double c = cos_angle(a, b);
  if (std::abs(c) >= 1.0 - 1e-12) {
    const double scale = b.normal.norm() / a.normal.norm();
    const bool same = std::abs(a.offset * scale - b.offset) <=
                      1e-9 * std::max({1.0, std::abs(a.offset * scale), std::abs(b.offset)});
    Theorem1Point out;
    out.status = Theorem1Status::kDegenerate;
    out.y = x;
    out.note = same ? "degenerate, H1=H2" : "degenerate, H1 parallel to H2";
    return out;
  }
  const Vec y_prime = x + eta * a.normal / a.normal.norm();
  const double s = std::abs(b.normal.dot(y_prime) + b.offset);
  Theorem1Point out;
  out.y = y_prime - s * b.normal / b.normal.squaredNorm();
  return out;
}

Theorem1Claims check_theorem1_claims(const Vec& x, const Vec& y, const BoundaryProbe& h1,
                                     const BoundaryProbe& h2, double tol) {
  Theorem1Claims c;
  c.d_x_h1 = distance_to_hyperplane(x, h1);
  c.d_x_h2 = distance_to_hyperplane(x, h2);
  c.d_y_h1 = distance_to_hyperplane(y, h1);
  c.d_y_h2 = distance_to_hyperplane(y, h2);
  c.on_h2 = c.d_y_h2 <= tol;
  c.closer_to_h2 = c.d_y_h2 < c.d_x_h2;
  c.farther_from_h1 = c.d_x_h1 <= c.d_y_h1 + tol;
  return c;
}

bool projection_on_piece(const Network& net, const Vec& x, const BoundaryProbe& probe) {
  const double norm2 = probe.normal.squaredNorm();
  if (!(norm2 > 0.0)) return false;
  const Vec foot = x - (probe.normal.dot(x) + probe.offset) / norm2 * probe.normal;
  return activation_pattern(net, foot) == probe.pattern;
}

std::vector<BoundaryProbe> discover_boundaries(const Network& net, const Vec& x, int directions,
                                               double max_radius, std::uint64_t seed) {
  require_binary(net, "boundary discovery");
  constexpr int kScanSteps = 256;
  const int d = net.input_dim();
  Xoshiro256 rng(seed);
  std::vector<BoundaryProbe> found;
  auto logit = [&](const Vec& p) { return forward(net, p)[0]; };
  for (int k = 0; k < directions; ++k) {
    Vec u(d);
    if (d == 2) {
      const double angle = 2.0 * std::numbers::pi * (k + 0.5) / directions;
      u << std::cos(angle), std::sin(angle);
    } else {
      for (int i = 0; i < d; ++i) u[i] = rng.normal();
    }
    if (u.norm() == 0.0) continue;
    u.normalize();
    double r_prev = 0.0;
    double f_prev = logit(x);
    for (int s = 1; s <= kScanSteps; ++s) {
      const double r = max_radius * s / kScanSteps;
      const double f = logit(x + r * u);
      if ((f > 0.0) != (f_prev > 0.0)) {
        double lo = r_prev, hi = r;
        const bool lo_positive = f_prev > 0.0;
        while (hi - lo > 1e-10) {
          const double mid = 0.5 * (lo + hi);
          if ((logit(x + mid * u) > 0.0) == lo_positive) lo = mid; else hi = mid;
        }
        BoundaryProbe probe = probe_at(net, x + (0.5 * (lo + hi)) * u);
        if (probe.normal.norm() > 0.0) {
          const bool seen = std::any_of(found.begin(), found.end(), [&](const BoundaryProbe& p) {
            return p.pattern == probe.pattern;
          });
          if (!seen) found.push_back(std::move(probe));
        }
      }
      r_prev = r;
      f_prev = f;
    }
  }
  return found;
}

InfluenceResult distributional_influence(const Network& net, const Vec& x, int target_logit,
                                         int samples) {
  if (samples < 1) throw ConfigError("influence needs at least one sample");
  InfluenceResult out;
  out.influence = Vec::Zero(x.size());
  out.sample_count = samples;
  for (int k = 0; k < samples; ++k) {
    const double t = (k + 0.5) / samples;
    out.influence += grad_input(net, t * x, target_logit);
  }
  out.influence /= samples;
  return out;
}

nlohmann::json VerifierReport::to_json() const {
  return {{"verifier", name},
          {"checked", checked},
          {"passed", passed},
          {"worst_margin", worst_margin},
          {"counterexamples", counterexamples},
          {"details", details}};
}

void VerifierReport::merge(const VerifierReport& other) {
  worst_margin = checked == 0 ? other.worst_margin
                 : other.checked == 0 ? worst_margin
                                      : std::min(worst_margin, other.worst_margin);
  checked += other.checked;
  passed += other.passed;
  for (const auto& c : other.counterexamples) counterexamples.push_back(c);
  for (const auto& [key, value] : other.details.items()) {
    if (!details.contains(key)) {
      details[key] = value;
    } else if (value.is_number_integer() && details[key].is_number_integer()) {
      details[key] = details[key].get<std::int64_t>() + value.get<std::int64_t>();
    } else if (value.is_number() && details[key].is_number()) {
      details[key] = std::min(details[key].get<double>(), value.get<double>());
    } else {
      details[key] = value;
    }
  }
}

VerifierReport verify_prop1(const Network& net, const Vec& x, int trials, std::uint64_t seed,
                            const GradientFn& gradient, double slack) {
  if (trials < 1) throw ConfigError("verify_prop1 needs trials >= 1");
  constexpr double kStep = 1e-5;
  constexpr int kMaxRedraws = 100;
  const GradientFn grad = gradient ? gradient : GradientFn(grad_input);
  VerifierReport report;
  report.name = "proposition1";
  report.worst_margin = std::numeric_limits<double>::infinity();
  const double x_norm = x.norm();
  Xoshiro256 rng(seed);
  std::size_t redrawn = 0;
  for (int trial = 0; trial < trials; ++trial) {
    double t = rng.uniform();
    Vec xp = t * x;
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
      const ActivationPattern mid = activation_pattern(net, xp);
      if (activation_pattern(net, (1.0 + kStep) * xp) == mid &&
          activation_pattern(net, (1.0 - kStep) * xp) == mid) {
        break;
      }
      ++redrawn;
      t = rng.uniform();
      xp = t * x;
    }
    const double lhs = grad(net, xp, 0).norm();
    const double radial = (forward(net, (1.0 + kStep) * xp)[0] - forward(net, (1.0 - kStep) * xp)[0]) /
                          (2.0 * kStep);
    const double rhs = x_norm > 0.0 ? std::abs(radial) / x_norm : 0.0;
    const double margin = lhs - rhs;
    ++report.checked;
    report.worst_margin = std::min(report.worst_margin, margin);
    if (margin >= -slack) {
      ++report.passed;
    } else {
      report.counterexamples.push_back(
          {{"x", vec_json(x)}, {"t", t}, {"lhs", lhs}, {"rhs", rhs}, {"margin", margin}});
    }
  }
  report.details["redrawn_samples"] = redrawn;
  return report;
}

double estimate_path_lipschitz(const Network& net, const Vec& x, int points) {
  if (points < 2) throw ConfigError("path Lipschitz estimate needs at least 2 points");
  double best = 0.0;
  for (int k = 0; k < points; ++k) {
    const double t = static_cast<double>(k) / (points - 1);
    const Mat jac = penultimate_jacobian(net, t * x);
    if (jac.isZero(0.0)) continue;
    Eigen::JacobiSVD<Mat> svd(jac);
    best = std::max(best, svd.singularValues()(0));
  }
  return 1.01 * best;
}

Vec sigmoid_influence(const Network& net, const Vec& x, const Vec& top_weights, int samples) {
  require_binary(net, "sigmoid influence");
  if (samples < 1) throw ConfigError("influence needs at least one sample");
  const double bias = net.layers.back().bias[0];
  Vec chi = Vec::Zero(x.size());
  for (int k = 0; k < samples; ++k) {
    const Vec z = ((k + 0.5) / samples) * x;
    const double s = sigmoid(top_weights.dot(penultimate(net, z)) + bias);
    chi += s * (1.0 - s) * (penultimate_jacobian(net, z).transpose() * top_weights);
  }
  return chi / samples;
}

VerifierReport verify_theorem2_bound(const Network& net, const Vec& x, double delta_cap, int trials,
                                     int doi_samples, std::uint64_t seed, int path_points,
                                     double slack) {
  if (net.output_dim() != 1) throw ConfigError("the influence bound is defined for single-logit heads");
  if (!(delta_cap >= 0.0)) throw ConfigError("delta_cap must be non-negative");
  if (trials < 1) throw ConfigError("verify_theorem2_bound needs trials >= 1");
  VerifierReport report;
  report.name = "theorem2";
  report.worst_margin = std::numeric_limits<double>::infinity();

  const Vec w = net.layers.back().weight.row(0).transpose();
  const double bias = net.layers.back().bias[0];
  const double k_est = estimate_path_lipschitz(net, x, path_points);
  const Vec chi_w = sigmoid_influence(net, x, w, doi_samples);
  const Vec h_x = penultimate(net, x);
  auto dsigma_at_x = [&](const Vec& weights) {
    const double s = sigmoid(weights.dot(h_x) + bias);
    return s * (1.0 - s);
  };
  const double ds_w = dsigma_at_x(w);
  const double c_term = 0.5 * (w.norm() + 0.5 * delta_cap);
  double worst_main = std::numeric_limits<double>::infinity();

  Xoshiro256 rng(seed);
  for (int trial = 0; trial < trials; ++trial) {
    Vec u(w.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = rng.normal();
    const double radius = delta_cap * rng.uniform();
    const Vec w_prime = u.norm() > 0.0 ? Vec(w + radius * u.normalized()) : w;

    const double lhs = (chi_w - sigmoid_influence(net, x, w_prime, doi_samples)).norm();
    const double ds_wp = dsigma_at_x(w_prime);
    // lambda as defined in the proof: dsigma(x, w') / dsigma(x, w).
    const double lambda = ds_wp / ds_w;
    const double rhs = k_est * (ds_w * (w - lambda * w_prime).norm() + c_term);
    // Variant with the ratio inverted, reported for comparison only.
    const double lambda_inv = ds_w / ds_wp;
    const double rhs_inv = k_est * (ds_w * (w - lambda_inv * w_prime).norm() + c_term);

    const double margin = rhs - lhs;
    worst_main = std::min(worst_main, rhs_inv - lhs);
    ++report.checked;
    report.worst_margin = std::min(report.worst_margin, margin);
    if (margin >= -slack) {
      ++report.passed;
    } else {
      report.counterexamples.push_back({{"x", vec_json(x)},
                                        {"w_prime", vec_json(w_prime)},
                                        {"lhs", lhs},
                                        {"rhs", rhs},
                                        {"K", k_est}});
    }
  }
  report.details["K"] = k_est;
  report.details["worst_margin_inverted_lambda"] = worst_main;
  return report;
}

VerifierReport verify_theorem1(const Network& net, const std::vector<Vec>& points,
                               const Theorem1SweepOptions& options) {
  require_binary(net, "the boundary construction");
  VerifierReport report;
  report.name = "theorem1";
  report.worst_margin = std::numeric_limits<double>::infinity();
  std::size_t orthogonal = 0, oblique = 0, degenerate = 0, precondition_failed = 0, pairs = 0;

  for (std::size_t p = 0; p < points.size(); ++p) {
    const Vec& x = points[p];
    const auto probes =
        discover_boundaries(net, x, options.directions, options.max_radius, mix_seed(options.seed, p));
    std::vector<bool> on_piece(probes.size());
    for (std::size_t i = 0; i < probes.size(); ++i) on_piece[i] = projection_on_piece(net, x, probes[i]);

    for (std::size_t i = 0; i < probes.size(); ++i) {
      for (std::size_t j = 0; j < probes.size(); ++j) {
        if (i == j) continue;
        ++pairs;
        if (!on_piece[i] || !on_piece[j]) {
          ++precondition_failed;
          continue;
        }
        const BoundaryProbe h1 = oriented_towards(probes[i], x);
        const BoundaryProbe h2 = oriented_towards(probes[j], x);
        const double d_x_h2 = distance_to_hyperplane(x, h2);
        if (!(d_x_h2 > 0.0)) {
          ++precondition_failed;
          continue;
        }
        const double c = cos_angle(h1, h2);
        double eta;
        bool is_orthogonal = std::abs(c) <= options.orthogonal_tol;
        if (is_orthogonal) {
          eta = 1e-3 * std::max(1.0, d_x_h2);
        } else {
          const double threshold = lemma1_threshold(x, h1, h2);
          if (std::isinf(threshold)) {
            ++degenerate;
            continue;
          }
          if (c > 0.0) {
            eta = 2.0 * threshold;
          } else {
            // Any positive eta clears a negative threshold; keep n2.y' > 0.
            eta = 0.5 * d_x_h2 / std::abs(c);
          }
        }
        const Theorem1Point built = construct_theorem1_point(x, h1, h2, eta);
        if (built.status == Theorem1Status::kDegenerate) {
          ++degenerate;
          continue;
        }
        (is_orthogonal ? orthogonal : oblique) += 1;
        const Theorem1Claims claims = check_theorem1_claims(x, built.y, h1, h2, options.tol);
        const double margin = std::min({options.tol - claims.d_y_h2, claims.d_x_h2 - claims.d_y_h2,
                                        claims.d_y_h1 + options.tol - claims.d_x_h1});
        ++report.checked;
        report.worst_margin = std::min(report.worst_margin, margin);
        if (claims.holds()) {
          ++report.passed;
        } else {
          report.counterexamples.push_back({{"x", vec_json(x)},
                                            {"n1", vec_json(h1.normal)},
                                            {"o1", h1.offset},
                                            {"n2", vec_json(h2.normal)},
                                            {"o2", h2.offset},
                                            {"eta", eta},
                                            {"y", vec_json(built.y)},
                                            {"d_x_h1", claims.d_x_h1},
                                            {"d_y_h1", claims.d_y_h1},
                                            {"d_x_h2", claims.d_x_h2},
                                            {"d_y_h2", claims.d_y_h2}});
        }
      }
    }
  }
  if (report.checked == 0) report.worst_margin = 0.0;
  report.details = {{"pairs_examined", pairs},
                    {"orthogonal_checked", orthogonal},
                    {"oblique_checked", oblique},
                    {"degenerate_skipped", degenerate},
                    {"precondition_failed", precondition_failed}};
  return report;
}

double Raster::disagreement_fraction() const {
  if (!pair || cells.empty()) return 0.0;
  const auto n = std::count(cells.begin(), cells.end(), 2);
  return static_cast<double>(n) / static_cast<double>(cells.size());
}

namespace {

Vec cell_center(const BoundingBox& box, int resolution, int row, int col) {
  Vec p(2);
  p[0] = box.min_x + (col + 0.5) * (box.max_x - box.min_x) / resolution;
  p[1] = box.max_y - (row + 0.5) * (box.max_y - box.min_y) / resolution;
  return p;
}

void check_raster_args(const Network& net, int resolution) {
  if (net.input_dim() != 2) throw ConfigError("rasters need a 2-D input space");
  if (resolution < 1) throw ConfigError("raster resolution must be >= 1");
}

}  // namespace

Raster raster_2d(const Network& net, const BoundingBox& bbox, int resolution) {
  check_raster_args(net, resolution);
  Raster r{resolution, bbox, false, std::vector<int>(static_cast<std::size_t>(resolution) * resolution)};
  for (int row = 0; row < resolution; ++row) {
    for (int col = 0; col < resolution; ++col) {
      r.cells[static_cast<std::size_t>(row) * resolution + col] =
          predict(net, cell_center(bbox, resolution, row, col));
    }
  }
  return r;
}

Raster raster_2d(const Network& a, const Network& b, const BoundingBox& bbox, int resolution) {
  check_raster_args(a, resolution);
  check_raster_args(b, resolution);
  if (a.output_dim() != 1 || b.output_dim() != 1) {
    throw ConfigError("pair rasters are defined for binary classifiers");
  }
  Raster r{resolution, bbox, true, std::vector<int>(static_cast<std::size_t>(resolution) * resolution)};
  for (int row = 0; row < resolution; ++row) {
    for (int col = 0; col < resolution; ++col) {
      const Vec p = cell_center(bbox, resolution, row, col);
      const int ca = predict(a, p);
      const int cb = predict(b, p);
      r.cells[static_cast<std::size_t>(row) * resolution + col] = ca == cb ? ca : 2;
    }
  }
  return r;
}

void write_pgm(const Raster& raster, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  int top = 1;
  for (int v : raster.cells) top = std::max(top, v);
  // Pair rasters: black/white where the models agree, grey where they differ.
  auto level = [&](int v) {
    if (raster.pair) return v == 0 ? 0 : v == 1 ? 255 : 128;
    return static_cast<int>(std::lround(255.0 * v / top));
  };
  out << "P2\n" << raster.resolution << ' ' << raster.resolution << "\n255\n";
  for (int row = 0; row < raster.resolution; ++row) {
    for (int col = 0; col < raster.resolution; ++col) {
      if (col) out << ' ';
      out << level(raster.cells[static_cast<std::size_t>(row) * raster.resolution + col]);
    }
    out << '\n';
  }
}

nlohmann::json raster_sidecar(const Raster& raster) {
  nlohmann::json doc{{"resolution", raster.resolution},
                     {"bbox",
                      {{"min_x", raster.bbox.min_x},
                       {"max_x", raster.bbox.max_x},
                       {"min_y", raster.bbox.min_y},
                       {"max_y", raster.bbox.max_y}}},
                     {"row_order", "top_to_bottom"},
                     {"kind", raster.pair ? "pair" : "single"}};
  if (raster.pair) {
    doc["legend"] = {{"0", "agree class 0"}, {"128", "disagree"}, {"255", "agree class 1"}};
    doc["disagreement_fraction"] = raster.disagreement_fraction();
  } else {
    doc["legend"] = "grey level proportional to predicted class id";
  }
  return doc;
}

}  // namespace cfstab

namespace cfstab::fault {

Vec inverted_mask_gradient(const Network& net, const Vec& x, int logit_index) {
  std::vector<Vec> pre;
  Vec a = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const Vec u = net.layers[l].weight * a + net.layers[l].bias;
    if (l + 1 == net.layers.size()) break;
    pre.push_back(u);
    a = u.cwiseMax(0.0);
  }
  Vec delta = net.layers.back().weight.row(logit_index).transpose();
  for (std::size_t l = net.layers.size() - 1; l-- > 0;) {
    delta = (pre[l].array() > 0.0).select(0.0, delta.array()).matrix();
    delta = net.layers[l].weight.transpose() * delta;
  }
  return delta;
}

Network fixture_network() {
  Network net = init_network(NetworkSpec{{2, 2, 1}}, 0);
  net.layers[0].weight << 1.0, 1.0, -1.0, -1.0;
  net.layers[0].bias.setZero();
  net.layers[1].weight << 1.0, 0.1;
  net.layers[1].bias.setZero();
  return net;
}

}  // namespace cfstab::fault
