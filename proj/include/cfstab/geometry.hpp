#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfstab/nn.hpp"

namespace cfstab {

// A linear piece of the decision boundary: {z : normal.z + offset = 0},
// valid on the activation region described by `pattern`.
struct BoundaryProbe {
  ActivationPattern pattern;
  Vec normal;
  double offset = 0.0;
};

// Probe for the binary decision boundary piece of the region containing `point`.
BoundaryProbe probe_at(const Network& net, const Vec& point);

// n = w1^T diag(pattern) W0 for a one-hidden-layer network.
Vec region_normal(const Network& net, const ActivationPattern& pattern);

double distance_to_hyperplane(const Vec& x, const BoundaryProbe& probe);
double cos_angle(const BoundaryProbe& a, const BoundaryProbe& b);

// Sufficient step length for the oblique case: ||x|| / (1/cos - cos).
// +inf for parallel normals, 0 for orthogonal ones; negative when the
// normals form an obtuse angle, in which case any eta > 0 satisfies it.
double lemma1_threshold(const Vec& x, const BoundaryProbe& h1, const BoundaryProbe& h2);

enum class Theorem1Status { kOk, kDegenerate };

struct Theorem1Point {
  Theorem1Status status = Theorem1Status::kOk;
  Vec y;
  std::string note;
};

// y' = x + eta * n1/|n1|, y = y' - |n2.y' + o2| n2/|n2|^2, with both normals
// oriented towards x. Reports kDegenerate when H1 and H2 coincide.
Theorem1Point construct_theorem1_point(const Vec& x, const BoundaryProbe& h1,
                                       const BoundaryProbe& h2, double eta);

struct Theorem1Claims {
  double d_x_h1 = 0.0, d_x_h2 = 0.0, d_y_h1 = 0.0, d_y_h2 = 0.0;
  bool on_h2 = false;       // d(y, H2) <= tol
  bool closer_to_h2 = false;  // d(y, H2) < d(x, H2)
  bool farther_from_h1 = false;  // d(x, H1) <= d(y, H1) + tol
  bool holds() const { return on_h2 && closer_to_h2 && farther_from_h1; }
};

Theorem1Claims check_theorem1_claims(const Vec& x, const Vec& y, const BoundaryProbe& h1,
                                     const BoundaryProbe& h2, double tol = 1e-9);

// True iff the foot of the perpendicular from x onto the probe's hyperplane
// lies in the probe's activation region (so it is on the boundary piece).
bool projection_on_piece(const Network& net, const Vec& x, const BoundaryProbe& probe);

// Boundary pieces met along rays from x: each ray is scanned for sign flips
// of the logit, each flip bisected to 1e-10, and the pattern at the flip read.
// Pieces are de-duplicated by activation pattern.
std::vector<BoundaryProbe> discover_boundaries(const Network& net, const Vec& x, int directions,
                                               double max_radius, std::uint64_t seed);

struct InfluenceResult {
  Vec influence;
  std::string distribution = "uniform(0->x)";
  int sample_count = 0;
};

// Mean input gradient of a logit over the midpoint grid t_k = (k - 1/2)/S on
// the segment from 0 to x.
InfluenceResult distributional_influence(const Network& net, const Vec& x, int target_logit,
                                         int samples);

struct VerifierReport {
  std::string name;
  std::size_t checked = 0;
  std::size_t passed = 0;
  double worst_margin = 0.0;
  nlohmann::json counterexamples = nlohmann::json::array();
  nlohmann::json details = nlohmann::json::object();

  bool ok() const { return checked == passed; }
  nlohmann::json to_json() const;
  // Folds another report of the same verifier into this one.
  void merge(const VerifierReport& other);
};

using GradientFn = std::function<Vec(const Network&, const Vec&, int)>;

// Samples x' = t x, t ~ U[0,1]; checks |grad q(x')| >= |x|^-1 |d q(r x')/dr at r=1|
// with q = logit 0. The radial derivative is a central difference in r, so the
// check is independent of the gradient routine under test. Samples whose
// difference stencil crosses an activation constraint are redrawn.
VerifierReport verify_prop1(const Network& net, const Vec& x, int trials, std::uint64_t seed,
                            const GradientFn& gradient = {}, double slack = 1e-9);

// 1.01 * max over `points` evenly spaced t in [0,1] of the spectral norm of the
// penultimate-layer Jacobian at t x.
double estimate_path_lipschitz(const Network& net, const Vec& x, int points);

// Distributional influence of sigmoid(w.h(z) + b) over Uniform(0 -> x) with
// the given top-layer weights.
Vec sigmoid_influence(const Network& net, const Vec& x, const Vec& top_weights, int samples);

VerifierReport verify_theorem2_bound(const Network& net, const Vec& x, double delta_cap, int trials,
                                     int doi_samples, std::uint64_t seed, int path_points = 1000,
                                     double slack = 1e-6);

struct Theorem1SweepOptions {
  int directions = 64;
  double max_radius = 6.0;
  double orthogonal_tol = 1e-6;
  double tol = 1e-9;
  std::uint64_t seed = 0;
};

// Runs the construction over every pair of discovered boundary pieces that
// meets the projection precondition. Orthogonal pairs are checked with a
// small eta; oblique pairs with eta above the lemma threshold.
VerifierReport verify_theorem1(const Network& net, const std::vector<Vec>& points,
                               const Theorem1SweepOptions& options);

struct BoundingBox {
  double min_x = -3.0, max_x = 3.0, min_y = -3.0, max_y = 3.0;
};

// Row-major, row 0 at max_y. Single model: class ids. Pair: 0 agree on
// class 0, 1 agree on class 1, 2 disagree.
struct Raster {
  int resolution = 0;
  BoundingBox bbox;
  bool pair = false;
  std::vector<int> cells;

  double disagreement_fraction() const;
};

Raster raster_2d(const Network& net, const BoundingBox& bbox, int resolution);
Raster raster_2d(const Network& a, const Network& b, const BoundingBox& bbox, int resolution);

void write_pgm(const Raster& raster, const std::filesystem::path& path);
nlohmann::json raster_sidecar(const Raster& raster);

// Negative controls for the gradient checks.
namespace fault {

// Backpropagation with the ReLU mask inverted (inactive units pass gradient).
Vec inverted_mask_gradient(const Network& net, const Vec& x, int logit_index);

// [2,2,1] net: W0 = [[1,1],[-1,-1]], w1 = (1, 0.1), zero biases. The
// inverted mask is visible on it for any x with x0 + x1 != 0.
Network fixture_network();

}  // namespace fault

}  // namespace cfstab
