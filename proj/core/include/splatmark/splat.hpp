#pragma once

// Toy 2D Gaussian-splat carrier. Primitives are frozen; the learnable
// payload channel is a per-primitive RGB offset added before the color
// clamp.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "splatmark/autodiff.hpp"
#include "splatmark/image.hpp"
#include "splatmark/rng.hpp"

namespace splatmark {

struct Primitive {
  double x = 0.0, y = 0.0;    // center in pixels; pixel (i, j) is sampled at (j + 0.5, i + 0.5)
  double sx = 1.0, sy = 1.0;  // standard deviations along the rotated axes
  double theta = 0.0;         // radians
  double r = 0.5, g = 0.5, b = 0.5;
  double opacity = 1.0;
  std::int64_t depth = 0;     // compositing rank, smaller is nearer

  friend bool operator==(const Primitive&, const Primitive&) = default;
};

struct SplatScene {
  int height = 64;
  int width = 64;
  double background = 0.5;
  std::vector<Primitive> primitives;

  std::size_t size() const { return primitives.size(); }
  /// Throws InputError for degenerate scales, bad opacity, duplicate ranks
  /// or non-finite attributes.
  void validate() const;
  friend bool operator==(const SplatScene&, const SplatScene&) = default;
};

struct SceneConfig {
  int count = 256;
  int height = 64;
  int width = 64;
  double min_scale = 1.5;
  double max_scale = 6.0;
  double background = 0.5;
  std::uint64_t seed = 5;
};

/// Seeded procedural scene: uniform centers, scales, angles and colors,
/// opacity in [0.5, 0.95], depth ranks a random permutation.
SplatScene generate_scene(const SceneConfig& cfg);

/// `manifest` is stored alongside the primitives and ignored on load.
void save_scene(const std::string& path, const SplatScene& scene,
                const std::map<std::string, std::string>& manifest = {});
SplatScene load_scene(const std::string& path);

/// Scene plus its color offsets (N x 3).
struct Carrier {
  SplatScene scene;
  ad::Matrix offsets;
};

inline constexpr double kColorMargin = 0.02;
inline constexpr double kImageMargin = 0.02;
inline constexpr double kMinScale = 1e-3;

/// Forward render. offsets may be empty (treated as zero).
Image render(const SplatScene& scene, const ad::Matrix& offsets = {});

struct SceneGradients {
  ad::Matrix center;    // N x 2 (x, y)
  ad::Matrix scale;     // N x 2
  ad::Matrix rotation;  // N x 1
  ad::Matrix color;     // N x 3
  ad::Matrix opacity;   // N x 1
  ad::Matrix offsets;   // N x 3
};

/// Gradients of sum(grad_image .* render(scene, offsets)) for every attribute.
SceneGradients render_backward(const SplatScene& scene, const ad::Matrix& offsets, const ad::Matrix& grad_image);

/// Render on a tape, differentiable in the offsets Var.
ad::Var render(const SplatScene& scene, ad::Var offsets);

/// Adds N(0, sigma) to every offset entry. The input is not modified.
Carrier attack_noise(const Carrier& in, double sigma, Rng& rng);
/// Removes exactly floor(ratio * N) uniformly chosen primitives.
Carrier attack_prune(const Carrier& in, double ratio, Rng& rng);
/// Appends floor(ratio * N) copies of uniformly chosen primitives (and
/// their offsets) with fresh ranks behind every existing primitive.
Carrier attack_clone(const Carrier& in, double ratio, Rng& rng);

}  // namespace splatmark
