#include "splatmark/splat.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>
#include <nlohmann/json.hpp>

#include "splatmark/error.hpp"

namespace splatmark {

namespace {

using nlohmann::json;

// Contributions beyond q = 36 are below 1.6e-8 * opacity and are skipped.
constexpr double kCutoff = 36.0;

struct Contribution {
  int prim;
  double alpha;
  double transmittance;
};

struct Prepared {
  ad::Matrix pre;    // c + offset, N x 3
  ad::Matrix color;  // soft-clamped, N x 3
  std::vector<double> cs, sn;
  std::vector<std::vector<Contribution>> pixels;
  ad::Matrix composite;  // before the output clamp
};

Prepared prepare(const SplatScene& scene, const ad::Matrix& offsets) {
  scene.validate();
  const auto n = static_cast<ad::Index>(scene.size());
  if (offsets.size() != 0 && (offsets.rows() != n || offsets.cols() != 3)) {
    throw InputError("render: offsets must be N x 3 (N=" + std::to_string(n) + ")");
  }
  Prepared p;
  p.pre.resize(n, 3);
  p.cs.resize(static_cast<std::size_t>(n));
  p.sn.resize(static_cast<std::size_t>(n));
  for (ad::Index i = 0; i < n; ++i) {
    const Primitive& q = scene.primitives[static_cast<std::size_t>(i)];
    p.pre(i, 0) = q.r;
    p.pre(i, 1) = q.g;
    p.pre(i, 2) = q.b;
    p.cs[static_cast<std::size_t>(i)] = std::cos(q.theta);
    p.sn[static_cast<std::size_t>(i)] = std::sin(q.theta);
  }
  if (offsets.size() != 0) p.pre += offsets;
  p.color = p.pre.unaryExpr([](double x) { return ad::soft_clamp01(x, kColorMargin); });

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return scene.primitives[static_cast<std::size_t>(a)].depth < scene.primitives[static_cast<std::size_t>(b)].depth;
  });

  const int h = scene.height, w = scene.width;
  p.pixels.assign(static_cast<std::size_t>(h) * w, {});
  for (int i : order) {
    const Primitive& q = scene.primitives[static_cast<std::size_t>(i)];
    const double radius = std::sqrt(kCutoff) * std::max(q.sx, q.sy);
    const int x0 = std::max(0, static_cast<int>(std::floor(q.x - radius)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(q.x + radius)));
    const int y0 = std::max(0, static_cast<int>(std::floor(q.y - radius)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(q.y + radius)));
    const double c = p.cs[static_cast<std::size_t>(i)], s = p.sn[static_cast<std::size_t>(i)];
    for (int py = y0; py <= y1; ++py) {
      for (int px = x0; px <= x1; ++px) {
        const double dx = px + 0.5 - q.x, dy = py + 0.5 - q.y;
        const double u = c * dx + s * dy, v = -s * dx + c * dy;
        const double qq = (u / q.sx) * (u / q.sx) + (v / q.sy) * (v / q.sy);
        if (qq > kCutoff) continue;
        p.pixels[static_cast<std::size_t>(py) * w + px].push_back({i, q.opacity * std::exp(-0.5 * qq), 0.0});
      }
    }
  }

  p.composite.resize(static_cast<ad::Index>(h) * w, 3);
  for (std::size_t pix = 0; pix < p.pixels.size(); ++pix) {
    double t = 1.0;
    std::array<double, 3> acc{0.0, 0.0, 0.0};
    for (Contribution& e : p.pixels[pix]) {
      e.transmittance = t;
      for (int ch = 0; ch < 3; ++ch) acc[static_cast<std::size_t>(ch)] += t * e.alpha * p.color(e.prim, ch);
      t *= 1.0 - e.alpha;
    }
    for (int ch = 0; ch < 3; ++ch) {
      p.composite(static_cast<ad::Index>(pix), ch) = acc[static_cast<std::size_t>(ch)] + t * scene.background;
    }
  }
  return p;
}

SceneGradients backward(const SplatScene& scene, const Prepared& p, const ad::Matrix& grad_image) {
  const auto n = static_cast<ad::Index>(scene.size());
  if (grad_image.rows() != p.composite.rows() || grad_image.cols() != 3) {
    throw InputError("render_backward: gradient must be (H*W) x 3");
  }
  SceneGradients g;
  g.center = ad::Matrix::Zero(n, 2);
  g.scale = ad::Matrix::Zero(n, 2);
  g.rotation = ad::Matrix::Zero(n, 1);
  g.opacity = ad::Matrix::Zero(n, 1);
  ad::Matrix dcolor = ad::Matrix::Zero(n, 3);
  const int w = scene.width;

  for (std::size_t pix = 0; pix < p.pixels.size(); ++pix) {
    const auto& list = p.pixels[pix];
    if (list.empty()) continue;
    const auto row = static_cast<ad::Index>(pix);
    std::array<double, 3> go{}, back{};
    for (int ch = 0; ch < 3; ++ch) {
      go[static_cast<std::size_t>(ch)] =
          grad_image(row, ch) * ad::soft_clamp01_derivative(p.composite(row, ch), kImageMargin);
      back[static_cast<std::size_t>(ch)] = scene.background;
    }
    const double px = static_cast<double>(pix % static_cast<std::size_t>(w)) + 0.5;
    const double py = static_cast<double>(pix / static_cast<std::size_t>(w)) + 0.5;
    for (auto it = list.rbegin(); it != list.rend(); ++it) {
      const int i = it->prim;
      const double a = it->alpha, t = it->transmittance;
      double da = 0.0;
      for (int ch = 0; ch < 3; ++ch) {
        const auto c = static_cast<std::size_t>(ch);
        const double col = p.color(i, ch);
        dcolor(i, ch) += t * a * go[c];
        da += t * go[c] * (col - back[c]);
        back[c] = a * col + (1.0 - a) * back[c];
      }
      const Primitive& q = scene.primitives[static_cast<std::size_t>(i)];
      g.opacity(i, 0) += da * a / q.opacity;
      const double dq = -0.5 * a * da;
      const double cs = p.cs[static_cast<std::size_t>(i)], sn = p.sn[static_cast<std::size_t>(i)];
      const double dx = px - q.x, dy = py - q.y;
      const double u = cs * dx + sn * dy, v = -sn * dx + cs * dy;
      const double du = dq * 2.0 * u / (q.sx * q.sx), dv = dq * 2.0 * v / (q.sy * q.sy);
      g.scale(i, 0) -= dq * 2.0 * u * u / (q.sx * q.sx * q.sx);
      g.scale(i, 1) -= dq * 2.0 * v * v / (q.sy * q.sy * q.sy);
      g.center(i, 0) += -cs * du + sn * dv;
      g.center(i, 1) += -sn * du - cs * dv;
      g.rotation(i, 0) += du * v - dv * u;
    }
  }
  g.color = dcolor.cwiseProduct(p.pre.unaryExpr([](double x) { return ad::soft_clamp01_derivative(x, kColorMargin); }));
  g.offsets = g.color;
  return g;
}

ad::Matrix full_offsets(const Carrier& c) {
  return c.offsets.size() == 0 ? ad::Matrix::Zero(static_cast<ad::Index>(c.scene.size()), 3) : c.offsets;
}

Image finish(const SplatScene& scene, const ad::Matrix& composite) {
  return Image(scene.height, scene.width,
               composite.unaryExpr([](double x) { return ad::soft_clamp01(x, kImageMargin); }));
}

}  // namespace

void SplatScene::validate() const {
  if (height <= 0 || width <= 0) throw InputError("scene: canvas must be positive");
  if (primitives.empty()) throw InputError("scene: needs at least one primitive");
  if (!std::isfinite(background)) throw InputError("scene: background must be finite");
  std::set<std::int64_t> ranks;
  for (std::size_t i = 0; i < primitives.size(); ++i) {
    const Primitive& p = primitives[i];
    const std::string at = "scene: primitive " + std::to_string(i);
    for (double v : {p.x, p.y, p.sx, p.sy, p.theta, p.r, p.g, p.b, p.opacity}) {
      if (!std::isfinite(v)) throw InputError(at + " has a non-finite attribute");
    }
    if (p.sx <= kMinScale || p.sy <= kMinScale) throw InputError(at + " has a degenerate covariance");
    if (!(p.opacity > 0.0 && p.opacity <= 1.0)) throw InputError(at + " opacity must lie in (0, 1]");
    if (!ranks.insert(p.depth).second) throw InputError(at + " repeats depth rank " + std::to_string(p.depth));
  }
}

SplatScene generate_scene(const SceneConfig& cfg) {
  if (cfg.count < 1 || cfg.height <= 0 || cfg.width <= 0) throw ConfigError("scene: count and canvas must be positive");
  if (!(cfg.min_scale > kMinScale && cfg.max_scale >= cfg.min_scale)) throw ConfigError("scene: bad scale range");
  Rng rng(mix_seed(cfg.seed, 0x5ce7e));
  SplatScene s;
  s.height = cfg.height;
  s.width = cfg.width;
  s.background = cfg.background;
  std::vector<std::int64_t> ranks(static_cast<std::size_t>(cfg.count));
  std::iota(ranks.begin(), ranks.end(), 0);
  rng.shuffle(ranks);
  for (int i = 0; i < cfg.count; ++i) {
    Primitive p;
    p.x = rng.uniform(0.0, cfg.width);
    p.y = rng.uniform(0.0, cfg.height);
    p.sx = rng.uniform(cfg.min_scale, cfg.max_scale);
    p.sy = rng.uniform(cfg.min_scale, cfg.max_scale);
    p.theta = rng.uniform(0.0, std::numbers::pi);
    p.r = rng.uniform();
    p.g = rng.uniform();
    p.b = rng.uniform();
    p.opacity = rng.uniform(0.5, 0.95);
    p.depth = ranks[static_cast<std::size_t>(i)];
    s.primitives.push_back(p);
  }
  return s;
}

void save_scene(const std::string& path, const SplatScene& scene, const std::map<std::string, std::string>& manifest) {
  scene.validate();
  json prims = json::array();
  for (const Primitive& p : scene.primitives) {
    prims.push_back({{"center", {p.x, p.y}},
                     {"scale", {p.sx, p.sy}},
                     {"rotation", p.theta},
                     {"color", {p.r, p.g, p.b}},
                     {"opacity", p.opacity},
                     {"depth", p.depth}});
  }
  json j = {{"format", "splatmark.scene"}, {"version", 1},           {"height", scene.height},
            {"width", scene.width},         {"background", scene.background}, {"primitives", prims}};
  if (!manifest.empty()) j["manifest"] = manifest;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(1) << "\n";
  if (!out) throw IoError("write failed for '" + path + "'");
}

SplatScene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  SplatScene s;
  try {
    const json j = json::parse(in);
    if (j.at("format") != "splatmark.scene") throw FormatError("'" + path + "' is not a scene file");
    if (j.at("version") != 1) throw FormatError("'" + path + "': unsupported scene version");
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    s.background = j.at("background").get<double>();
    for (const json& p : j.at("primitives")) {
      Primitive q;
      q.x = p.at("center").at(0).get<double>();
      q.y = p.at("center").at(1).get<double>();
      q.sx = p.at("scale").at(0).get<double>();
      q.sy = p.at("scale").at(1).get<double>();
      q.theta = p.at("rotation").get<double>();
      q.r = p.at("color").at(0).get<double>();
      q.g = p.at("color").at(1).get<double>();
      q.b = p.at("color").at(2).get<double>();
      q.opacity = p.at("opacity").get<double>();
      q.depth = p.at("depth").get<std::int64_t>();
      s.primitives.push_back(q);
    }
  } catch (const json::exception& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
  try {
    s.validate();
  } catch (const InputError& e) {
    throw FormatError("'" + path + "': " + e.what());
  }
  return s;
}

Image render(const SplatScene& scene, const ad::Matrix& offsets) {
  return finish(scene, prepare(scene, offsets).composite);
}

SceneGradients render_backward(const SplatScene& scene, const ad::Matrix& offsets, const ad::Matrix& grad_image) {
  return backward(scene, prepare(scene, offsets), grad_image);
}

ad::Var render(const SplatScene& scene, ad::Var offsets) {
  auto prepared = std::make_shared<Prepared>(prepare(scene, offsets.value()));
  ad::Matrix out = finish(scene, prepared->composite).pixels;
  ad::Tape& t = *offsets.tape();
  return t.record(std::move(out), {offsets}, [offsets, prepared, scene](ad::Tape& t, const ad::Matrix& g) {
    t.accumulate(offsets, backward(scene, *prepared, g).offsets);
  });
}

Carrier attack_noise(const Carrier& in, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw InputError("attack_noise: sigma must be nonnegative");
  Carrier out = in;
  out.offsets = full_offsets(in);
  for (ad::Index i = 0; i < out.offsets.size(); ++i) out.offsets.data()[i] += rng.normal(0.0, sigma);
  return out;
}

Carrier attack_prune(const Carrier& in, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw InputError("attack_prune: ratio must lie in [0, 1)");
  const std::size_t n = in.scene.size();
  const auto remove = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  const ad::Matrix offsets = full_offsets(in);
  std::vector<bool> drop(n, false);
  for (std::size_t k = 0; k < remove; ++k) drop[idx[k]] = true;

  Carrier out;
  out.scene = in.scene;
  out.scene.primitives.clear();
  out.offsets.resize(static_cast<ad::Index>(n - remove), 3);
  ad::Index row = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (drop[i]) continue;
    out.scene.primitives.push_back(in.scene.primitives[i]);
    out.offsets.row(row++) = offsets.row(static_cast<ad::Index>(i));
  }
  return out;
}

Carrier attack_clone(const Carrier& in, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InputError("attack_clone: ratio must lie in [0, 1]");
  const std::size_t n = in.scene.size();
  const auto extra = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);

  Carrier out = in;
  out.offsets = full_offsets(in);
  std::int64_t next = std::numeric_limits<std::int64_t>::min();
  for (const Primitive& p : in.scene.primitives) next = std::max(next, p.depth);
  out.offsets.conservativeResize(static_cast<ad::Index>(n + extra), 3);
  for (std::size_t k = 0; k < extra; ++k) {
    Primitive p = in.scene.primitives[idx[k]];
    p.depth = ++next;
    out.scene.primitives.push_back(p);
    out.offsets.row(static_cast<ad::Index>(n + k)) = out.offsets.row(static_cast<ad::Index>(idx[k]));
  }
  return out;
}

}  // namespace splatmark
