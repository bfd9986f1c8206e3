#include "splatmark/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "splatmark/error.hpp"
#include "splatmark/hash.hpp"
#include "splatmark/metrics.hpp"
#include "splatmark/pretrain.hpp"

namespace splatmark {

const char* protocol_name(ProtocolMode mode) {
  switch (mode) {
    case ProtocolMode::kIn: return "in";
    case ProtocolMode::kOut: return "out";
    case ProtocolMode::kRandom: return "random";
  }
  return "?";
}

ProtocolMode parse_protocol(const std::string& name) {
  for (ProtocolMode m : {ProtocolMode::kIn, ProtocolMode::kOut, ProtocolMode::kRandom}) {
    if (name == protocol_name(m)) return m;
  }
  throw ConfigError("unknown protocol '" + name + "' (expected in, out or random)");
}

const char* attack_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::kNone: return "none";
    case AttackKind::kPrune: return "prune";
    case AttackKind::kClone: return "clone";
    case AttackKind::kNoise: return "noise";
  }
  return "?";
}

AttackKind parse_attack(const std::string& name) {
  for (AttackKind k : all_attacks()) {
    if (name == attack_name(k)) return k;
  }
  throw ConfigError("unknown attack '" + name + "' (expected none, prune, clone or noise)");
}

std::vector<AttackKind> all_attacks() {
  return {AttackKind::kNone, AttackKind::kPrune, AttackKind::kClone, AttackKind::kNoise};
}

void EvalConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("eval: " + what); };
  if (sample_count < 1) fail("sample_count must be positive");
  if (mode == ProtocolMode::kRandom && sample_count % 2 != 0) fail("random protocol needs an even sample_count");
  if (!(prune_ratio >= 0.0 && prune_ratio < 1.0)) fail("prune_ratio must lie in [0, 1)");
  if (!(clone_ratio >= 0.0 && clone_ratio <= 1.0)) fail("clone_ratio must lie in [0, 1]");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be nonnegative");
  if (text_samples < 1) fail("text_samples must be positive");
}

Carrier apply_attack(const Carrier& in, AttackKind kind, const EvalConfig& cfg, Rng& rng) {
  switch (kind) {
    case AttackKind::kNone: return in;
    case AttackKind::kPrune: return attack_prune(in, cfg.prune_ratio, rng);
    case AttackKind::kClone: return attack_clone(in, cfg.clone_ratio, rng);
    case AttackKind::kNoise: return attack_noise(in, cfg.noise_sigma, rng);
  }
  throw ConfigError("unknown attack kind");
}

namespace {

std::vector<BitMessage> sample_in(std::size_t count, std::span<const BitMessage> buffer, Rng& rng) {
  std::set<BitMessage> distinct(buffer.begin(), buffer.end());
  std::vector<BitMessage> pool(distinct.begin(), distinct.end());
  if (pool.size() < count) {
    throw InputError("eval: buffer holds " + std::to_string(pool.size()) + " distinct messages, " +
                     std::to_string(count) + " requested");
  }
  rng.shuffle(pool);
  pool.resize(count);
  return pool;
}

std::vector<BitMessage> sample_out(std::size_t count, std::span<const BitMessage> buffer, int bits, Rng& rng) {
  KeySet taken;
  for (const auto& m : buffer) taken.insert(key_of(m));
  if (bits < 40) {
    const std::uint64_t space = std::uint64_t{1} << bits;
    if (space - std::min<std::uint64_t>(space, taken.size()) < count) {
      throw InputError("eval: the complement of the buffer has fewer than " + std::to_string(count) + " messages");
    }
  }
  std::vector<BitMessage> out;
  if (bits <= 20 && taken.size() * 2 > (std::size_t{1} << bits)) {
    for (std::uint64_t v = 0; v < (std::uint64_t{1} << bits); ++v) {
      auto m = BitMessage::from_integer(v, bits);
      if (!taken.count(key_of(m))) out.push_back(std::move(m));
    }
    rng.shuffle(out);
    out.resize(count);
    return out;
  }
  while (out.size() < count) {
    auto m = random_message(bits, rng);
    if (taken.insert(key_of(m)).second) out.push_back(std::move(m));
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string embed_cache_key(const BitMessage& m, const SplatScene& scene, const Decoder& decoder,
                            const ImageEncoder& encoder, const EmbedConfig& c) {
  Sha256 h;
  h.update("embed-cache/v1");
  h.update(m.to_string());
  h.update(decoder.parameter_hash());
  h.update(encoder.parameter_hash());
  std::ostringstream s;
  s.precision(17);
  s << scene.height << ' ' << scene.width << ' ' << scene.background;
  for (const auto& p : scene.primitives) {
    s << '|' << p.x << ' ' << p.y << ' ' << p.sx << ' ' << p.sy << ' ' << p.theta << ' ' << p.r << ' ' << p.g << ' '
      << p.b << ' ' << p.opacity << ' ' << p.depth;
  }
  s << '#' << c.lambda_bit << ' ' << c.lambda_image << ' ' << c.lambda_ssim << ' ' << c.lambda_off << ' '
    << c.adam.lr << ' ' << c.lr_floor << ' ' << c.adam.beta1 << ' ' << c.adam.beta2 << ' ' << c.adam.eps << ' ' << c.adam.weight_decay
    << ' ' << c.batch_size << ' ' << c.epochs << ' ' << c.steps_per_epoch << ' ' << c.seed;
  const auto& d = c.distortion;
  for (auto k : d.enabled) s << ' ' << distortion_name(k);
  s << ' ' << d.noise_sigma << ' ' << d.rotation_max << ' ' << d.scale_max << ' ' << d.blur_sigma << ' '
    << d.blur_kernel << ' ' << d.crop_area << ' ' << d.brightness_min << ' ' << d.brightness_max << ' '
    << d.jpeg_quality;
  h.update(s.str());
  return h.hex_digest();
}

// Per-message stream so results do not depend on iteration order.
std::uint64_t message_seed(std::uint64_t seed, const std::string& digest) {
  return mix_seed(seed, std::stoull(digest.substr(0, 16), nullptr, 16));
}

}  // namespace

std::vector<BitMessage> sample_protocol_messages(ProtocolMode mode, std::size_t count,
                                                 std::span<const BitMessage> buffer, int message_bits, Rng& rng) {
  if (buffer.empty()) throw InputError("eval: a buffer snapshot is required to separate In from Out");
  for (const auto& m : buffer) {
    if (m.size() != message_bits) throw InputError("eval: buffer message length differs from L");
  }
  switch (mode) {
    case ProtocolMode::kIn: return sample_in(count, buffer, rng);
    case ProtocolMode::kOut: return sample_out(count, buffer, message_bits, rng);
    case ProtocolMode::kRandom: {
      auto in = sample_in(count / 2, buffer, rng);
      auto out = sample_out(count - count / 2, buffer, message_bits, rng);
      in.insert(in.end(), out.begin(), out.end());
      return in;
    }
  }
  throw ConfigError("unknown protocol");
}

TextReport evaluate_text(const Decoder& decoder, EmbeddingProvider& embeddings, std::span<const BitMessage> buffer,
                         const EvalConfig& cfg) {
  cfg.validate();
  const int L = decoder.config().message_bits;
  std::set<BitMessage> distinct(buffer.begin(), buffer.end());
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(cfg.text_samples), distinct.size());
  Rng rng(mix_seed(cfg.seed, 0x7e47));
  const auto in = sample_protocol_messages(ProtocolMode::kIn, n, buffer, L, rng);
  const auto out = sample_protocol_messages(ProtocolMode::kOut, n, buffer, L, rng);
  const auto a = text_accuracy(decoder, embeddings, in);
  const auto b = text_accuracy(decoder, embeddings, out);
  TextReport r;
  r.in_bit = a.bit;
  r.in_projected = a.projected;
  r.out_bit = b.bit;
  r.out_projected = b.projected;
  r.random_bit = (a.bit + b.bit) / 2.0;
  r.random_projected = (a.projected + b.projected) / 2.0;
  r.samples = n;
  return r;
}

std::vector<std::string> report_columns(const EvalConfig& cfg) {
  std::vector<std::string> cols = {"none"};
  for (auto a : cfg.attacks) {
    if (a != AttackKind::kNone) cols.push_back(std::string("3d-") + attack_name(a));
  }
  for (auto d : cfg.distortions) {
    if (d != DistortionKind::kNone) cols.push_back(std::string("2d-") + distortion_name(d));
  }
  return cols;
}

EvalReport run_protocol(const Decoder& decoder, const ImageEncoder& encoder, const SplatScene& scene,
                        std::span<const BitMessage> buffer, const EmbedConfig& embed_cfg, const EvalConfig& cfg,
                        const std::string& cache_dir) {
  cfg.validate();
  embed_cfg.validate();
  scene.validate();
  const int L = decoder.config().message_bits;
  Rng rng(cfg.seed);
  const auto messages =
      sample_protocol_messages(cfg.mode, static_cast<std::size_t>(cfg.sample_count), buffer, L, rng);
  const std::size_t in_count = cfg.mode == ProtocolMode::kIn    ? messages.size()
                               : cfg.mode == ProtocolMode::kOut ? 0
                                                                : messages.size() / 2;

  EvalReport report;
  report.mode = cfg.mode;
  report.columns = report_columns(cfg);
  const Embedder embedder(decoder, encoder, embed_cfg);
  const DistortionLayer layer(scene.height, scene.width, embed_cfg.distortion);
  const Image base = render(scene);

  for (std::size_t i = 0; i < messages.size(); ++i) {
    const auto& msg = messages[i];
    MessageResult r;
    r.digest = message_digest(msg);
    r.side = i < in_count ? "in" : "out";

    ad::Matrix offsets;
    std::string cache_path;
    if (!cache_dir.empty()) {
      cache_path = (std::filesystem::path(cache_dir) /
                    (embed_cache_key(msg, scene, decoder, encoder, embed_cfg) + ".offsets"))
                       .string();
      if (std::filesystem::exists(cache_path)) offsets = load_embed_artifact(cache_path).offsets;
    }
    if (offsets.size() == 0) {
      offsets = embedder.embed(scene, msg).offsets;
      if (!cache_path.empty()) {
        std::filesystem::create_directories(cache_dir);
        save_embed_artifact(cache_path, {offsets, {{"message_digest", r.digest}}});
      }
    }

    const Carrier carrier{scene, offsets};
    const Image marked = render(scene, offsets);
    r.psnr = psnr(marked, base);
    r.ssim = ssim(marked, base);
    auto score = [&](const Image& img) { return bit_accuracy(extract(img, decoder, encoder), msg); };

    Rng mrng(message_seed(cfg.seed, r.digest));
    r.accuracy["none"] = score(marked);
    for (auto a : cfg.attacks) {
      if (a == AttackKind::kNone) continue;
      const Carrier attacked = apply_attack(carrier, a, cfg, mrng);
      r.accuracy[std::string("3d-") + attack_name(a)] = score(render(attacked.scene, attacked.offsets));
    }
    for (auto d : cfg.distortions) {
      if (d == DistortionKind::kNone) continue;
      r.accuracy[std::string("2d-") + distortion_name(d)] = score(layer.apply(marked, d, mrng));
    }
    report.messages.push_back(std::move(r));
  }

  std::sort(report.messages.begin(), report.messages.end(), [](const MessageResult& a, const MessageResult& b) {
    return std::tie(a.side, a.digest) < std::tie(b.side, b.digest);
  });
  std::vector<double> ps, ss;
  for (const auto& side : {"in", "out"}) {
    for (const auto& col : report.columns) {
      std::vector<double> v;
      for (const auto& m : report.messages) {
        if (m.side == side) v.push_back(m.accuracy.at(col));
      }
      if (v.empty()) continue;
      report.accuracy[side][col] = mean_of(v);
    }
  }
  for (const auto& m : report.messages) {
    ps.push_back(m.psnr);
    ss.push_back(m.ssim);
  }
  report.psnr = mean_of(ps);
  report.ssim = mean_of(ss);
  if (cfg.mode == ProtocolMode::kRandom) {
    for (const auto& col : report.columns) {
      report.accuracy["random"][col] = (report.accuracy["in"][col] + report.accuracy["out"][col]) / 2.0;
    }
  }

  report.echo["protocol"] = protocol_name(cfg.mode);
  report.echo["sample_count"] = std::to_string(cfg.sample_count);
  report.echo["seed.eval"] = std::to_string(cfg.seed);
  report.echo["seed.embed"] = std::to_string(embed_cfg.seed);
  report.echo["hash.decoder"] = decoder.parameter_hash();
  report.echo["hash.image_encoder"] = encoder.parameter_hash();
  return report;
}

std::string EvalReport::to_text() const {
  std::ostringstream out;
  out << "protocol " << protocol_name(mode) << "  messages " << messages.size() << "  psnr " << fmt(psnr, 3)
      << "  ssim " << fmt(ssim, 5) << '\n';
  std::size_t width = 8;
  for (const auto& c : columns) width = std::max(width, c.size() + 2);
  out << std::string(8, ' ');
  for (const auto& c : columns) out << std::string(width - c.size(), ' ') << c;
  out << '\n';
  for (const auto& [side, row] : accuracy) {
    out << side << std::string(8 - std::min<std::size_t>(8, side.size()), ' ');
    for (const auto& c : columns) {
      const auto it = row.find(c);
      const std::string cell = it == row.end() ? "-" : fmt(it->second, 4);
      out << std::string(width - cell.size(), ' ') << cell;
    }
    out << '\n';
  }
  for (const auto& [k, v] : echo) {
    if (k == "config") continue;
    out << k << ' ' << v << '\n';
  }
  return out.str();
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["protocol"] = protocol_name(mode);
  j["columns"] = columns;
  j["psnr"] = psnr;
  j["ssim"] = ssim;
  j["accuracy"] = nlohmann::ordered_json::object();
  for (const auto& [side, row] : accuracy) {
    for (const auto& [col, v] : row) j["accuracy"][side][col] = v;
  }
  j["messages"] = nlohmann::ordered_json::array();
  for (const auto& m : messages) {
    nlohmann::ordered_json e;
    e["digest"] = m.digest;
    e["side"] = m.side;
    e["psnr"] = m.psnr;
    e["ssim"] = m.ssim;
    for (const auto& [col, v] : m.accuracy) e["accuracy"][col] = v;
    j["messages"].push_back(std::move(e));
  }
  nlohmann::ordered_json echo_json = nlohmann::ordered_json::object();
  for (const auto& [k, v] : echo) {
    if (k == "config") {
      echo_json[k] = nlohmann::ordered_json::parse(v);
    } else {
      echo_json[k] = v;
    }
  }
  j["echo"] = std::move(echo_json);
  return j.dump(2) + "\n";
}

}  // namespace splatmark
