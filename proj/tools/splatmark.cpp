// splatmark: pretrain a message decoder, watermark a splat scene, extract,
// attack and evaluate.
//
// Exit status: 0 on success, otherwise the ErrorKind value (config 2,
// capacity 3, corruption 4, divergence 5, format 6, input 7, io 8), 1 for
// anything unexpected. SPLATMARK_OUT_DIR, when set, prefixes relative
// output paths.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "splatmark/checkpoint.hpp"
#include "splatmark/config.hpp"
#include "splatmark/embedder.hpp"
#include "splatmark/error.hpp"
#include "splatmark/eval.hpp"
#include "splatmark/image.hpp"
#include "splatmark/metrics.hpp"
#include "splatmark/pretrain.hpp"
#include "splatmark/splat.hpp"

namespace fs = std::filesystem;
using namespace splatmark;

namespace {

struct ConfigFlags {
  std::string path;
  std::vector<std::string> sets;
  std::optional<int> bits, chunk_bits, groups, buffer_size, freeze_epoch, epochs, embed_epochs, samples;
  std::optional<double> hard_sigma, tau0, alpha;
  std::optional<std::uint64_t> seed_codec, seed_encoder, seed_training;
  std::optional<std::string> protocol;
  bool no_hms = false;

  void attach(CLI::App& app) {
    app.add_option("--config", path, "Run config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--set", sets, "Override a config key, section.key=value")->take_all();
    app.add_option("--bits", bits, "Message length L");
    app.add_option("--chunk-bits", chunk_bits, "Bits per token n");
    app.add_option("--groups", groups, "Bit-branch groups G");
    app.add_option("--buffer-size", buffer_size, "Training buffer size K");
    app.add_option("--freeze-epoch", freeze_epoch, "Epoch at which the buffer freezes");
    app.add_option("--epochs", epochs, "Stage I epochs");
    app.add_option("--embed-epochs", embed_epochs, "Stage II epochs");
    app.add_option("--hard-sigma", hard_sigma, "Accuracy threshold for hard messages");
    app.add_option("--tau0", tau0, "Initial hard ratio");
    app.add_option("--alpha", alpha, "Hard ratio growth per epoch");
    app.add_option("--seed-codec", seed_codec, "Lookup table seed");
    app.add_option("--seed-encoder", seed_encoder, "Frozen encoder seed");
    app.add_option("--seed-training", seed_training, "Training and evaluation seed");
    app.add_option("--protocol", protocol, "Evaluation protocol: in, out or random");
    app.add_option("--samples", samples, "Messages per evaluation");
    app.add_flag("--no-hms", no_hms, "Train on one fixed random buffer");
  }

  bool given() const {
    return !path.empty() || !sets.empty() || bits || chunk_bits || groups || buffer_size || freeze_epoch || epochs ||
           embed_epochs || samples || hard_sigma || tau0 || alpha || seed_codec || seed_encoder || seed_training ||
           protocol || no_hms;
  }

  std::vector<std::pair<std::string, std::string>> overrides() const {
    std::vector<std::pair<std::string, std::string>> o;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
      o.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    auto put = [&](const char* key, const auto& v) {
      if (v) o.emplace_back(key, nlohmann::json(*v).dump());
    };
    put("codec.message_bits", bits);
    put("codec.chunk_bits", chunk_bits);
    put("decoder.groups", groups);
    put("sampler.buffer_size", buffer_size);
    put("sampler.freeze_epoch", freeze_epoch);
    put("sampler.epochs", epochs);
    put("embed.epochs", embed_epochs);
    put("eval.sample_count", samples);
    put("sampler.hard_sigma", hard_sigma);
    put("sampler.tau0", tau0);
    put("sampler.alpha", alpha);
    put("seeds.codec", seed_codec);
    put("seeds.encoder", seed_encoder);
    put("seeds.training", seed_training);
    put("eval.protocol", protocol);
    if (no_hms) o.emplace_back("pretrain.hard_sampling", "false");
    return o;
  }

  /// --config, else `base`, with the flag overrides on top.
  RunConfig load(const std::string& base = {}) const {
    std::string text = base;
    if (!path.empty()) {
      std::ifstream f(path);
      if (!f) throw IoError("cannot read " + path);
      text.assign(std::istreambuf_iterator<char>(f), {});
    }
    return RunConfig::from_json(text, overrides());
  }

  /// Flags layered over the checkpoint's config, or that config unchanged.
  RunConfig load_or(const RunConfig& fallback) const { return given() ? load(fallback.to_json()) : fallback; }
};

std::string out_path(const std::string& path) {
  fs::path p(path);
  if (const char* dir = std::getenv("SPLATMARK_OUT_DIR"); dir != nullptr && *dir != '\0' && p.is_relative()) {
    p = fs::path(dir) / p;
  }
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  return p.string();
}

std::map<std::string, std::string> echo(const RunConfig& cfg) {
  return {{"config", cfg.to_json()},
          {"seed.codec", std::to_string(cfg.seeds.codec)},
          {"seed.encoder", std::to_string(cfg.seeds.encoder)},
          {"seed.training", std::to_string(cfg.seeds.training)}};
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << text;
  if (!f) throw IoError("failed writing " + path);
}

// Raw image formats cannot hold metadata, so images get a JSON sidecar.
void write_image_with_manifest(const std::string& path, const Image& image,
                               const std::map<std::string, std::string>& manifest) {
  write_image(path, image);
  nlohmann::ordered_json j(manifest);
  write_text(path + ".json", j.dump(2) + "\n");
}

BitMessage parse_message(const std::string& text, bool hex, int bits) {
  if (hex) return BitMessage::from_hex(text, bits);
  auto m = BitMessage::from_string(text);
  if (m.size() != bits) {
    throw InputError("message has " + std::to_string(m.size()) + " bits, the config expects " + std::to_string(bits));
  }
  return m;
}

Checkpoint load_bound(const std::string& path, const ConfigFlags& flags, RunConfig& cfg, FrozenModels& frozen) {
  Checkpoint ckpt = load_checkpoint(path);
  cfg = flags.load_or(ckpt.config);
  frozen = build_frozen(cfg);
  verify_binding(ckpt, frozen);
  if (ckpt.config.codec.message_bits != cfg.codec.message_bits) {
    throw CorruptionError("checkpoint decodes " + std::to_string(ckpt.config.codec.message_bits) +
                          " bits, the config asks for " + std::to_string(cfg.codec.message_bits));
  }
  return ckpt;
}

int cmd_gen_scene(const ConfigFlags& flags, const std::string& out) {
  const RunConfig cfg = flags.load();
  const SplatScene scene = generate_scene(cfg.scene);
  const std::string path = out_path(out);
  save_scene(path, scene, echo(cfg));
  std::cout << path << '\n';
  return 0;
}

int cmd_pretrain(const ConfigFlags& flags, const std::string& out, const std::string& resume,
                 const std::string& embeddings_path, const std::string& log_path, bool quiet) {
  RunConfig cfg = flags.load();
  const FrozenModels frozen = build_frozen(cfg);
  std::unique_ptr<EmbeddingProvider> provider;
  if (embeddings_path.empty()) {
    provider = std::make_unique<LiveTextEmbeddings>(cfg.codec, frozen.table, frozen.text);
  } else {
    provider = std::make_unique<ImportedEmbeddings>(import_embeddings(embeddings_path));
  }
  const Pretrainer trainer(cfg.pretrain, *provider);
  std::optional<PretrainState> state;
  if (resume.empty()) {
    state.emplace(trainer.initial_state());
  } else {
    Checkpoint ckpt = load_checkpoint(resume);
    verify_binding(ckpt, frozen);
    if (ckpt.config.to_json() != cfg.to_json()) throw ConfigError("resume: config differs from the checkpoint's");
    state.emplace(std::move(ckpt.state));
  }
  const int total = cfg.pretrain.sampler.epochs;
  trainer.run(*state, [&](const EpochRecord& r) {
    if (quiet) return;
    std::fprintf(stderr, "epoch %d/%d  loss %.4f  acc %.4f  hard %.3f  memory %zu%s\n", r.epoch, total, r.loss,
                 r.in_accuracy, r.hard_fraction, r.memory, r.frozen ? "  frozen" : "");
  });
  const std::string path = out_path(out);
  save_checkpoint(path, cfg, *state, frozen);
  if (!log_path.empty()) write_training_log(out_path(log_path), state->log);

  const TextReport t = evaluate_text(state->decoder, *provider, state->buffer, cfg.eval);
  std::printf("checkpoint %s\n", path.c_str());
  std::printf("text accuracy (%zu per side)  in %.4f  out %.4f  random %.4f\n", t.samples, t.in_bit, t.out_bit,
              t.random_bit);
  return 0;
}

int cmd_embed(const ConfigFlags& flags, const std::string& ckpt_path, const std::string& scene_path,
              const std::string& message_text, bool hex, const std::string& out, const std::string& render_path,
              bool quiet) {
  RunConfig cfg;
  FrozenModels frozen;
  const Checkpoint ckpt = load_bound(ckpt_path, flags, cfg, frozen);
  const SplatScene scene = load_scene(scene_path);
  const BitMessage message = parse_message(message_text, hex, cfg.codec.message_bits);

  const Embedder embedder(ckpt.state.decoder, *frozen.image, cfg.embed);
  const EmbedResult result = embedder.embed(scene, message, [&](const EmbedEpoch& e) {
    if (quiet) return;
    std::fprintf(stderr, "epoch %d/%d  loss %.5f  acc %.4f  psnr %.2f\n", e.epoch, cfg.embed.epochs, e.loss,
                 e.accuracy, e.psnr);
  });

  auto manifest = echo(cfg);
  manifest["message_digest"] = message_digest(message);
  manifest["hash.decoder"] = ckpt.state.decoder.parameter_hash();
  manifest["hash.image_encoder"] = frozen.image->parameter_hash();
  const std::string path = out_path(out);
  save_embed_artifact(path, {result.offsets, manifest});

  const Image marked = render(scene, result.offsets);
  if (!render_path.empty()) write_image_with_manifest(out_path(render_path), marked, manifest);
  const double acc = bit_accuracy(extract(marked, ckpt.state.decoder, *frozen.image), message);
  std::printf("offsets %s\naccuracy %.4f  psnr %.3f  ssim %.5f\n", path.c_str(), acc,
              psnr(marked, render(scene)), ssim(marked, render(scene)));
  return 0;
}

int cmd_render(const ConfigFlags& flags, const std::string& scene_path, const std::string& offsets_path,
               const std::string& out) {
  const SplatScene scene = load_scene(scene_path);
  ad::Matrix offsets;
  std::map<std::string, std::string> manifest;
  if (!offsets_path.empty()) {
    auto a = load_embed_artifact(offsets_path);
    offsets = std::move(a.offsets);
    manifest = std::move(a.manifest);
  }
  if (flags.given()) manifest = echo(flags.load());
  write_image_with_manifest(out_path(out), render(scene, offsets), manifest);
  return 0;
}

int cmd_extract(const ConfigFlags& flags, const std::string& ckpt_path, const std::string& image_path, bool hex) {
  RunConfig cfg;
  FrozenModels frozen;
  const Checkpoint ckpt = load_bound(ckpt_path, flags, cfg, frozen);
  const Image image = read_image(image_path);
  const BitMessage m = extract(image, ckpt.state.decoder, *frozen.image);
  if (hex) {
    std::string h;
    const std::string bits = std::string((4 - m.size() % 4) % 4, '0') + m.to_string();
    for (std::size_t i = 0; i < bits.size(); i += 4) h += "0123456789abcdef"[std::stoi(bits.substr(i, 4), nullptr, 2)];
    std::cout << h << '\n';
  } else {
    std::cout << m.to_string() << '\n';
  }
  return 0;
}

int cmd_attack(const ConfigFlags& flags, const std::string& scene_path, const std::string& offsets_path,
               const std::string& image_path, const std::string& kind, const std::string& out) {
  const RunConfig cfg = flags.load();
  Rng rng(mix_seed(cfg.seeds.training, 8));
  auto manifest = echo(cfg);
  manifest["attack"] = kind;
  if (!image_path.empty()) {
    const Image image = read_image(image_path);
    const DistortionLayer layer(image.height, image.width, cfg.embed.distortion);
    write_image_with_manifest(out_path(out), layer.apply(image, parse_distortion(kind), rng), manifest);
    return 0;
  }
  if (scene_path.empty()) throw InputError("attack needs --scene or --image");
  Carrier carrier{load_scene(scene_path), {}};
  if (!offsets_path.empty()) {
    auto a = load_embed_artifact(offsets_path);
    carrier.offsets = std::move(a.offsets);
    for (const auto& [k, v] : a.manifest) {
      if (k.rfind("config", 0) != 0 && k.rfind("seed.", 0) != 0) manifest[k] = v;
    }
  } else {
    carrier.offsets = ad::Matrix::Zero(static_cast<ad::Index>(carrier.scene.size()), 3);
  }
  const Carrier attacked = apply_attack(carrier, parse_attack(kind), cfg.eval, rng);
  const std::string base = out_path(out);
  save_scene(base + ".scene.json", attacked.scene, manifest);
  save_embed_artifact(base + ".offsets", {attacked.offsets, manifest});
  std::cout << base << ".scene.json\n" << base << ".offsets\n";
  return 0;
}

int cmd_evaluate(const ConfigFlags& flags, const std::string& ckpt_path, const std::string& scene_path,
                 const std::string& out, const std::string& cache) {
  RunConfig cfg;
  FrozenModels frozen;
  const Checkpoint ckpt = load_bound(ckpt_path, flags, cfg, frozen);
  const SplatScene scene = load_scene(scene_path);
  EvalReport report =
      run_protocol(ckpt.state.decoder, *frozen.image, scene, ckpt.state.buffer, cfg.embed, cfg.eval, cache);
  for (const auto& [k, v] : echo(cfg)) report.echo[k] = v;
  std::cout << report.to_text();
  if (!out.empty()) write_text(out_path(out), report.to_json());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bit-compressed semantic watermarking for splat scenes"};
  app.require_subcommand(1);
  ConfigFlags flags;
  std::string out, ckpt, scene, offsets, image, message, resume, embeddings, log_path, kind, cache, render_path;
  bool hex = false, quiet = false;

  auto* gen = app.add_subcommand("gen-scene", "Generate a procedural scene");
  flags.attach(*gen);
  gen->add_option("-o,--out", out, "Scene file")->required();

  auto* pre = app.add_subcommand("pretrain", "Stage I: train the decoder");
  flags.attach(*pre);
  pre->add_option("-o,--out", out, "Checkpoint file")->required();
  pre->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  pre->add_option("--embeddings", embeddings, "Precomputed text embeddings")->check(CLI::ExistingFile);
  pre->add_option("--log", log_path, "Training log (JSON lines)");
  pre->add_flag("-q,--quiet", quiet);

  auto* emb = app.add_subcommand("embed", "Stage II: write a message into a scene");
  flags.attach(*emb);
  emb->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  emb->add_option("--scene", scene)->required()->check(CLI::ExistingFile);
  emb->add_option("-m,--message", message, "0/1 string, or hex with --hex")->required();
  emb->add_flag("--hex", hex);
  emb->add_option("-o,--out", out, "Offsets artifact")->required();
  emb->add_option("--render", render_path, "Also write the watermarked render");
  emb->add_flag("-q,--quiet", quiet);

  auto* ren = app.add_subcommand("render", "Render a scene with optional offsets");
  flags.attach(*ren);
  ren->add_option("--scene", scene)->required()->check(CLI::ExistingFile);
  ren->add_option("--offsets", offsets)->check(CLI::ExistingFile);
  ren->add_option("-o,--out", out, "Image (.ppm or .pfm)")->required();

  auto* ext = app.add_subcommand("extract", "Read the message from an image");
  flags.attach(*ext);
  ext->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  ext->add_option("--image", image)->required()->check(CLI::ExistingFile);
  ext->add_flag("--hex", hex);

  auto* att = app.add_subcommand("attack", "Apply a 3D attack to a scene or a 2D distortion to an image");
  flags.attach(*att);
  att->add_option("--scene", scene)->check(CLI::ExistingFile);
  att->add_option("--offsets", offsets)->check(CLI::ExistingFile);
  att->add_option("--image", image)->check(CLI::ExistingFile)->excludes("--scene");
  att->add_option("--attack", kind, "prune, clone, noise; for images a distortion name")->required();
  att->add_option("-o,--out", out, "Output image, or output prefix for scenes")->required();

  auto* ev = app.add_subcommand("evaluate", "Run a measurement protocol");
  flags.attach(*ev);
  ev->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--scene", scene)->required()->check(CLI::ExistingFile);
  ev->add_option("-o,--out", out, "JSON report");
  ev->add_option("--cache", cache, "Directory for cached embeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_gen_scene(flags, out);
    if (*pre) return cmd_pretrain(flags, out, resume, embeddings, log_path, quiet);
    if (*emb) return cmd_embed(flags, ckpt, scene, message, hex, out, render_path, quiet);
    if (*ren) return cmd_render(flags, scene, offsets, out);
    if (*ext) return cmd_extract(flags, ckpt, image, hex);
    if (*att) return cmd_attack(flags, scene, offsets, image, kind, out);
    if (*ev) return cmd_evaluate(flags, ckpt, scene, out, cache);
  } catch (const Error& e) {
    std::cerr << "error (" << error_kind_name(e.kind()) << "): " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
