#include "splatmark/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "splatmark/error.hpp"
#include "splatmark/rng.hpp"

namespace splatmark {

using Json = nlohmann::ordered_json;

namespace {

class Section {
 public:
  Section(const Json& root, const std::string& name) : name_(name) {
    auto it = root.find(name);
    if (it != root.end()) {
      if (!it->is_object()) throw ConfigError("config section '" + name + "' must be an object");
      node_ = &*it;
    }
  }

  template <class T>
  void get(const char* key, T& out) {
    if (node_ == nullptr) return;
    auto it = node_->find(key);
    if (it == node_->end()) return;
    used_.insert(key);
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_unsigned()) throw ConfigError(where(key) + " must be a nonnegative integer");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_integer()) throw ConfigError(where(key) + " must be an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(where(key) + " must be a number");
      }
      out = it->get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  template <class T, class Parse>
  void get_list(const char* key, std::vector<T>& out, Parse parse) {
    std::vector<std::string> names;
    get(key, names);
    if (node_ == nullptr || node_->find(key) == node_->end()) return;
    out.clear();
    for (const auto& n : names) out.push_back(parse(n));
  }

  void finish() const {
    if (node_ == nullptr) return;
    for (const auto& [k, v] : node_->items()) {
      if (!used_.count(k)) throw ConfigError("unknown config key '" + where(k.c_str()) + "'");
    }
  }

 private:
  std::string where(const char* key) const { return name_ + "." + key; }

  std::string name_;
  const Json* node_ = nullptr;
  std::set<std::string> used_;
};

template <class T, class Name>
Json names(const std::vector<T>& items, Name name) {
  Json out = Json::array();
  for (const auto& i : items) out.push_back(name(i));
  return out;
}

void set_dotted(Json& root, const std::string& dotted, const std::string& value_text) {
  const auto dot = dotted.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == dotted.size()) {
    throw ConfigError("override key '" + dotted + "' must look like section.key");
  }
  Json value;
  try {
    value = Json::parse(value_text);
  } catch (const nlohmann::json::exception&) {
    value = value_text;  // bare strings, e.g. protocol names
  }
  Json& section = root[dotted.substr(0, dot)];
  if (!section.is_object()) section = Json::object();
  section[dotted.substr(dot + 1)] = std::move(value);
}

}  // namespace

std::pair<int, int> default_chunking(int message_bits) {
  const int L = message_bits;
  const int g = L % 4 == 0 ? 4 : 1;
  if (L <= 16) return {1, 1};
  if (L <= 96) return {2, g};
  if (L <= 300) return {4, g};
  return {8, g};
}

RunConfig RunConfig::for_bits(int message_bits) {
  if (message_bits <= 0) throw ConfigError("codec: message_bits must be positive");
  RunConfig c;
  c.codec.message_bits = message_bits;
  const auto [n, g] = default_chunking(message_bits);
  c.codec.chunk_bits = n;
  c.pretrain.decoder.groups = g;
  auto& s = c.pretrain.sampler;
  if (message_bits <= 48) {
    s.epochs = 150;
    s.freeze_epoch = 100;
    s.tau0 = 0.30;
    s.alpha = 0.0045;
  } else {
    s.epochs = 300;
    s.freeze_epoch = 200;
    s.tau0 = 0.25;
    s.alpha = 0.0025;
  }
  c.embed.epochs = message_bits <= 32 ? 150 : (message_bits <= 64 ? 200 : 300);
  if (message_bits < 6) c.pretrain.batch_size = 1 << message_bits;
  c.resolve();
  return c;
}

void RunConfig::resolve() {
  const int L = codec.message_bits;
  codec.seed = seeds.codec;

  text_encoder.vocab_size = codec.vocab_size;
  text_encoder.end_id = codec.end_id;
  text_encoder.seed = mix_seed(seeds.encoder, 1);
  image_encoder.height = scene.height;
  image_encoder.width = scene.width;
  image_encoder.seed = mix_seed(seeds.encoder, 2);

  pretrain.decoder.message_bits = L;
  pretrain.decoder.chunk_bits = codec.chunk_bits;
  pretrain.decoder.seed = mix_seed(seeds.training, 3);
  pretrain.sampler.message_bits = L;
  pretrain.seed = mix_seed(seeds.training, 4);
  embed.seed = mix_seed(seeds.training, 5);
  eval.seed = mix_seed(seeds.training, 6);
  scene.seed = mix_seed(seeds.training, 7);
}

void RunConfig::validate() const {
  codec.validate();
  pretrain.validate();
  embed.validate();
  eval.validate();
  if (pretrain.decoder.message_bits != codec.message_bits || pretrain.decoder.chunk_bits != codec.chunk_bits) {
    throw ConfigError("config: decoder and codec disagree; call resolve()");
  }
  if (text_encoder.width <= 0 || text_encoder.layers < 0 || text_encoder.heads <= 0 ||
      text_encoder.width % text_encoder.heads != 0 || text_encoder.ffn_width <= 0) {
    throw ConfigError("text_encoder: heads must divide width and sizes must be positive");
  }
  if (image_encoder.patch <= 0 || image_encoder.hidden <= 0 || !(image_encoder.frequency > 0.0)) {
    throw ConfigError("image_encoder: patch, hidden and frequency must be positive");
  }
  if (scene.count < 1) throw ConfigError("scene: count must be at least 1");
  if (scene.height % 8 != 0 || scene.width % 8 != 0 || scene.height % image_encoder.patch != 0 ||
      scene.width % image_encoder.patch != 0) {
    throw ConfigError("scene: canvas must be a multiple of 8 and of the patch size");
  }
  if (!(scene.min_scale > 0.0 && scene.max_scale >= scene.min_scale)) throw ConfigError("scene: bad scale range");
  if (!(scene.background >= 0.0 && scene.background <= 1.0)) throw ConfigError("scene: background must lie in [0, 1]");
}

std::string RunConfig::to_json() const {
  Json j;
  j["seeds"] = {{"codec", seeds.codec}, {"encoder", seeds.encoder}, {"training", seeds.training}};
  j["codec"] = {{"message_bits", codec.message_bits}, {"chunk_bits", codec.chunk_bits}, {"vocab_size", codec.vocab_size}};
  j["text_encoder"] = {{"width", text_encoder.width},
                       {"layers", text_encoder.layers},
                       {"heads", text_encoder.heads},
                       {"ffn_width", text_encoder.ffn_width}};
  j["image_encoder"] = {{"patch", image_encoder.patch}, {"hidden", image_encoder.hidden},
                        {"frequency", image_encoder.frequency}};
  const auto& d = pretrain.decoder;
  j["decoder"] = {{"groups", d.groups},         {"width", d.width},           {"heads", d.heads},
                  {"layers", d.layers},         {"ffn_mult", d.ffn_mult},     {"phi_hidden", d.phi_hidden},
                  {"bit_hidden", d.bit_hidden}, {"clamp_eps", d.clamp_eps}};
  const auto& s = pretrain.sampler;
  j["sampler"] = {{"buffer_size", s.buffer_size}, {"hard_sigma", s.hard_sigma},
                  {"tau0", s.tau0},               {"alpha", s.alpha},
                  {"freeze_epoch", s.freeze_epoch}, {"epochs", s.epochs},
                  {"smoothing", s.smoothing},     {"update_all_recorded", s.update_all_recorded}};
  j["pretrain"] = {{"batch_size", pretrain.batch_size},
                   {"hard_sampling", pretrain.hard_sampling},
                   {"lr", pretrain.adam.lr},
                   {"weight_decay", pretrain.adam.weight_decay},
                   {"beta1", pretrain.adam.beta1},
                   {"beta2", pretrain.adam.beta2},
                   {"eps", pretrain.adam.eps},
                   {"lambda_chunk", pretrain.weights.chunk},
                   {"lambda_projected", pretrain.weights.projected},
                   {"lambda_bit", pretrain.weights.bit}};
  j["embed"] = {{"lambda_bit", embed.lambda_bit},
                {"lambda_image", embed.lambda_image},
                {"lambda_ssim", embed.lambda_ssim},
                {"lambda_off", embed.lambda_off},
                {"lr", embed.adam.lr},
                {"lr_floor", embed.lr_floor},
                {"weight_decay", embed.adam.weight_decay},
                {"beta1", embed.adam.beta1},
                {"beta2", embed.adam.beta2},
                {"eps", embed.adam.eps},
                {"batch_size", embed.batch_size},
                {"epochs", embed.epochs},
                {"steps_per_epoch", embed.steps_per_epoch}};
  const auto& x = embed.distortion;
  j["distortion"] = {{"enabled", names(x.enabled, distortion_name)},
                     {"noise_sigma", x.noise_sigma},
                     {"rotation_max", x.rotation_max},
                     {"scale_max", x.scale_max},
                     {"blur_sigma", x.blur_sigma},
                     {"blur_kernel", x.blur_kernel},
                     {"crop_area", x.crop_area},
                     {"brightness_min", x.brightness_min},
                     {"brightness_max", x.brightness_max},
                     {"jpeg_quality", x.jpeg_quality}};
  j["scene"] = {{"count", scene.count},         {"height", scene.height},
                {"width", scene.width},         {"min_scale", scene.min_scale},
                {"max_scale", scene.max_scale}, {"background", scene.background}};
  j["eval"] = {{"protocol", protocol_name(eval.mode)},
               {"sample_count", eval.sample_count},
               {"attacks", names(eval.attacks, attack_name)},
               {"distortions", names(eval.distortions, distortion_name)},
               {"prune_ratio", eval.prune_ratio},
               {"clone_ratio", eval.clone_ratio},
               {"noise_sigma", eval.noise_sigma},
               {"text_samples", eval.text_samples}};
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& json_text,
                               const std::vector<std::pair<std::string, std::string>>& overrides) {
  Json user;
  try {
    user = json_text.empty() ? Json::object() : Json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!user.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : overrides) set_dotted(user, key, value);

  int L = 16;
  {
    Json probe = user.contains("codec") ? user["codec"] : Json::object();
    if (probe.contains("message_bits")) {
      if (!probe["message_bits"].is_number_integer()) throw ConfigError("codec.message_bits must be an integer");
      L = probe["message_bits"].get<int>();
    }
  }
  Json tree = Json::parse(for_bits(L).to_json());
  tree.merge_patch(user);

  static const std::set<std::string> kSections = {"seeds",    "codec",   "text_encoder", "image_encoder",
                                                  "decoder",  "sampler", "pretrain",     "embed",
                                                  "distortion", "scene", "eval"};
  for (const auto& [k, v] : tree.items()) {
    if (!kSections.count(k)) throw ConfigError("unknown config section '" + k + "'");
  }

  RunConfig c;
  {
    Section s(tree, "seeds");
    s.get("codec", c.seeds.codec);
    s.get("encoder", c.seeds.encoder);
    s.get("training", c.seeds.training);
    s.finish();
  }
  {
    Section s(tree, "codec");
    s.get("message_bits", c.codec.message_bits);
    s.get("chunk_bits", c.codec.chunk_bits);
    s.get("vocab_size", c.codec.vocab_size);
    s.finish();
  }
  {
    Section s(tree, "text_encoder");
    s.get("width", c.text_encoder.width);
    s.get("layers", c.text_encoder.layers);
    s.get("heads", c.text_encoder.heads);
    s.get("ffn_width", c.text_encoder.ffn_width);
    s.finish();
  }
  {
    Section s(tree, "image_encoder");
    s.get("patch", c.image_encoder.patch);
    s.get("hidden", c.image_encoder.hidden);
    s.get("frequency", c.image_encoder.frequency);
    s.finish();
  }
  {
    auto& d = c.pretrain.decoder;
    Section s(tree, "decoder");
    s.get("groups", d.groups);
    s.get("width", d.width);
    s.get("heads", d.heads);
    s.get("layers", d.layers);
    s.get("ffn_mult", d.ffn_mult);
    s.get("phi_hidden", d.phi_hidden);
    s.get("bit_hidden", d.bit_hidden);
    s.get("clamp_eps", d.clamp_eps);
    s.finish();
  }
  {
    auto& m = c.pretrain.sampler;
    Section s(tree, "sampler");
    s.get("buffer_size", m.buffer_size);
    s.get("hard_sigma", m.hard_sigma);
    s.get("tau0", m.tau0);
    s.get("alpha", m.alpha);
    s.get("freeze_epoch", m.freeze_epoch);
    s.get("epochs", m.epochs);
    s.get("smoothing", m.smoothing);
    s.get("update_all_recorded", m.update_all_recorded);
    s.finish();
  }
  {
    auto& p = c.pretrain;
    Section s(tree, "pretrain");
    s.get("batch_size", p.batch_size);
    s.get("hard_sampling", p.hard_sampling);
    s.get("lr", p.adam.lr);
    s.get("weight_decay", p.adam.weight_decay);
    s.get("beta1", p.adam.beta1);
    s.get("beta2", p.adam.beta2);
    s.get("eps", p.adam.eps);
    s.get("lambda_chunk", p.weights.chunk);
    s.get("lambda_projected", p.weights.projected);
    s.get("lambda_bit", p.weights.bit);
    s.finish();
  }
  {
    auto& e = c.embed;
    Section s(tree, "embed");
    s.get("lambda_bit", e.lambda_bit);
    s.get("lambda_image", e.lambda_image);
    s.get("lambda_ssim", e.lambda_ssim);
    s.get("lambda_off", e.lambda_off);
    s.get("lr", e.adam.lr);
    s.get("lr_floor", e.lr_floor);
    s.get("weight_decay", e.adam.weight_decay);
    s.get("beta1", e.adam.beta1);
    s.get("beta2", e.adam.beta2);
    s.get("eps", e.adam.eps);
    s.get("batch_size", e.batch_size);
    s.get("epochs", e.epochs);
    s.get("steps_per_epoch", e.steps_per_epoch);
    s.finish();
  }
  {
    auto& x = c.embed.distortion;
    Section s(tree, "distortion");
    s.get_list("enabled", x.enabled, parse_distortion);
    s.get("noise_sigma", x.noise_sigma);
    s.get("rotation_max", x.rotation_max);
    s.get("scale_max", x.scale_max);
    s.get("blur_sigma", x.blur_sigma);
    s.get("blur_kernel", x.blur_kernel);
    s.get("crop_area", x.crop_area);
    s.get("brightness_min", x.brightness_min);
    s.get("brightness_max", x.brightness_max);
    s.get("jpeg_quality", x.jpeg_quality);
    s.finish();
  }
  {
    Section s(tree, "scene");
    s.get("count", c.scene.count);
    s.get("height", c.scene.height);
    s.get("width", c.scene.width);
    s.get("min_scale", c.scene.min_scale);
    s.get("max_scale", c.scene.max_scale);
    s.get("background", c.scene.background);
    s.finish();
  }
  {
    auto& v = c.eval;
    Section s(tree, "eval");
    std::string mode = protocol_name(v.mode);
    s.get("protocol", mode);
    v.mode = parse_protocol(mode);
    s.get("sample_count", v.sample_count);
    s.get_list("attacks", v.attacks, parse_attack);
    s.get_list("distortions", v.distortions, parse_distortion);
    s.get("prune_ratio", v.prune_ratio);
    s.get("clone_ratio", v.clone_ratio);
    s.get("noise_sigma", v.noise_sigma);
    s.get("text_samples", v.text_samples);
    s.finish();
  }
  c.resolve();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read config " + path);
  std::ostringstream text;
  text << f.rdbuf();
  return RunConfig::from_json(text.str(), overrides);
}

}  // namespace splatmark
