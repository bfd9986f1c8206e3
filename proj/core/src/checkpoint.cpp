#include "splatmark/checkpoint.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

#include "splatmark/error.hpp"
#include "splatmark/tensor_file.hpp"

namespace splatmark {

namespace {

constexpr const char* kFormat = "splatmark.checkpoint";
constexpr int kVersion = 1;

void put_messages(TensorFile& f, const std::string& name, const std::vector<BitMessage>& messages, int bits) {
  std::vector<std::uint8_t> flat;
  flat.reserve(messages.size() * static_cast<std::size_t>(bits));
  for (const auto& m : messages) flat.insert(flat.end(), m.bits().begin(), m.bits().end());
  f.put_u8(name, flat, {static_cast<std::int64_t>(messages.size()), bits});
}

std::vector<BitMessage> get_messages(const TensorFile& f, const std::string& name, int bits) {
  const auto& e = f.entry(name);
  if (e.shape.size() != 2 || e.shape[1] != bits) throw FormatError("checkpoint: '" + name + "' has the wrong width");
  const auto flat = f.u8(name);
  std::vector<BitMessage> out;
  out.reserve(static_cast<std::size_t>(e.shape[0]));
  for (std::int64_t r = 0; r < e.shape[0]; ++r) {
    auto first = flat.begin() + r * bits;
    std::vector<std::uint8_t> row(first, first + bits);
    for (auto b : row) {
      if (b > 1) throw FormatError("checkpoint: '" + name + "' holds a non-bit value");
    }
    out.emplace_back(std::move(row));
  }
  return out;
}

std::vector<EpochRecord> parse_log(const std::string& text) {
  std::vector<EpochRecord> log;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    EpochRecord r;
    r.epoch = j.at("epoch");
    r.steps = j.at("steps");
    r.loss = j.at("loss");
    r.chunk = j.at("chunk");
    r.projected = j.at("projected");
    r.bit = j.at("bit");
    r.in_accuracy = j.at("in_accuracy");
    r.hard_fraction = j.at("hard_fraction");
    r.memory = j.at("memory");
    r.seen = j.at("seen");
    r.frozen = j.at("frozen");
    log.push_back(r);
  }
  return log;
}

std::int64_t to_int(const std::string& s, const char* what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(std::string("checkpoint: bad ") + what);
  }
}

}  // namespace

std::map<std::string, std::string> FrozenModels::hashes() const {
  return {{"table", table.content_hash()},
          {"text_encoder", text->parameter_hash()},
          {"image_encoder", image->parameter_hash()}};
}

FrozenModels build_frozen(const RunConfig& cfg) {
  FrozenModels m{build_lookup_table(cfg.codec), std::make_shared<const TextEncoder>(cfg.text_encoder),
                 std::make_shared<const ImageEncoder>(cfg.image_encoder)};
  return m;
}

void save_checkpoint(const std::string& path, const RunConfig& cfg, const PretrainState& state,
                     const FrozenModels& frozen) {
  const int L = cfg.codec.message_bits;
  TensorFile f;
  f.set_metadata("format", kFormat);
  f.set_metadata("version", std::to_string(kVersion));
  f.set_metadata("config", cfg.to_json());
  for (const auto& [k, v] : frozen.hashes()) f.set_metadata("hash." + k, v);
  f.set_metadata("hash.decoder", state.decoder.parameter_hash());
  f.set_metadata("shuffle", Rng::kShuffleAlgorithm);
  f.set_metadata("rng", state.rng.serialize());
  f.set_metadata("epochs_done", std::to_string(state.epochs_done));
  f.set_metadata("hard_count", std::to_string(state.hard_count));
  f.set_metadata("frozen", state.frozen ? "1" : "0");
  f.set_metadata("adam.steps", std::to_string(state.adam.steps()));
  f.set_metadata("log", training_log_jsonl(state.log));

  for (const auto& p : state.decoder.parameters()) f.put("param/" + p.name, p.value);
  const auto& m = state.adam.first_moments();
  const auto& v = state.adam.second_moments();
  for (std::size_t i = 0; i < m.size(); ++i) {
    f.put("adam/m/" + std::to_string(i), m[i]);
    f.put("adam/v/" + std::to_string(i), v[i]);
  }

  put_messages(f, "buffer", state.buffer, L);
  std::vector<BitMessage> seen;
  seen.reserve(state.seen.size());
  for (const auto& k : state.seen) seen.push_back(message_of(k));
  std::sort(seen.begin(), seen.end());
  put_messages(f, "seen", seen, L);

  std::vector<BitMessage> keys;
  ad::Matrix acc(1, static_cast<ad::Index>(state.memory.size()));
  ad::Index i = 0;
  for (const auto& [k, a] : state.memory.records()) {
    keys.push_back(message_of(k));
    acc(0, i++) = a;
  }
  put_messages(f, "memory/keys", keys, L);
  f.put("memory/accuracy", acc);
  f.save(path);
}

Checkpoint load_checkpoint(const std::string& path) {
  const TensorFile f = TensorFile::load(path);
  f.expect_format(kFormat, kVersion);
  RunConfig cfg;
  try {
    cfg = RunConfig::from_json(f.metadata("config"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: stored config is invalid: ") + e.what());
  }
  const int L = cfg.codec.message_bits;

  Checkpoint c(cfg);
  auto& s = c.state;
  for (const char* k : {"table", "text_encoder", "image_encoder", "decoder"}) {
    c.hashes[k] = f.metadata(std::string("hash.") + k);
  }
  if (f.metadata("shuffle") != Rng::kShuffleAlgorithm) {
    throw FormatError("checkpoint: written with shuffle algorithm " + f.metadata("shuffle"));
  }

  for (auto& p : s.decoder.parameters()) {
    const std::string name = "param/" + p.name;
    if (!f.has(name)) throw FormatError("checkpoint: missing " + name);
    ad::Matrix value = f.matrix(name);
    if (value.rows() != p.value.rows() || value.cols() != p.value.cols()) {
      throw FormatError("checkpoint: " + name + " has the wrong shape");
    }
    p.value = std::move(value);
    p.zero_grad();
  }
  if (s.decoder.parameter_hash() != c.hashes["decoder"]) {
    throw CorruptionError("checkpoint: decoder weights do not match their recorded hash");
  }

  std::vector<ad::Matrix> m, v;
  for (std::size_t i = 0; f.has("adam/m/" + std::to_string(i)); ++i) {
    m.push_back(f.matrix("adam/m/" + std::to_string(i)));
    v.push_back(f.matrix("adam/v/" + std::to_string(i)));
  }
  s.adam.restore(to_int(f.metadata("adam.steps"), "adam.steps"), std::move(m), std::move(v));

  s.buffer = get_messages(f, "buffer", L);
  for (const auto& msg : get_messages(f, "seen", L)) s.seen.insert(key_of(msg));
  const auto keys = get_messages(f, "memory/keys", L);
  const ad::Matrix acc = f.matrix("memory/accuracy");
  if (static_cast<std::size_t>(acc.size()) != keys.size()) throw FormatError("checkpoint: memory size mismatch");
  for (std::size_t i = 0; i < keys.size(); ++i) s.memory.set(key_of(keys[i]), acc(0, static_cast<ad::Index>(i)));

  s.rng.deserialize(f.metadata("rng"));
  s.epochs_done = static_cast<int>(to_int(f.metadata("epochs_done"), "epochs_done"));
  s.hard_count = static_cast<std::size_t>(to_int(f.metadata("hard_count"), "hard_count"));
  s.frozen = f.metadata("frozen") == "1";
  try {
    s.log = parse_log(f.metadata("log"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad training log: ") + e.what());
  }
  return c;
}

void verify_binding(const Checkpoint& ckpt, const FrozenModels& frozen) {
  for (const auto& [k, v] : frozen.hashes()) {
    const auto it = ckpt.hashes.find(k);
    if (it == ckpt.hashes.end() || it->second != v) {
      throw CorruptionError("checkpoint: " + k + " hash mismatch (checkpoint was trained against a different " + k +
                            ")");
    }
  }
}

}  // namespace splatmark
