#include "splatmark/pretrain.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "splatmark/error.hpp"

namespace splatmark {

void PretrainConfig::validate() const {
  decoder.validate();
  sampler.validate();
  if (decoder.message_bits != sampler.message_bits) throw ConfigError("pretrain: decoder and sampler disagree on L");
  if (weights.chunk < 0.0 || weights.projected < 0.0 || weights.bit < 0.0) {
    throw ConfigError("pretrain: loss weights must be nonnegative");
  }
  if (batch_size < 1) throw ConfigError("pretrain: batch_size must be positive");
  if (batch_size > sampler.capacity()) throw ConfigError("pretrain: batch_size exceeds the buffer capacity");
  if (!(adam.lr > 0.0) || adam.weight_decay < 0.0) throw ConfigError("pretrain: bad optimizer settings");
}

PretrainState::PretrainState(const PretrainConfig& cfg) : decoder(cfg.decoder), adam(cfg.adam), rng(cfg.seed) {}

Pretrainer::Pretrainer(PretrainConfig cfg, EmbeddingProvider& embeddings) : cfg_(cfg), embeddings_(&embeddings) {
  cfg_.validate();
}

PretrainState Pretrainer::initial_state() const {
  PretrainState s(cfg_);
  BufferBuild b = initial_buffer(s.seen, cfg_.sampler, s.rng);
  s.buffer = std::move(b.messages);
  check_buffer(s.buffer, cfg_.sampler);
  return s;
}

const EpochRecord& Pretrainer::run_epoch(PretrainState& s) const {
  if (finished(s)) throw InputError("pretrain: every epoch has already run");
  const int epoch = s.epochs_done + 1;
  const ad::Matrix features = embeddings_->embed(s.buffer);
  const auto n = static_cast<ad::Index>(s.buffer.size());

  EpochRecord rec;
  rec.epoch = epoch;
  rec.hard_fraction = static_cast<double>(s.hard_count) / static_cast<double>(s.buffer.size());
  rec.frozen = s.frozen;
  double weighted_acc = 0.0;
  int batches = 0;
  for (ad::Index begin = 0; begin < n; begin += cfg_.batch_size) {
    const ad::Index count = std::min<ad::Index>(cfg_.batch_size, n - begin);
    std::span<const BitMessage> batch(s.buffer.data() + begin, static_cast<std::size_t>(count));

    ad::Tape tape;
    DecoderOutputs out = s.decoder.forward(tape.constant(features.middleRows(begin, count)), true);
    DecoderLoss loss = decoder_loss_terms(out, batch, cfg_.decoder, cfg_.weights);
    if (!std::isfinite(loss.total.scalar())) {
      throw DivergenceError("pretrain: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(s.adam.steps() + 1));
    }
    s.decoder.zero_grad();
    tape.backward(loss.total);
    s.adam.step(s.decoder.parameters());

    const ad::Matrix& logits = out.bit_logits.value();
    update_stats(s.memory, batch, logits, cfg_.sampler);
    weighted_acc += bit_accuracy(predict_bits_rows(logits), batch) * static_cast<double>(count);
    rec.loss += loss.total.scalar();
    rec.chunk += loss.chunk.scalar();
    rec.projected += loss.projected.scalar();
    rec.bit += loss.bit.scalar();
    ++batches;
  }
  rec.loss /= batches;
  rec.chunk /= batches;
  rec.projected /= batches;
  rec.bit /= batches;
  rec.in_accuracy = weighted_acc / static_cast<double>(n);
  rec.steps = s.adam.steps();

  if (epoch < cfg_.sampler.epochs) {
    if (cfg_.hard_sampling) {
      KeySet allowed;
      if (epoch >= cfg_.sampler.freeze_epoch) {
        for (const auto& [key, acc] : s.memory.records()) allowed.insert(key);
        for (const auto& m : s.buffer) allowed.insert(key_of(m));
      }
      BufferBuild b = rebuild_buffer(epoch, s.memory, s.seen, s.buffer, cfg_.sampler, s.rng);
      check_buffer(b.messages, cfg_.sampler);
      if (b.frozen) {
        for (const auto& m : b.messages) {
          if (!allowed.count(key_of(m))) throw InputError("pretrain: frozen buffer admitted " + m.to_string());
        }
      }
      s.buffer = std::move(b.messages);
      s.hard_count = b.hard_count;
      s.frozen = b.frozen;
    } else {
      s.rng.shuffle(s.buffer);
    }
  }
  rec.memory = s.memory.size();
  rec.seen = s.seen.size();
  s.epochs_done = epoch;
  s.log.push_back(rec);
  return s.log.back();
}

void Pretrainer::run(PretrainState& s, const std::function<void(const EpochRecord&)>& on_epoch) const {
  while (!finished(s)) {
    const EpochRecord& rec = run_epoch(s);
    if (on_epoch) on_epoch(rec);
  }
}

PretrainState pretrain(const PretrainConfig& cfg, EmbeddingProvider& embeddings,
                       const std::function<void(const EpochRecord&)>& on_epoch) {
  Pretrainer trainer(cfg, embeddings);
  PretrainState s = trainer.initial_state();
  trainer.run(s, on_epoch);
  return s;
}

TextAccuracy text_accuracy(const Decoder& decoder, EmbeddingProvider& embeddings,
                           std::span<const BitMessage> messages, int batch_size) {
  TextAccuracy acc;
  if (messages.empty()) return acc;
  const ad::Matrix features = embeddings.embed(messages);
  const auto n = static_cast<ad::Index>(messages.size());
  for (ad::Index begin = 0; begin < n; begin += batch_size) {
    const ad::Index count = std::min<ad::Index>(batch_size, n - begin);
    std::span<const BitMessage> batch(messages.data() + begin, static_cast<std::size_t>(count));
    ad::Tape tape;
    DecoderOutputs out = decoder.forward(tape.constant(features.middleRows(begin, count)));
    acc.bit += bit_accuracy(predict_bits_rows(out.bit_logits.value()), batch) * static_cast<double>(count);
    acc.projected += bit_accuracy(predict_bits_rows(out.projected_logits.value()), batch) * static_cast<double>(count);
  }
  acc.bit /= static_cast<double>(n);
  acc.projected /= static_cast<double>(n);
  return acc;
}

std::string training_log_jsonl(std::span<const EpochRecord> log) {
  std::ostringstream out;
  for (const auto& r : log) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["steps"] = r.steps;
    j["loss"] = r.loss;
    j["chunk"] = r.chunk;
    j["projected"] = r.projected;
    j["bit"] = r.bit;
    j["in_accuracy"] = r.in_accuracy;
    j["hard_fraction"] = r.hard_fraction;
    j["memory"] = r.memory;
    j["seen"] = r.seen;
    j["frozen"] = r.frozen;
    out << j.dump() << '\n';
  }
  return out.str();
}

void write_training_log(const std::string& path, std::span<const EpochRecord> log) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << training_log_jsonl(log);
  if (!f) throw IoError("failed writing " + path);
}

}  // namespace splatmark
