#include <benchmark/benchmark.h>

#include "splatmark/codec.hpp"
#include "splatmark/decoder.hpp"
#include "splatmark/distortion.hpp"
#include "splatmark/embedder.hpp"
#include "splatmark/encoders.hpp"
#include "splatmark/metrics.hpp"
#include "splatmark/optim.hpp"
#include "splatmark/sampler.hpp"
#include "splatmark/splat.hpp"

using namespace splatmark;

namespace {

CodecConfig codec_for(int bits, int chunk) {
  CodecConfig c;
  c.message_bits = bits;
  c.chunk_bits = chunk;
  return c;
}

std::vector<BitMessage> messages(int count, int bits, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<BitMessage> out;
  for (int i = 0; i < count; ++i) out.push_back(random_message(bits, rng));
  return out;
}

}  // namespace

static void BM_TokenizeRoundTrip(benchmark::State& state) {
  const auto cfg = codec_for(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
  const auto table = build_lookup_table(cfg);
  const auto msgs = messages(256, cfg.message_bits, 1);
  for (auto _ : state) {
    for (const auto& m : msgs) benchmark::DoNotOptimize(detokenize(tokenize(m, table, cfg), table, cfg));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(msgs.size()));
}
BENCHMARK(BM_TokenizeRoundTrip)->Args({16, 1})->Args({64, 2})->Args({128, 4})->Args({240, 8});

static void BM_TextEncoder(benchmark::State& state) {
  const auto cfg = codec_for(16, 1);
  const auto table = build_lookup_table(cfg);
  const TextEncoder enc(TextEncoderConfig{});
  std::vector<TokenSequence> seqs;
  for (const auto& m : messages(static_cast<int>(state.range(0)), 16, 2)) seqs.push_back(tokenize(m, table, cfg));
  for (auto _ : state) benchmark::DoNotOptimize(enc.encode(seqs));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TextEncoder)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_DecoderStep(benchmark::State& state) {
  DecoderConfig dc;
  dc.message_bits = static_cast<int>(state.range(0));
  dc.chunk_bits = static_cast<int>(state.range(1));
  dc.groups = static_cast<int>(state.range(2));
  Decoder dec(dc);
  Adam adam;
  const auto msgs = messages(64, dc.message_bits, 3);
  Rng rng(4);
  ad::Matrix feats(64, kEmbeddingDim);
  for (ad::Index i = 0; i < feats.size(); ++i) feats.data()[i] = rng.normal();
  feats.rowwise().normalize();
  for (auto _ : state) {
    ad::Tape tape;
    const auto out = dec.forward(tape.constant(feats), true);
    auto loss = decoder_loss(out, msgs, dc, LossWeights{});
    dec.zero_grad();
    tape.backward(loss);
    adam.step(dec.parameters());
  }
}
BENCHMARK(BM_DecoderStep)->Args({16, 1, 1})->Args({64, 2, 4})->Unit(benchmark::kMillisecond);

static void BM_Render(benchmark::State& state) {
  SceneConfig sc;
  sc.count = static_cast<int>(state.range(0));
  const auto scene = generate_scene(sc);
  for (auto _ : state) benchmark::DoNotOptimize(render(scene));
}
BENCHMARK(BM_Render)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_RenderBackward(benchmark::State& state) {
  const auto scene = generate_scene(SceneConfig{});
  const ad::Matrix offsets = ad::Matrix::Zero(static_cast<ad::Index>(scene.size()), 3);
  const ad::Matrix g = ad::Matrix::Ones(64 * 64, 3);
  for (auto _ : state) benchmark::DoNotOptimize(render_backward(scene, offsets, g));
}
BENCHMARK(BM_RenderBackward)->Unit(benchmark::kMillisecond);

static void BM_Distortion(benchmark::State& state) {
  const auto kind = static_cast<DistortionKind>(state.range(0));
  const DistortionLayer layer(64, 64, DistortionConfig{});
  const Image img = render(generate_scene(SceneConfig{}));
  Rng rng(5);
  for (auto _ : state) benchmark::DoNotOptimize(layer.apply(img, kind, rng));
  state.SetLabel(distortion_name(kind));
}
BENCHMARK(BM_Distortion)->DenseRange(1, 8)->Unit(benchmark::kMicrosecond);

static void BM_Ssim(benchmark::State& state) {
  const auto scene = generate_scene(SceneConfig{});
  const Image a = render(scene);
  const Image b = render(scene, ad::Matrix::Constant(static_cast<ad::Index>(scene.size()), 3, 0.01));
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim)->Unit(benchmark::kMicrosecond);

static void BM_ImageEncode(benchmark::State& state) {
  const ImageEncoder enc(ImageEncoderConfig{});
  const Image img = render(generate_scene(SceneConfig{}));
  for (auto _ : state) benchmark::DoNotOptimize(enc.encode(img));
}
BENCHMARK(BM_ImageEncode)->Unit(benchmark::kMicrosecond);

static void BM_EmbedEpoch(benchmark::State& state) {
  const Decoder dec(DecoderConfig{});
  const ImageEncoder enc(ImageEncoderConfig{});
  EmbedConfig cfg;
  cfg.epochs = 1;
  const Embedder embedder(dec, enc, cfg);
  const auto scene = generate_scene(SceneConfig{});
  const auto msg = messages(1, 16, 6).front();
  for (auto _ : state) benchmark::DoNotOptimize(embedder.embed(scene, msg));
}
BENCHMARK(BM_EmbedEpoch)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
