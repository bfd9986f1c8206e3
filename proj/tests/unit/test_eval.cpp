#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include <nlohmann/json.hpp>

#include "splatmark/error.hpp"
#include "splatmark/eval.hpp"
#include "splatmark/rng.hpp"
#include "small_scene.hpp"

using namespace splatmark;
using namespace splatmark::testing;

namespace {

std::vector<BitMessage> buffer_of(int count, int bits, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<BitMessage> out;
  std::set<std::uint64_t> used;
  while (static_cast<int>(out.size()) < count) {
    const auto m = random_message(bits, rng);
    if (used.insert(m.to_integer()).second) out.push_back(m);
  }
  return out;
}

std::set<std::uint64_t> values(const std::vector<BitMessage>& ms) {
  std::set<std::uint64_t> s;
  for (const auto& m : ms) s.insert(m.to_integer());
  return s;
}

EvalConfig small_eval() {
  EvalConfig c;
  c.sample_count = 4;
  c.distortions = {DistortionKind::kBlur, DistortionKind::kJpeg};
  return c;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("protocol sampling") {
    const auto buffer = buffer_of(40, 10, 1);
    const auto in_buffer = values(buffer);
    Rng rng(2);
    const auto in = sample_protocol_messages(ProtocolMode::kIn, 30, buffer, 10, rng);
    CHECK(values(in).size() == 30);
    for (const auto& m : in) CHECK(in_buffer.count(m.to_integer()) == 1);
    const auto out = sample_protocol_messages(ProtocolMode::kOut, 30, buffer, 10, rng);
    CHECK(values(out).size() == 30);
    for (const auto& m : out) CHECK(in_buffer.count(m.to_integer()) == 0);
    const auto mixed = sample_protocol_messages(ProtocolMode::kRandom, 10, buffer, 10, rng);
    REQUIRE(mixed.size() == 10);
    for (int i = 0; i < 5; ++i) CHECK(in_buffer.count(mixed[static_cast<std::size_t>(i)].to_integer()) == 1);
    for (int i = 5; i < 10; ++i) CHECK(in_buffer.count(mixed[static_cast<std::size_t>(i)].to_integer()) == 0);
  }

  TEST_CASE("protocol sampling failures") {
    Rng rng(3);
    CHECK_THROWS_AS(sample_protocol_messages(ProtocolMode::kIn, 2, {}, 8, rng), InputError);
    const auto full = buffer_of(16, 4, 4);
    CHECK_THROWS_AS(sample_protocol_messages(ProtocolMode::kOut, 1, full, 4, rng), InputError);
    CHECK_THROWS_AS(sample_protocol_messages(ProtocolMode::kIn, 17, full, 4, rng), InputError);
    const auto dense = buffer_of(12, 4, 5);
    CHECK(values(sample_protocol_messages(ProtocolMode::kOut, 4, dense, 4, rng)).size() == 4);
  }

  TEST_CASE("names and columns") {
    for (auto m : {ProtocolMode::kIn, ProtocolMode::kOut, ProtocolMode::kRandom}) {
      CHECK(parse_protocol(protocol_name(m)) == m);
    }
    for (auto a : all_attacks()) CHECK(parse_attack(attack_name(a)) == a);
    CHECK_THROWS_AS(parse_protocol("both"), ConfigError);
    const auto cols = report_columns(small_eval());
    CHECK(cols == std::vector<std::string>{"none", "3d-prune", "3d-clone", "3d-noise", "2d-blur", "2d-jpeg"});
    EvalConfig odd;
    odd.sample_count = 3;
    CHECK_THROWS_AS(odd.validate(), ConfigError);
    odd.mode = ProtocolMode::kIn;
    CHECK_NOTHROW(odd.validate());
  }

  TEST_CASE("attacks") {
    SmallWorld w;
    Carrier c{w.scene, ad::Matrix::Constant(24, 3, 0.01)};
    const EvalConfig cfg;
    Rng rng(6);
    const auto same = apply_attack(c, AttackKind::kNone, cfg, rng);
    CHECK(same.scene == c.scene);
    CHECK(same.offsets == c.offsets);
    CHECK(apply_attack(c, AttackKind::kPrune, cfg, rng).scene.size() == 24 - 4);
    CHECK(apply_attack(c, AttackKind::kClone, cfg, rng).scene.size() == 24 + 4);
    CHECK(apply_attack(c, AttackKind::kNoise, cfg, rng).offsets != c.offsets);
  }

  TEST_CASE("text report") {
    SmallWorld w;
    CodecConfig codec;
    codec.message_bits = 8;
    TextEncoderConfig tc;
    tc.width = 32;
    tc.layers = 1;
    tc.heads = 2;
    tc.ffn_width = 64;
    LiveTextEmbeddings emb(codec, build_lookup_table(codec), std::make_shared<const TextEncoder>(tc));
    auto cfg = small_eval();
    cfg.text_samples = 20;
    const auto r = evaluate_text(w.decoder, emb, buffer_of(50, 8, 7), cfg);
    CHECK(r.samples == 20);
    CHECK(r.random_bit == doctest::Approx(0.5 * (r.in_bit + r.out_bit)));
    CHECK(r.random_projected == doctest::Approx(0.5 * (r.in_projected + r.out_projected)));
  }

  TEST_CASE("watermark report") {
    SmallWorld w;
    const auto buffer = buffer_of(30, 8, 8);
    const auto cfg = small_eval();
    const auto report = run_protocol(w.decoder, w.encoder, w.scene, buffer, w.embed, cfg);
    CHECK(report.columns == report_columns(cfg));
    REQUIRE(report.messages.size() == 4);
    int in = 0;
    for (const auto& m : report.messages) {
      in += m.side == "in";
      CHECK(m.accuracy.size() == report.columns.size());
    }
    CHECK(in == 2);
    for (const auto& col : report.columns) {
      CAPTURE(col);
      const double a = report.accuracy.at("in").at(col), b = report.accuracy.at("out").at(col);
      CHECK(report.accuracy.at("random").at(col) == doctest::Approx(0.5 * (a + b)));
    }

    // "none" is the clean extraction of a fresh embed
    Rng rng(cfg.seed);
    const auto sampled = sample_protocol_messages(cfg.mode, 4, buffer, 8, rng);
    const auto offsets = Embedder(w.decoder, w.encoder, w.embed).embed(w.scene, sampled[1]).offsets;
    const double clean = bit_accuracy(extract(render(w.scene, offsets), w.decoder, w.encoder), sampled[1]);
    const auto hit = std::find_if(report.messages.begin(), report.messages.end(),
                                  [&](const MessageResult& m) { return m.digest == message_digest(sampled[1]); });
    REQUIRE(hit != report.messages.end());
    CHECK(hit->accuracy.at("none") == clean);
    CHECK(report.echo.at("protocol") == "random");
    CHECK(report.to_json() == run_protocol(w.decoder, w.encoder, w.scene, buffer, w.embed, cfg).to_json());

    auto shuffled = buffer;
    std::reverse(shuffled.begin(), shuffled.end());
    CHECK(report.to_json() == run_protocol(w.decoder, w.encoder, w.scene, shuffled, w.embed, cfg).to_json());

    const auto dir = (std::filesystem::temp_directory_path() / "splatmark_test_cache").string();
    std::filesystem::remove_all(dir);
    CHECK(report.to_json() == run_protocol(w.decoder, w.encoder, w.scene, buffer, w.embed, cfg, dir).to_json());
    CHECK(!std::filesystem::is_empty(dir));
    CHECK(report.to_json() == run_protocol(w.decoder, w.encoder, w.scene, buffer, w.embed, cfg, dir).to_json());
    std::filesystem::remove_all(dir);

    const auto j = nlohmann::json::parse(report.to_json());
    CHECK(j.contains("accuracy"));
    CHECK(report.to_text().find("2d-jpeg") != std::string::npos);
    CHECK_THROWS_AS(run_protocol(w.decoder, w.encoder, w.scene, {}, w.embed, cfg), InputError);
  }
}
