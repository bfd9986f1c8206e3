#include <doctest.h>

#include <nlohmann/json.hpp>

#include "splatmark/config.hpp"
#include "splatmark/error.hpp"
#include "splatmark/rng.hpp"

using namespace splatmark;

namespace {

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("chunking table") {
    using P = std::pair<int, int>;
    CHECK(default_chunking(8) == P{1, 1});
    CHECK(default_chunking(16) == P{1, 1});
    CHECK(default_chunking(30) == P{2, 1});
    CHECK(default_chunking(32) == P{2, 4});
    CHECK(default_chunking(96) == P{2, 4});
    CHECK(default_chunking(100) == P{4, 4});
    CHECK(default_chunking(300) == P{4, 4});
    CHECK(default_chunking(301) == P{8, 1});
  }

  TEST_CASE("schedules by payload length") {
    const auto a = RunConfig::for_bits(16);
    CHECK(a.pretrain.sampler.epochs == 150);
    CHECK(a.pretrain.sampler.freeze_epoch == 100);
    CHECK(a.pretrain.sampler.tau0 == 0.30);
    CHECK(a.pretrain.sampler.alpha == 0.0045);
    CHECK(a.embed.epochs == 150);
    const auto b = RunConfig::for_bits(64);
    CHECK(b.pretrain.sampler.epochs == 300);
    CHECK(b.pretrain.sampler.freeze_epoch == 200);
    CHECK(b.pretrain.sampler.tau0 == 0.25);
    CHECK(b.pretrain.sampler.alpha == 0.0025);
    CHECK(b.embed.epochs == 200);
    CHECK(RunConfig::for_bits(65).embed.epochs == 300);
  }

  TEST_CASE("every default configuration fits the context") {
    for (int L = 1; L <= 300; ++L) {
      CAPTURE(L);
      const auto c = RunConfig::for_bits(L);
      CHECK_NOTHROW(c.validate());
      CHECK(c.codec.chunk_count() + 2 <= kContextLength);
      CHECK(c.pretrain.decoder.message_bits == L);
      CHECK(L % c.pretrain.decoder.groups == 0);
    }
    // n = 8 past 300 bits needs more table slots than the vocabulary has
    CHECK_THROWS_AS(RunConfig::for_bits(301).validate(), CapacityError);
  }

  TEST_CASE("token budget") {
    auto c = RunConfig::for_bits(16);
    c.codec.message_bits = 76;
    c.codec.chunk_bits = 1;
    c.pretrain.decoder.groups = 1;
    c.resolve();
    CHECK(error_of([&] { c.validate(); }).find("C + 2 = 78 > 77") != std::string::npos);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"codec": {"message_bits": 76, "chunk_bits": 1}, "decoder": {"groups": 1}})"),
                    ConfigError);
    CHECK_NOTHROW(RunConfig::from_json(R"({"codec": {"message_bits": 75, "chunk_bits": 1}, "decoder": {"groups": 1}})"));
  }

  TEST_CASE("seeds derive from the three roots") {
    auto c = RunConfig::for_bits(16);
    c.seeds = {11, 12, 13};
    c.resolve();
    CHECK(c.codec.seed == 11);
    CHECK(c.text_encoder.seed == mix_seed(12, 1));
    CHECK(c.image_encoder.seed == mix_seed(12, 2));
    CHECK(c.pretrain.decoder.seed == mix_seed(13, 3));
    CHECK(c.pretrain.seed == mix_seed(13, 4));
    CHECK(c.embed.seed == mix_seed(13, 5));
    CHECK(c.eval.seed == mix_seed(13, 6));
    CHECK(c.scene.seed == mix_seed(13, 7));
  }

  TEST_CASE("json round trip") {
    auto c = RunConfig::for_bits(32);
    c.pretrain.sampler.hard_sigma = 0.95;
    c.embed.distortion.enabled = {DistortionKind::kBlur, DistortionKind::kJpeg};
    c.eval.mode = ProtocolMode::kOut;
    c.seeds.training = 99;
    c.resolve();
    const std::string text = c.to_json();
    const auto back = RunConfig::from_json(text);
    CHECK(back.to_json() == text);
    CHECK(back.pretrain.sampler.hard_sigma == 0.95);
    CHECK(back.embed.distortion.enabled.size() == 2);
    CHECK(back.embed.seed == mix_seed(99, 5));
    CHECK(nlohmann::json::parse(text).contains("seeds"));
  }

  TEST_CASE("partial files overlay the length defaults") {
    const auto c = RunConfig::from_json(R"({"codec": {"message_bits": 64}})");
    CHECK(c.codec.chunk_bits == 2);
    CHECK(c.pretrain.decoder.groups == 4);
    CHECK(c.pretrain.sampler.epochs == 300);
    const auto d = RunConfig::from_json("{}", {{"sampler.tau0", "0.2"}, {"embed.lambda_bit", "0.03"}});
    CHECK(d.pretrain.sampler.tau0 == 0.2);
    CHECK(d.embed.lambda_bit == 0.03);
    CHECK(RunConfig::from_json("{}", {{"codec.message_bits", "32"}}).codec.chunk_bits == 2);
  }

  TEST_CASE("rejections") {
    CHECK(error_of([] { RunConfig::from_json(R"({"sampler": {"bogus": 1}})"); }) ==
          "unknown config key 'sampler.bogus'");
    CHECK(error_of([] { RunConfig::from_json(R"({"extras": {}})"); }).find("unknown config section") !=
          std::string::npos);
    CHECK(error_of([] { RunConfig::from_json(R"({"sampler": {"tau0": "high"}})"); }).find("sampler.tau0") !=
          std::string::npos);
    CHECK(error_of([] { RunConfig::from_json(R"({"codec": {"message_bits": 64}, "decoder": {"groups": 3}})"); })
              .find("L mod G") != std::string::npos);
    CHECK_THROWS_AS(RunConfig::from_json("[1, 2]"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json("{"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json("{}", {{"tau0", "1"}}), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"eval": {"protocol": "random", "sample_count": 3}})"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json(R"({"scene": {"height": 60}})"), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/run.json"), IoError);
  }
}
