#include <doctest.h>

#include "scripted.hpp"
#include "splatmark/error.hpp"

using namespace splatmark;

namespace {

SamplerConfig small(int bits = 16, int k = 256) {
  SamplerConfig c;
  c.message_bits = bits;
  c.buffer_size = k;
  return c;
}

}  // namespace

TEST_SUITE("sampler") {
  TEST_CASE("ratio schedule") {
    SamplerConfig c;
    c.tau0 = 0.25;
    c.alpha = 0.0025;
    CHECK(hard_ratio(0, c) == 0.25);
    CHECK(hard_ratio(200, c) == 0.75);
    CHECK(hard_ratio(100, c) == doctest::Approx(0.5));
    c.alpha = 0.01;
    CHECK(hard_ratio(1000, c) == 1.0);
  }

  TEST_CASE("capacity is min(2^L, K)") {
    CHECK(small(4, 100).capacity() == 16);
    CHECK(small(16, 4096).capacity() == 4096);
    CHECK(small(128, 4096).capacity() == 4096);
  }

  TEST_CASE("validation") {
    auto c = small();
    c.freeze_epoch = c.epochs + 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small();
    c.hard_sigma = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("memory smoothing") {
    AccuracyMemory m;
    const MessageKey k{"0101"};
    m.record(k, 0.5, 0.5);
    CHECK(m.at(k) == 0.5);
    m.record(k, 1.0, 0.5);
    CHECK(m.at(k) == 0.75);
    CHECK_THROWS_AS(m.at(MessageKey{"1111"}), InputError);
  }

  TEST_CASE("only imperfect decodes are recorded by default") {
    const std::vector<BitMessage> batch = {BitMessage::from_string("0000"), BitMessage::from_string("0001"),
                                           BitMessage::from_string("0010")};
    auto cfg = small(4, 16);
    AccuracyMemory m;
    update_stats(m, batch, testing::scripted_logits(batch), cfg);
    CHECK(m.size() == 2);
    CHECK_FALSE(m.contains(key_of(batch[0])));
    CHECK(m.at(key_of(batch[1])) == 0.75);
    CHECK(m.at(key_of(batch[2])) == 0.5);

    // A later perfect decode leaves the record untouched unless asked otherwise.
    ad::Matrix perfect(1, 4);
    perfect << -1, -1, -1, 1;
    update_stats(m, std::span(batch).subspan(1, 1), perfect, cfg);
    CHECK(m.at(key_of(batch[1])) == 0.75);
    cfg.update_all_recorded = true;
    update_stats(m, std::span(batch).subspan(1, 1), perfect, cfg);
    CHECK(m.at(key_of(batch[1])) == doctest::Approx(0.875));
  }

  TEST_CASE("hard sampling orders by accuracy then key") {
    AccuracyMemory m;
    m.set(MessageKey{"11"}, 0.5);
    m.set(MessageKey{"01"}, 0.5);
    m.set(MessageKey{"00"}, 0.25);
    m.set(MessageKey{"10"}, 1.0);
    const auto h = sample_hard(m, 0.999, 10);
    REQUIRE(h.size() == 3);
    CHECK(h[0].to_string() == "00");
    CHECK(h[1].to_string() == "01");
    CHECK(h[2].to_string() == "11");
    CHECK(sample_hard(m, 0.999, 2).size() == 2);
  }

  TEST_CASE("unseen sampling never repeats") {
    Rng rng(1);
    KeySet seen;
    const auto a = sample_unseen(100, seen, 8, rng);
    const auto b = sample_unseen(100, seen, 8, rng);
    KeySet all;
    for (const auto& m : a) all.insert(key_of(m));
    for (const auto& m : b) all.insert(key_of(m));
    CHECK(all.size() == 200);
    CHECK(seen.size() == 200);
    // 56 unseen remain; the rest is re-drawn from seen messages.
    const auto c = sample_unseen(100, seen, 8, rng);
    CHECK(c.size() == 100);
    CHECK(seen.size() == 256);
  }

  TEST_CASE("scripted schedule keeps the buffer invariants") {
    auto cfg = small(16, 256);
    cfg.tau0 = 0.25;
    cfg.alpha = 0.0025;
    cfg.freeze_epoch = 30;
    cfg.epochs = 51;
    const auto run = testing::run_scripted(cfg, 9);
    REQUIRE(run.size() == 50);
    for (const auto& e : run) {
      CAPTURE(e.epoch);
      CHECK(e.size == 256);
      CHECK(e.distinct == 256);
      if (e.epoch < cfg.freeze_epoch) {
        CHECK_FALSE(e.frozen);
        CHECK(e.hard == e.expected_hard);
      } else {
        CHECK(e.frozen);
        CHECK(e.subset_of_memory);
      }
    }
  }

  TEST_CASE("buffer checks") {
    auto cfg = small(4, 4);
    std::vector<BitMessage> b = {BitMessage::from_string("0000"), BitMessage::from_string("0001"),
                                 BitMessage::from_string("0010"), BitMessage::from_string("0001")};
    CHECK_THROWS_AS(check_buffer(b, cfg), InputError);
    b[3] = BitMessage::from_string("1000");
    CHECK_NOTHROW(check_buffer(b, cfg));
    b.pop_back();
    CHECK_THROWS_AS(check_buffer(b, cfg), InputError);
  }

  TEST_CASE("rebuild is deterministic") {
    auto cfg = small(12, 64);
    cfg.epochs = 10;
    cfg.freeze_epoch = 5;
    const auto a = testing::run_scripted(cfg, 4);
    const auto b = testing::run_scripted(cfg, 4);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].hard == b[i].hard);
  }
}
