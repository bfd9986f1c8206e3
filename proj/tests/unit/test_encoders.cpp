#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "splatmark/encoders.hpp"
#include "splatmark/error.hpp"
#include "splatmark/image.hpp"
#include "splatmark/rng.hpp"
#include "splatmark/sampler.hpp"
#include "splatmark/tensor_file.hpp"

using namespace splatmark;
using namespace splatmark::testing;

namespace {

TextEncoderConfig small_text(std::uint64_t seed = 1) {
  TextEncoderConfig c;
  c.width = 32;
  c.layers = 1;
  c.heads = 2;
  c.ffn_width = 64;
  c.seed = seed;
  return c;
}

ImageEncoderConfig small_image() {
  ImageEncoderConfig c;
  c.height = 16;
  c.width = 16;
  c.patch = 8;
  c.hidden = 8;
  return c;
}

CodecConfig codec16() {
  CodecConfig c;
  c.message_bits = 16;
  c.chunk_bits = 2;
  return c;
}

}  // namespace

TEST_SUITE("encoders") {
  TEST_CASE("text rows are unit norm and batch equals single") {
    const auto cfg = codec16();
    const auto table = build_lookup_table(cfg);
    const TextEncoder enc(small_text());
    Rng rng(3);
    std::vector<TokenSequence> seqs;
    for (int i = 0; i < 5; ++i) seqs.push_back(tokenize(random_message(16, rng), table, cfg));
    const ad::Matrix batch = enc.encode(seqs);
    CHECK(batch.cols() == kEmbeddingDim);
    for (int i = 0; i < 5; ++i) {
      CHECK(batch.row(i).norm() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK((batch.row(i) - enc.encode(seqs[static_cast<std::size_t>(i)])).norm() < 1e-12);
    }
    CHECK((batch.row(0) - batch.row(1)).norm() > 1e-3);
  }

  TEST_CASE("positions after the end token are ignored") {
    const auto cfg = codec16();
    const auto table = build_lookup_table(cfg);
    const TextEncoder enc(small_text());
    const auto seq = tokenize(BitMessage::from_string("1100101001110001"), table, cfg);
    auto junk = seq;
    const auto end = std::find(junk.ids.begin(), junk.ids.end(), cfg.end_id);
    REQUIRE(end != junk.ids.end());
    for (auto it = end + 1; it != junk.ids.end(); ++it) *it = 4000 + static_cast<int>(it - junk.ids.begin());
    CHECK((enc.encode(seq) - enc.encode(junk)).norm() == 0.0);
  }

  TEST_CASE("seeded weights") {
    CHECK(TextEncoder(small_text(1)).parameter_hash() == TextEncoder(small_text(1)).parameter_hash());
    CHECK(TextEncoder(small_text(1)).parameter_hash() != TextEncoder(small_text(2)).parameter_hash());
    auto a = small_image(), b = small_image();
    b.seed = 9;
    CHECK(ImageEncoder(a).parameter_hash() != ImageEncoder(b).parameter_hash());
  }

  TEST_CASE("text input checks") {
    const TextEncoder enc(small_text());
    TokenSequence short_seq;
    short_seq.ids = {1, 2};
    CHECK_THROWS_AS(enc.encode(short_seq), InputError);
    TokenSequence bad;
    bad.ids.assign(kContextLength, 0);
    bad.ids[0] = 1;
    bad.ids[1] = 9000;
    bad.ids[2] = 2;
    CHECK_THROWS_AS(enc.encode(bad), InputError);
    auto c = small_text();
    c.width = 30;
    c.heads = 4;
    CHECK_THROWS_AS(TextEncoder{c}, ConfigError);
  }

  TEST_CASE("image rows are unit norm and batches split") {
    const ImageEncoder enc(small_image());
    const Image a = random_image(16, 16, 1), b = random_image(16, 16, 2);
    ad::Tape t;
    ad::Matrix both(512, 3);
    both << a.pixels, b.pixels;
    const ad::Matrix out = enc.forward(t.constant(both), 2).value();
    CHECK(out.rows() == 2);
    CHECK(out.row(0).norm() == doctest::Approx(1.0));
    CHECK((out.row(0) - enc.encode(a)).norm() < 1e-12);
    CHECK((out.row(1) - enc.encode(b)).norm() < 1e-12);
  }

  TEST_CASE("image encoder gradient") {
    const ImageEncoder enc(small_image());
    const Image img = random_image(16, 16, 4);
    ad::Matrix w(1, kEmbeddingDim);
    for (int i = 0; i < kEmbeddingDim; ++i) w(0, i) = std::sin(0.37 * i);
    const double err = check_input_gradient(
        [&](ad::Tape& t, ad::Var v) { return ad::sum(ad::mul(enc.forward(v, 1), t.constant(w))); }, img.pixels);
    CHECK(err < kGradTolerance);
  }

  TEST_CASE("image input checks") {
    const ImageEncoder enc(small_image());
    Image img = random_image(16, 16, 5);
    img.pixels(3, 1) = 1.5;
    CHECK_THROWS_AS(enc.encode(img), InputError);
    CHECK_THROWS_AS(enc.encode(random_image(8, 16, 5)), InputError);
    auto c = small_image();
    c.patch = 5;
    CHECK_THROWS_AS(ImageEncoder{c}, ConfigError);
  }

  TEST_CASE("live cache equals recomputation") {
    const auto cfg = codec16();
    auto enc = std::make_shared<const TextEncoder>(small_text());
    LiveTextEmbeddings live(cfg, build_lookup_table(cfg), enc);
    Rng rng(6);
    std::vector<BitMessage> ms;
    for (int i = 0; i < 4; ++i) ms.push_back(random_message(16, rng));
    const ad::Matrix first = live.embed(ms);
    CHECK(live.cache_size() == 4);
    CHECK(live.embed(ms) == first);
    CHECK((first.row(2) - enc->encode(tokenize(ms[2], live.table(), cfg))).norm() < 1e-12);
    auto other = cfg;
    other.seed = 5;
    CHECK_THROWS_AS(LiveTextEmbeddings(cfg, build_lookup_table(other), enc), ConfigError);
  }

  TEST_CASE("embedding container round trip") {
    Rng rng(7);
    std::vector<BitMessage> ms;
    for (int i = 0; i < 3; ++i) ms.push_back(random_message(12, rng));
    ad::Matrix e(3, kEmbeddingDim);
    for (ad::Index i = 0; i < e.size(); ++i) e.data()[i] = rng.normal(0.0, 1.0);
    const auto path = (std::filesystem::temp_directory_path() / "splatmark_test_emb.st").string();
    export_embeddings(path, ms, 2.0 * e, {{"source", "test"}});
    ImportedEmbeddings imported(import_embeddings(path));
    CHECK(imported.size() == 3);
    const ad::Matrix back = imported.embed(ms);
    for (int i = 0; i < 3; ++i) CHECK((back.row(i) - e.row(i) / e.row(i).norm()).norm() < 1e-12);
    const BitMessage unknown = BitMessage::from_integer(ms[0].to_integer() ^ 1u, 12);
    if (unknown != ms[1] && unknown != ms[2]) CHECK_THROWS_AS(imported.embed(std::vector<BitMessage>{unknown}), InputError);

    TensorFile f;
    f.set_metadata("format", "splatmark.embeddings");
    f.set_metadata("version", "1");
    f.set_metadata("dim", "4");
    f.put("embeddings", ad::Matrix::Ones(1, 4));
    f.put_u8("ids", std::vector<std::uint8_t>(12, 0), {1, 12});
    f.save(path);
    CHECK_THROWS_AS(import_embeddings(path), FormatError);
    CHECK_THROWS_AS(export_embeddings(path, ms, ad::Matrix::Ones(2, kEmbeddingDim)), InputError);
    std::filesystem::remove(path);
  }
}
