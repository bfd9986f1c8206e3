#pragma once

// A Stage I setup small enough for unit tests.

#include "splatmark/config.hpp"

namespace splatmark::testing {

inline RunConfig tiny_config(int bits = 8, int epochs = 4) {
  RunConfig c = RunConfig::for_bits(bits);
  c.text_encoder.width = 32;
  c.text_encoder.layers = 1;
  c.text_encoder.heads = 2;
  c.text_encoder.ffn_width = 64;
  auto& d = c.pretrain.decoder;
  d.width = 16;
  d.heads = 2;
  d.phi_hidden = 32;
  d.bit_hidden = 64;
  auto& s = c.pretrain.sampler;
  s.buffer_size = 64;
  s.epochs = epochs;
  s.freeze_epoch = epochs / 2 + 1;
  c.pretrain.batch_size = 16;
  c.resolve();
  c.validate();
  return c;
}

}  // namespace splatmark::testing
