// SPDX-License-Identifier: Apache-2.0
// Small deterministic datasets and training configs for the tests.
#pragma once

#include "shallowpi/data.hpp"
#include "shallowpi/trainer.hpp"

namespace fixture {

inline shallowpi::DataSplits blobs(int classes, double noise, std::uint64_t seed,
                                   int train = 240, int test = 120, int size = 8) {
  shallowpi::BlobOptions o;
  o.classes = classes;
  o.train_samples = train;
  o.test_samples = test;
  o.image_size = size;
  o.noise = noise;
  o.seed = seed;
  return shallowpi::make_blob_splits(o, 0.1);
}

inline shallowpi::TrainConfig train_config(int epochs, double lr, std::uint64_t seed,
                                           int batch = 32) {
  shallowpi::TrainConfig c;
  c.epochs = epochs;
  c.lr = lr;
  c.lr_decay_epochs = {};
  c.batch_size = batch;
  c.seed = seed;
  return c;
}

}  // namespace fixture
