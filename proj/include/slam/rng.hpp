#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace slam {

using Rng = std::mt19937_64;

// Stream purposes; part of every substream key.
enum class StreamKind : std::uint64_t {
  init = 1,
  t_update = 2,
  coefficients = 3,
  subsample = 4,
  paths = 5,
  data = 6,
  replicate = 7,
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_label(std::string_view label);

// Deterministic substream: the seed is a hash of (master seed, kind, keys...).
Rng make_stream(std::uint64_t master_seed, StreamKind kind,
                std::initializer_list<std::uint64_t> keys = {});

}  // namespace slam
