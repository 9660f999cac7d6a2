#include <cmath>

#include "doctest.h"
#include "pilot/core/error.hpp"
#include "pilot/masking/mask.hpp"

using namespace pilot;
using ad::Tensor;

namespace {
const net::RecordLayout kLayout({10, 20, 30, 4});
}

TEST_CASE("a_drop rate") {
  Rng rng(1);
  // 100 rows x 60 maskable positions = 6000 per draw.
  std::size_t hits = 0, total = 0;
  for (int d = 0; d < 17; ++d) {
    auto m = mask::sample_mask({mask::MaskMode::a_drop, 0.3}, kLayout, 100, rng);
    for (std::size_t i = 0; i < 100; ++i) {
      for (std::size_t j = 0; j < kLayout.total(); ++j) {
        const bool b = m.bits.at(i, j) != 0;
        if (j >= kLayout.maskable()) {
          CHECK_FALSE(b);
        } else {
          hits += b;
          ++total;
        }
      }
    }
  }
  CHECK(total >= 100000);
  CHECK(std::abs(double(hits) / double(total) - 0.3) < 0.01);
}

TEST_CASE("a_aug layer frequencies") {
  Rng rng(2);
  net::RecordLayout three({5, 6, 7, 2});
  std::size_t counts[3] = {0, 0, 0}, nonempty = 0;
  while (nonempty < 30000) {
    auto m = mask::sample_mask({mask::MaskMode::a_aug, 0.5}, three, 1, rng);
    if (m.none()) {
      CHECK(m.layer_choice[0] == -1);
      continue;
    }
    ++nonempty;
    const int l = m.layer_choice[0];
    REQUIRE(l >= 0);
    REQUIRE(l < 3);
    ++counts[l];
    // Exactly that layer, in full.
    CHECK(m.count() == three.width(std::size_t(l)));
    CHECK(m.bits.at(0, three.offset(std::size_t(l))) == 1.0);
  }
  for (auto c : counts) CHECK(std::abs(double(c) / 30000.0 - 1.0 / 3) < 0.02);
}

TEST_CASE("x modes only touch the input layer") {
  Rng rng(3);
  for (auto mode : {mask::MaskMode::x_drop, mask::MaskMode::x_aug}) {
    auto m = mask::sample_mask({mode, 0.5}, kLayout, 200, rng);
    CHECK(m.count() > 0);
    for (std::size_t i = 0; i < 200; ++i)
      for (std::size_t j = kLayout.width(0); j < kLayout.total(); ++j) CHECK(m.bits.at(i, j) == 0.0);
  }
  auto aug = mask::sample_mask({mask::MaskMode::x_aug, 0.5}, kLayout, 50, rng);
  for (std::size_t i = 0; i < 50; ++i) {
    std::size_t row = 0;
    for (std::size_t j = 0; j < 10; ++j) row += aug.bits.at(i, j) != 0;
    CHECK((row == 0 || row == 10));
  }
}

TEST_CASE("same seed gives the same mask") {
  Rng a(7), b(7);
  auto ma = mask::sample_mask({mask::MaskMode::a_drop, 0.4}, kLayout, 8, a);
  auto mb = mask::sample_mask({mask::MaskMode::a_drop, 0.4}, kLayout, 8, b);
  CHECK(ma.bits == mb.bits);
}

TEST_CASE("rate validation and mode names") {
  Rng rng(4);
  CHECK_THROWS_AS(mask::sample_mask({mask::MaskMode::a_drop, 0.0}, kLayout, 1, rng), ConfigError);
  CHECK_THROWS_AS(mask::sample_mask({mask::MaskMode::a_drop, 1.0}, kLayout, 1, rng), ConfigError);
  for (auto mode : {mask::MaskMode::x_drop, mask::MaskMode::x_aug, mask::MaskMode::a_drop, mask::MaskMode::a_aug})
    CHECK(mask::parse_mask_mode(mask::to_string(mode)) == mode);
  CHECK(mask::parse_mask_mode("a-aug") == mask::MaskMode::a_aug);
  CHECK_THROWS_AS(mask::parse_mask_mode("b_drop"), ConfigError);
}

TEST_CASE("splice") {
  Tensor a = Tensor::matrix({{1, 2, 3}});
  Tensor imp = Tensor::matrix({{9, 0, 8}});
  CHECK(mask::splice(a, imp, Tensor::matrix({{1, 0, 1}})) == Tensor::matrix({{9, 2, 8}}));
  CHECK(mask::splice(a, imp, Tensor::matrix({{0, 0, 0}})) == a);
  CHECK(mask::splice(a, imp, Tensor::matrix({{1, 1, 1}})) == imp);
  CHECK_THROWS_AS(mask::splice(a, Tensor::matrix({{1, 2}}), Tensor::matrix({{1, 0, 1}})), ShapeError);
  auto e = mask::empty_mask(kLayout, 3);
  CHECK(e.none());
  CHECK(e.bits.shape() == ad::Shape{3, kLayout.total()});
}
