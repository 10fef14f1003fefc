#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "temp_dir.hpp"
#include "semgs/errors.hpp"
#include "semgs/image_io.hpp"
#include "semgs/mask_unify.hpp"

using namespace semgs;

namespace {

std::vector<std::uint8_t> rect(int w, int h, int x0, int y0, int x1, int y1) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h, 0);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) px[static_cast<std::size_t>(y) * w + x] = 1;
  return px;
}

MaskSet random_masks(std::mt19937_64& rng, int w, int h, int count, int channels) {
  MaskSet set;
  set.width = w;
  set.height = h;
  std::uniform_int_distribution<int> ux(0, w - 1), uy(0, h - 1);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (int i = 0; i < count; ++i) {
    int x0 = ux(rng), x1 = ux(rng), y0 = uy(rng), y1 = uy(rng);
    if (x0 > x1) std::swap(x0, x1);
    if (y0 > y1) std::swap(y0, y1);
    std::vector<float> e(static_cast<std::size_t>(channels));
    for (auto& v : e) v = n(rng);
    set.add(10 + i * 3, rect(w, h, x0, y0, x1, y1), e);
  }
  return set;
}

FeatureMap random_features(std::mt19937_64& rng, int w, int h, int c, double assigned_fraction) {
  FeatureMap f(h, w, c);
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::bernoulli_distribution keep(assigned_fraction);
  std::vector<float> v(static_cast<std::size_t>(c));
  for (std::size_t p = 0; p < f.pixel_count(); ++p) {
    if (!keep(rng)) continue;
    for (auto& x : v) x = n(rng);
    f.set(p, v);
  }
  return f;
}

/// Reference overwrite order: sort by area descending then id, paint each mask in turn.
std::vector<int> painted_owner(const MaskSet& set) {
  std::vector<const Mask*> sorted;
  for (const Mask& m : set.masks) sorted.push_back(&m);
  std::sort(sorted.begin(), sorted.end(), [](const Mask* a, const Mask* b) {
    const auto area = [](const Mask* m) { return std::count(m->pixels.begin(), m->pixels.end(), 1); };
    return area(a) != area(b) ? area(a) > area(b) : a->id < b->id;
  });
  std::vector<int> owner(static_cast<std::size_t>(set.width) * set.height, -1);
  for (const Mask* m : sorted)
    for (std::size_t p = 0; p < owner.size(); ++p)
      if (m->pixels[p]) owner[p] = static_cast<int>(m - set.masks.data());
  return owner;
}

} // namespace

TEST_SUITE("mask_unify") {

TEST_CASE("pixel mode averages a two-pixel mask") {
  FeatureMap src(1, 3, 2);
  src.set(0, std::vector<float>{1, 0});
  src.set(1, std::vector<float>{0, 1});
  src.set(2, std::vector<float>{7, 7});
  MaskSet masks;
  masks.width = 3;
  masks.height = 1;
  masks.add(1, {1, 1, 0});
  const FeatureMap out = unify_pixel(src, masks);
  CHECK(out.pixel(0)[0] == 0.5f);
  CHECK(out.pixel(0)[1] == 0.5f);
  CHECK(out.pixel(1)[0] == 0.5f);
  CHECK(out.pixel(2)[0] == 7.0f); // outside every mask: raw feature kept
}

TEST_CASE("instance mode assigns the embedding and leaves the rest unassigned") {
  MaskSet masks;
  masks.width = 4;
  masks.height = 3;
  masks.add(5, rect(4, 3, 1, 1, 2, 2), std::vector<float>{0.25f, -1.0f});
  const FeatureMap out = unify(UnifyMode::instance, masks);
  CHECK(out.channels == 2);
  for (std::size_t p = 0; p < out.pixel_count(); ++p) {
    if (masks.masks[0].pixels[p]) {
      CHECK(out.is_assigned(p));
      CHECK(out.pixel(p)[1] == -1.0f);
    } else {
      CHECK_FALSE(out.is_assigned(p));
      CHECK(out.pixel(p)[0] == 0.0f);
    }
  }
}

TEST_CASE("nested masks: the finer mask wins") {
  MaskSet masks;
  masks.width = masks.height = 10;
  masks.add(1, rect(10, 10, 0, 0, 9, 9), std::vector<float>{1, 0}); // area 100
  masks.add(2, rect(10, 10, 3, 3, 4, 7), std::vector<float>{0, 1}); // area 10
  CHECK(masks.masks[0].area == 100);
  CHECK(masks.masks[1].area == 10);
  const FeatureMap out = unify(UnifyMode::image, masks);
  const auto owner = painted_owner(masks);
  for (std::size_t p = 0; p < out.pixel_count(); ++p) {
    const float expected_b = owner[p] == 1 ? 1.0f : 0.0f;
    CHECK(out.pixel(p)[1] == expected_b);
    CHECK(out.pixel(p)[0] == 1.0f - expected_b);
  }
}

TEST_CASE("embedding modes match the overwrite-order oracle on random overlapping masks") {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const MaskSet masks = random_masks(rng, 23, 17, 6, 4);
    const FeatureMap out = unify(UnifyMode::instance, masks);
    const auto owner = painted_owner(masks);
    std::size_t assigned = 0, union_count = 0;
    for (std::size_t p = 0; p < out.pixel_count(); ++p) {
      assigned += out.is_assigned(p);
      union_count += owner[p] >= 0;
      if (owner[p] < 0) continue;
      const auto& e = *masks.masks[static_cast<std::size_t>(owner[p])].embedding;
      CHECK(std::equal(e.begin(), e.end(), out.pixel(p).begin()));
    }
    CHECK(assigned == union_count);
    CHECK(out.height == 17);
    CHECK(out.width == 23);
  }
}

TEST_CASE("pixel mode matches a mean-over-owned-pixels oracle and is idempotent") {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 20; ++t) {
    const MaskSet masks = random_masks(rng, 19, 13, 5, 3);
    const FeatureMap src = random_features(rng, 19, 13, 3, 0.8);
    const FeatureMap once = unify_pixel(src, masks);
    const auto owner = painted_owner(masks);
    for (std::size_t m = 0; m < masks.masks.size(); ++m) {
      std::vector<double> sum(3, 0.0);
      int n = 0;
      for (std::size_t p = 0; p < owner.size(); ++p) {
        if (owner[p] != static_cast<int>(m) || !src.is_assigned(p)) continue;
        for (int k = 0; k < 3; ++k) sum[static_cast<std::size_t>(k)] += src.pixel(p)[static_cast<std::size_t>(k)];
        ++n;
      }
      for (std::size_t p = 0; p < owner.size(); ++p) {
        if (owner[p] != static_cast<int>(m) || n == 0) continue;
        for (std::size_t k = 0; k < 3; ++k) CHECK(once.pixel(p)[k] == doctest::Approx(sum[k] / n).epsilon(1e-6));
      }
    }
    const FeatureMap twice = unify_pixel(once, masks);
    CHECK(twice.data == once.data);
    CHECK(twice.assigned == once.assigned);
    CHECK(once.channels == src.channels);
  }
}

TEST_CASE("unify contract errors") {
  MaskSet masks;
  masks.width = 3;
  masks.height = 2;
  masks.add(1, rect(3, 2, 0, 0, 1, 1));
  CHECK_THROWS_AS(unify(UnifyMode::instance, masks), ContractError);
  CHECK_THROWS_AS(unify(UnifyMode::pixel, masks), ContractError);
  FeatureMap wrong(3, 3, 2);
  CHECK_THROWS_AS(unify(UnifyMode::pixel, masks, &wrong), ContractError);
  masks.add(1, rect(3, 2, 0, 0, 0, 0));
  CHECK_THROWS_AS(masks.validate(), DataError);
}

TEST_CASE("one_hot_ids examples and histogram") {
  LabelImage ids{2, 1, {2, 0}};
  const FeatureMap f = one_hot_ids(ids, 4);
  CHECK(f.channels == 4);
  CHECK(std::vector<float>(f.pixel(0).begin(), f.pixel(0).end()) == std::vector<float>{0, 1, 0, 0});
  CHECK_FALSE(f.is_assigned(1));
  CHECK(std::all_of(f.pixel(1).begin(), f.pixel(1).end(), [](float v) { return v == 0.0f; }));

  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> u(0, 6);
  LabelImage big{31, 27, {}};
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 31 * 27; ++i) {
    const int id = u(rng);
    big.pixels.push_back(static_cast<std::uint16_t>(id));
    ++hist[static_cast<std::size_t>(id)];
  }
  const FeatureMap g = one_hot_ids(big, 6);
  for (int k = 0; k < 6; ++k) {
    double col = 0;
    for (std::size_t p = 0; p < g.pixel_count(); ++p) col += g.pixel(p)[static_cast<std::size_t>(k)];
    CHECK(col == hist[static_cast<std::size_t>(k + 1)]);
  }

  LabelImage bad{3, 2, {0, 0, 0, 0, 9, 0}};
  try {
    one_hot_ids(bad, 4);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("(1, 1)") != std::string::npos);
  }
}

TEST_CASE("SGFM round trip and header layout") {
  testing_support::TempDir dir("sgfm");
  std::mt19937_64 rng(5);
  const FeatureMap f = random_features(rng, 7, 5, 3, 0.6);
  write_feature_map(f, dir / "a.sgfm");
  const FeatureMap g = read_feature_map(dir / "a.sgfm");
  CHECK(g.data == f.data);
  CHECK(g.assigned == f.assigned);

  std::ifstream in(dir / "a.sgfm", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  REQUIRE(bytes.size() == 24 + 7 * 5 * 3 * 4 + 7 * 5);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SGFM");
  CHECK(bytes[4] == 1);  // version
  CHECK(bytes[8] == 5);  // H
  CHECK(bytes[12] == 7); // W
  CHECK(bytes[16] == 3); // C
  CHECK(bytes[20] == 0); // f32
  CHECK(bytes[21] == 1); // mask present

  std::ofstream(dir / "short.sgfm", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), 40);
  CHECK_THROWS_AS(read_feature_map(dir / "short.sgfm"), FormatError);
}

TEST_CASE("f16 storage") {
  CHECK(float_to_half(1.0f) == 0x3C00);
  CHECK(float_to_half(-2.0f) == 0xC000);
  CHECK(half_to_float(0x3555) == doctest::Approx(0.333251953125));
  for (float v : {0.0f, 0.5f, -0.75f, 1024.0f, 6.1035156e-05f}) CHECK(half_to_float(float_to_half(v)) == v);

  testing_support::TempDir dir("sgfm16");
  std::mt19937_64 rng(6);
  const FeatureMap f = random_features(rng, 6, 4, 5, 1.0);
  write_feature_map(f, dir / "h.sgfm", FeatureDtype::f16, false);
  const FeatureMap g = read_feature_map(dir / "h.sgfm");
  for (std::size_t i = 0; i < f.data.size(); ++i) CHECK(std::abs(g.data[i] - f.data[i]) <= 1e-3f * std::max(1.0f, std::abs(f.data[i])));
}

TEST_CASE("MaskSet file round trip for disjoint and overlapping sets") {
  testing_support::TempDir dir("masks");
  std::mt19937_64 rng(12);
  for (bool overlapping : {false, true}) {
    MaskSet set;
    set.width = 12;
    set.height = 9;
    if (overlapping) {
      set = random_masks(rng, 12, 9, 4, 2);
    } else {
      set.add(3, rect(12, 9, 0, 0, 3, 3), std::vector<float>{1.5f, 2.5f});
      set.add(7, rect(12, 9, 5, 2, 11, 8));
    }
    const auto path = dir / (overlapping ? "o.json" : "d.json");
    write_mask_set(set, path);
    const MaskSet back = read_mask_set(path);
    REQUIRE(back.masks.size() == set.masks.size());
    for (std::size_t i = 0; i < set.masks.size(); ++i) {
      const Mask& a = set.masks[i];
      const auto it = std::find_if(back.masks.begin(), back.masks.end(), [&](const Mask& m) { return m.id == a.id; });
      REQUIRE(it != back.masks.end());
      CHECK(it->pixels == a.pixels);
      CHECK(it->area == a.area);
      CHECK(it->bbox == a.bbox);
      CHECK(it->embedding == a.embedding);
    }
  }
}

} // TEST_SUITE
