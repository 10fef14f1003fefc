#include "semgs/feature_map.hpp"

#include <bit>
#include <cmath>
#include <string>

#include "binary_io.hpp"
#include "semgs/errors.hpp"

namespace semgs {

namespace {
constexpr std::uint32_t kFeatureMapVersion = 1;
}

void FeatureMap::set(std::size_t p, std::span<const float> value) {
  if (value.size() != static_cast<std::size_t>(channels)) throw ContractError("feature map: channel mismatch");
  std::copy(value.begin(), value.end(), pixel(p).begin());
  assigned[p] = 1;
}

void FeatureMap::clear(std::size_t p) {
  auto px = pixel(p);
  std::fill(px.begin(), px.end(), 0.0f);
  assigned[p] = 0;
}

void FeatureMap::validate() const {
  if (height < 0 || width < 0 || channels < 0) throw DataError("feature map: negative dimension");
  if (data.size() != pixel_count() * static_cast<std::size_t>(channels) || assigned.size() != pixel_count())
    throw DataError("feature map: buffer sizes do not match H x W x C");
  for (std::size_t p = 0; p < pixel_count(); ++p) {
    const auto px = pixel(p);
    if (assigned[p] > 1) throw DataError("feature map: assignment byte must be 0 or 1 at pixel " + std::to_string(p));
    for (float v : px) {
      if (!std::isfinite(v)) throw DataError("feature map: non-finite value at pixel " + std::to_string(p));
      if (assigned[p] == 0 && v != 0.0f)
        throw DataError("feature map: unassigned pixel " + std::to_string(p) + " is not zero");
    }
  }
}

std::uint16_t float_to_half(float value) {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  const std::uint32_t sign = (bits >> 16) & 0x8000u;
  const std::uint32_t exp = (bits >> 23) & 0xffu;
  std::uint32_t mant = bits & 0x7fffffu;
  if (exp == 0xff) return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0u));
  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 31) return static_cast<std::uint16_t>(sign | 0x7c00u);
  if (e <= 0) {
    if (e < -10) return static_cast<std::uint16_t>(sign);
    mant |= 0x800000u;
    const int shift = 14 - e;
    std::uint32_t half = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half & 1u))) ++half;
    return static_cast<std::uint16_t>(sign | half);
  }
  std::uint32_t half = (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half; // may carry into the exponent, which is correct
  return static_cast<std::uint16_t>(sign | half);
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = (h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1fu;
  const std::uint32_t mant = h & 0x3ffu;
  if (exp == 0) {
    const float v = std::ldexp(static_cast<float>(mant), -24);
    return sign ? -v : v;
  }
  if (exp == 31) return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
  return std::bit_cast<float>(sign | ((exp - 15 + 127) << 23) | (mant << 13));
}

FeatureMap read_feature_map(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  detail::ByteReader r(bytes, path.string());
  if (r.read_magic(4) != "SGFM") throw FormatError(path.string() + ": bad magic (expected SGFM)");
  const auto version = r.read<std::uint32_t>("version");
  if (version != kFeatureMapVersion) throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  const auto h = r.read<std::uint32_t>("height");
  const auto w = r.read<std::uint32_t>("width");
  const auto c = r.read<std::uint32_t>("channels");
  const auto dtype = r.read<std::uint8_t>("dtype");
  const auto has_mask = r.read<std::uint8_t>("mask flag");
  if (dtype > 1) throw FormatError(path.string() + ": unsupported dtype " + std::to_string(dtype));
  if (has_mask > 1) throw FormatError(path.string() + ": mask flag must be 0 or 1");
  r.skip_to_alignment(8);

  FeatureMap map(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  const std::size_t values = map.data.size();
  if (dtype == 0) {
    r.read_array(std::span<float>(map.data), "feature values");
  } else {
    std::vector<std::uint16_t> halves(values);
    r.read_array(std::span<std::uint16_t>(halves), "feature values");
    for (std::size_t i = 0; i < values; ++i) map.data[i] = half_to_float(halves[i]);
  }
  if (has_mask) {
    r.read_array(std::span<std::uint8_t>(map.assigned), "assignment mask");
  } else {
    std::fill(map.assigned.begin(), map.assigned.end(), std::uint8_t{1});
  }
  r.expect_end();
  try {
    map.validate();
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return map;
}

void write_feature_map(const FeatureMap& map, const std::filesystem::path& path, FeatureDtype dtype, bool with_mask) {
  map.validate();
  detail::ByteWriter w;
  w.write_bytes("SGFM");
  w.write(kFeatureMapVersion);
  w.write(static_cast<std::uint32_t>(map.height));
  w.write(static_cast<std::uint32_t>(map.width));
  w.write(static_cast<std::uint32_t>(map.channels));
  w.write(static_cast<std::uint8_t>(dtype));
  w.write(static_cast<std::uint8_t>(with_mask ? 1 : 0));
  w.pad_to(8);
  if (dtype == FeatureDtype::f32) {
    w.write_array(std::span<const float>(map.data));
  } else {
    for (float v : map.data) w.write(float_to_half(v));
  }
  if (with_mask) w.write_array(std::span<const std::uint8_t>(map.assigned));
  w.save(path);
}

} // namespace semgs
