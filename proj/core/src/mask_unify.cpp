#include "semgs/mask_unify.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <string>

#include <json.hpp>

#include "semgs/errors.hpp"

namespace semgs {

namespace fs = std::filesystem;

namespace {

void fill_metadata(Mask& m, int width) {
  m.area = 0;
  m.bbox = {0, 0, -1, -1};
  bool first = true;
  for (std::size_t p = 0; p < m.pixels.size(); ++p) {
    if (!m.pixels[p]) continue;
    ++m.area;
    const int x = static_cast<int>(p % static_cast<std::size_t>(width));
    const int y = static_cast<int>(p / static_cast<std::size_t>(width));
    if (first) {
      m.bbox = {x, y, x, y};
      first = false;
    } else {
      m.bbox[0] = std::min(m.bbox[0], x);
      m.bbox[1] = std::min(m.bbox[1], y);
      m.bbox[2] = std::max(m.bbox[2], x);
      m.bbox[3] = std::max(m.bbox[3], y);
    }
  }
}

const char* mode_name(UnifyMode mode) {
  switch (mode) {
  case UnifyMode::pixel: return "pixel";
  case UnifyMode::instance: return "instance";
  case UnifyMode::image: return "image";
  }
  return "?";
}

bool masks_overlap(const MaskSet& set) {
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(set.height) * set.width, 0);
  for (const Mask& m : set.masks) {
    for (std::size_t p = 0; p < seen.size(); ++p) {
      if (!m.pixels[p]) continue;
      if (seen[p]) return true;
      seen[p] = 1;
    }
  }
  return false;
}

} // namespace

Mask& MaskSet::add(int id, std::vector<std::uint8_t> pixels, std::optional<std::vector<float>> embedding) {
  Mask m;
  m.id = id;
  m.pixels = std::move(pixels);
  for (auto& v : m.pixels) v = v ? 1 : 0;
  m.embedding = std::move(embedding);
  fill_metadata(m, width);
  masks.push_back(std::move(m));
  return masks.back();
}

void MaskSet::validate() const {
  std::set<int> ids;
  const std::size_t n = static_cast<std::size_t>(height) * width;
  for (const Mask& m : masks) {
    const std::string where = "mask " + std::to_string(m.id);
    if (!ids.insert(m.id).second) throw DataError("mask set: duplicate id " + std::to_string(m.id));
    if (m.pixels.size() != n) throw DataError(where + ": pixel buffer does not match " + std::to_string(height) + "x" +
                                              std::to_string(width));
    const auto popcount = std::count_if(m.pixels.begin(), m.pixels.end(), [](std::uint8_t v) { return v != 0; });
    if (popcount != m.area)
      throw DataError(where + ": area " + std::to_string(m.area) + " != popcount " + std::to_string(popcount));
    if (m.embedding) {
      for (float v : *m.embedding)
        if (!std::isfinite(v)) throw DataError(where + ": non-finite embedding");
    }
  }
}

std::vector<std::size_t> MaskSet::processing_order() const {
  std::vector<std::size_t> order(masks.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (masks[a].area != masks[b].area) return masks[a].area > masks[b].area;
    return masks[a].id < masks[b].id;
  });
  return order;
}

std::vector<int> MaskSet::owners() const {
  std::vector<int> owner(static_cast<std::size_t>(height) * width, -1);
  for (std::size_t m : processing_order()) {
    const auto& px = masks[m].pixels;
    for (std::size_t p = 0; p < owner.size(); ++p)
      if (px[p]) owner[p] = static_cast<int>(m);
  }
  return owner;
}

FeatureMap unify_pixel(const FeatureMap& source, const MaskSet& masks) {
  if (source.height != masks.height || source.width != masks.width)
    throw ContractError("unify: mask set is " + std::to_string(masks.height) + "x" + std::to_string(masks.width) +
                        " but the feature map is " + std::to_string(source.height) + "x" + std::to_string(source.width));
  masks.validate();

  const auto owner = masks.owners();
  const std::size_t c = static_cast<std::size_t>(source.channels);
  std::vector<double> sums(masks.masks.size() * c, 0.0);
  std::vector<std::size_t> counts(masks.masks.size(), 0);
  for (std::size_t p = 0; p < owner.size(); ++p) {
    if (owner[p] < 0 || !source.is_assigned(p)) continue;
    const auto m = static_cast<std::size_t>(owner[p]);
    const auto px = source.pixel(p);
    for (std::size_t k = 0; k < c; ++k) sums[m * c + k] += px[k];
    ++counts[m];
  }

  FeatureMap out = source;
  std::vector<float> mean(c);
  for (std::size_t p = 0; p < owner.size(); ++p) {
    if (owner[p] < 0) continue;
    const auto m = static_cast<std::size_t>(owner[p]);
    if (counts[m] == 0) continue;
    for (std::size_t k = 0; k < c; ++k) mean[k] = static_cast<float>(sums[m * c + k] / static_cast<double>(counts[m]));
    out.set(p, mean);
  }
  return out;
}

FeatureMap unify_embeddings(const MaskSet& masks, UnifyMode mode) {
  if (mode == UnifyMode::pixel) throw ContractError("unify: pixel mode needs a source feature map");
  masks.validate();
  if (masks.masks.empty()) throw ContractError(std::string("unify: ") + mode_name(mode) + " mode needs at least one mask");
  std::size_t c = 0;
  for (const Mask& m : masks.masks) {
    if (!m.embedding)
      throw ContractError(std::string("unify: mask ") + std::to_string(m.id) + " has no embedding (" + mode_name(mode) +
                          " mode)");
    if (c == 0) c = m.embedding->size();
    if (m.embedding->size() != c || c == 0) throw ContractError("unify: masks carry embeddings of different widths");
  }

  FeatureMap out(masks.height, masks.width, static_cast<int>(c));
  const auto owner = masks.owners();
  for (std::size_t p = 0; p < owner.size(); ++p)
    if (owner[p] >= 0) out.set(p, *masks.masks[static_cast<std::size_t>(owner[p])].embedding);
  return out;
}

FeatureMap unify(UnifyMode mode, const MaskSet& masks, const FeatureMap* source) {
  if (mode == UnifyMode::pixel) {
    if (source == nullptr) throw ContractError("unify: pixel mode needs a source feature map");
    return unify_pixel(*source, masks);
  }
  return unify_embeddings(masks, mode);
}

FeatureMap one_hot_ids(const LabelImage& ids, int num_ids) {
  if (num_ids <= 0) throw ContractError("one_hot_ids: num_ids must be positive");
  FeatureMap out(ids.height, ids.width, num_ids);
  for (std::size_t p = 0; p < ids.pixels.size(); ++p) {
    const int id = ids.pixels[p];
    if (id > num_ids) {
      throw DataError("one_hot_ids: id " + std::to_string(id) + " at pixel (" + std::to_string(p % ids.width) + ", " +
                      std::to_string(p / ids.width) + ") exceeds " + std::to_string(num_ids));
    }
    if (id == 0) continue;
    out.data[p * static_cast<std::size_t>(num_ids) + static_cast<std::size_t>(id - 1)] = 1.0f;
    out.assigned[p] = 1;
  }
  return out;
}

MaskSet read_mask_set(const fs::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("cannot open " + json_path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(json_path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw FormatError(json_path.string() + ": mask set must be a JSON array");

  const bool layered = std::any_of(doc.begin(), doc.end(), [](const auto& e) { return e.contains("file"); });
  MaskSet set;
  std::optional<LabelImage> labels;
  if (!layered) {
    fs::path png = json_path;
    png.replace_extension(".png");
    labels = read_png_gray(png);
    set.height = labels->height;
    set.width = labels->width;
  }

  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& e = doc[i];
    const std::string where = json_path.string() + ": entry " + std::to_string(i);
    try {
      const int id = e.at("id").get<int>();
      std::vector<std::uint8_t> pixels;
      if (layered) {
        const LabelImage img = read_png_gray(json_path.parent_path() / e.at("file").get<std::string>());
        if (set.masks.empty()) {
          set.height = img.height;
          set.width = img.width;
        } else if (img.height != set.height || img.width != set.width) {
          throw FormatError(where + ": mask PNG size differs from the first mask");
        }
        pixels.resize(img.pixels.size());
        for (std::size_t p = 0; p < pixels.size(); ++p) pixels[p] = img.pixels[p] ? 1 : 0;
      } else {
        if (id <= 0 || id > 65535) throw FormatError(where + ": label-image ids must be in 1..65535");
        pixels.resize(labels->pixels.size());
        for (std::size_t p = 0; p < pixels.size(); ++p) pixels[p] = labels->pixels[p] == id ? 1 : 0;
      }
      std::optional<std::vector<float>> embedding;
      if (e.contains("embedding") && !e["embedding"].is_null()) embedding = e["embedding"].get<std::vector<float>>();
      Mask& m = set.add(id, std::move(pixels), std::move(embedding));
      if (e.contains("area") && e["area"].get<int>() != m.area)
        throw DataError(where + ": declared area " + std::to_string(e["area"].get<int>()) + " != popcount " +
                        std::to_string(m.area));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(where + ": " + ex.what());
    }
  }
  set.validate();
  return set;
}

void write_mask_set(const MaskSet& set, const fs::path& json_path) {
  set.validate();
  const bool layered = masks_overlap(set);
  nlohmann::json doc = nlohmann::json::array();
  LabelImage labels{set.width, set.height, std::vector<std::uint16_t>(static_cast<std::size_t>(set.width) * set.height, 0)};
  for (const Mask& m : set.masks) {
    nlohmann::json e = {{"id", m.id}, {"area", m.area}, {"bbox", m.bbox}};
    if (m.embedding) e["embedding"] = *m.embedding;
    if (layered) {
      const std::string file = json_path.stem().string() + "_mask" + std::to_string(m.id) + ".png";
      LabelImage img{set.width, set.height, std::vector<std::uint16_t>(m.pixels.begin(), m.pixels.end())};
      write_png_gray16(json_path.parent_path() / file, img);
      e["file"] = file;
    } else {
      if (m.id <= 0 || m.id > 65535) throw ContractError("write_mask_set: ids must be in 1..65535 for a label image");
      for (std::size_t p = 0; p < m.pixels.size(); ++p)
        if (m.pixels[p]) labels.pixels[p] = static_cast<std::uint16_t>(m.id);
    }
    doc.push_back(std::move(e));
  }
  if (!layered) {
    fs::path png = json_path;
    png.replace_extension(".png");
    write_png_gray16(png, labels);
  }
  std::ofstream out(json_path);
  if (!out) throw IoError("cannot open " + json_path.string() + " for writing");
  out << doc.dump(1) << "\n";
  if (!out) throw IoError("write failed: " + json_path.string());
}

} // namespace semgs
