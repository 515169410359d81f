#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cropseg/data.hpp"
#include "cropseg/serialize.hpp"

// Plain PPM/PGM output and the per-scenario prediction mosaic: one row per
// test patch with columns  image (first three time steps as RGB) | label |
// one mask per method.

namespace cropseg {

inline void write_pgm(const fs::path& path, const Tensor<std::uint8_t>& gray) {
  if (gray.rank() != 2) throw ConfigError("write_pgm expects [H,W]");
  std::string header =
      "P5\n" + std::to_string(gray.dim(1)) + " " + std::to_string(gray.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), gray.data(), gray.data() + gray.size());
  write_file_bytes(path, bytes.data(), bytes.size());
}

inline void write_ppm(const fs::path& path, const Tensor<std::uint8_t>& rgb) {
  if (rgb.rank() != 3 || rgb.dim(2) != 3) throw ConfigError("write_ppm expects [H,W,3]");
  std::string header =
      "P6\n" + std::to_string(rgb.dim(1)) + " " + std::to_string(rgb.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), rgb.data(), rgb.data() + rgb.size());
  write_file_bytes(path, bytes.data(), bytes.size());
}

namespace detail {

inline std::uint8_t to_byte(float v) {
  const float s = v * 255.0f;
  return static_cast<std::uint8_t>(s <= 0.0f ? 0 : (s >= 255.0f ? 255 : s + 0.5f));
}

}  // namespace detail

// Named mask columns, one vector of per-patch masks per method.
using MosaicMethods = std::vector<std::pair<std::string, const std::vector<Tensor<std::uint8_t>>*>>;

inline Tensor<std::uint8_t> render_mosaic(const PatchDataset& dataset, const NormStats& stats,
                                          const MosaicMethods& methods, Index max_patches = 8) {
  dataset.validate();
  if (dataset.samples.empty()) throw ConfigError("mosaic: empty dataset");
  for (const auto& [name, masks] : methods) {
    if (!masks || masks->size() != dataset.samples.size())
      throw ConfigError("mosaic: method '" + name + "' mask count does not match dataset");
  }
  const Index rows = std::min<Index>(max_patches, static_cast<Index>(dataset.samples.size()));
  const Index hp = dataset.height, wp = dataset.width;
  const Index gap = 2;
  const Index cols = 2 + static_cast<Index>(methods.size());
  const Index wm = cols * wp + (cols - 1) * gap;
  const Index hm = rows * hp + (rows - 1) * gap;

  Tensor<std::uint8_t> out({hm, wm, 3});
  out.flat().setConstant(96);  // separator gray

  const Index c = dataset.channels, t = dataset.time_steps;
  const Index hw = hp * wp;
  for (Index r = 0; r < rows; ++r) {
    const auto& sample = dataset.samples[static_cast<size_t>(r)];
    const Tensor<float> xn = normalize(sample.x, stats);
    const Index y0 = r * (hp + gap);

    auto paint_gray = [&](Index col, const Tensor<std::uint8_t>& mask) {
      const Index x0 = col * (wp + gap);
      for (Index y = 0; y < hp; ++y)
        for (Index x = 0; x < wp; ++x) {
          const std::uint8_t v = mask.flat()[y * wp + x] ? 255 : 0;
          std::uint8_t* px = out.data() + ((y0 + y) * wm + x0 + x) * 3;
          px[0] = px[1] = px[2] = v;
        }
    };

    // Column 0: first three time steps of feature 0 as an RGB composite.
    for (Index y = 0; y < hp; ++y) {
      for (Index x = 0; x < wp; ++x) {
        std::uint8_t* px = out.data() + ((y0 + y) * wm + x) * 3;
        for (Index ch = 0; ch < 3; ++ch) {
          const Index ti = std::min(ch, t - 1);
          px[ch] = detail::to_byte(xn.data()[(ti * c + 0) * hw + y * wp + x]);
        }
      }
    }
    paint_gray(1, sample.y);
    for (size_t mi = 0; mi < methods.size(); ++mi)
      paint_gray(static_cast<Index>(2 + mi), (*methods[mi].second)[static_cast<size_t>(r)]);
  }
  return out;
}

}  // namespace cropseg
