#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lingopt/errors.hpp"

namespace lingopt {

/// Grayscale image, pixels in [0,1], row-major.
struct ImageGrid {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  void validate() const;
  double at(int r, int c) const { return pixels[static_cast<size_t>(r) * width + c]; }
};

/// Binary wire/disk form: "LOPTGRID" magic, u64-LE height, u64-LE width,
/// then height*width f64-LE pixels.
std::vector<std::uint8_t> grid_to_bytes(const ImageGrid& img);
ImageGrid grid_from_bytes(const std::vector<std::uint8_t>& bytes);

void save_grid(const ImageGrid& img, const std::string& path);
ImageGrid load_grid(const std::string& path);

std::string base64_encode(const std::vector<std::uint8_t>& data);
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Convenience round-trips through the binary grid form.
std::string grid_to_base64(const ImageGrid& img);
ImageGrid grid_from_base64(const std::string& b64);

}  // namespace lingopt
