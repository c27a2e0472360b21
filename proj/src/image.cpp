#include "lingopt/image.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace lingopt {

namespace {

constexpr char kMagic[8] = {'L', 'O', 'P', 'T', 'G', 'R', 'I', 'D'};

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  }
  return v;
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

double get_f64(const std::uint8_t* p) {
  std::uint64_t bits = get_u64(p);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

}  // namespace

void ImageGrid::validate() const {
  if (height <= 0 || width <= 0) {
    throw PreconditionError("image: dimensions must be positive, got " +
                            std::to_string(height) + "x" + std::to_string(width));
  }
  if (pixels.size() != static_cast<size_t>(height) * static_cast<size_t>(width)) {
    throw ShapeError("image: pixel count " + std::to_string(pixels.size()) +
                     " != " + std::to_string(height) + "*" + std::to_string(width));
  }
  for (double p : pixels) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw PreconditionError("image: pixel value " + std::to_string(p) +
                              " outside [0,1]");
    }
  }
}

std::vector<std::uint8_t> grid_to_bytes(const ImageGrid& img) {
  img.validate();
  std::vector<std::uint8_t> out;
  out.reserve(24 + img.pixels.size() * 8);
  out.insert(out.end(), kMagic, kMagic + 8);
  put_u64(out, static_cast<std::uint64_t>(img.height));
  put_u64(out, static_cast<std::uint64_t>(img.width));
  for (double p : img.pixels) put_f64(out, p);
  return out;
}

ImageGrid grid_from_bytes(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 24 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw LoadError("image: missing LOPTGRID header");
  }
  ImageGrid img;
  img.height = static_cast<int>(get_u64(bytes.data() + 8));
  img.width = static_cast<int>(get_u64(bytes.data() + 16));
  const size_t n = static_cast<size_t>(img.height) * static_cast<size_t>(img.width);
  if (bytes.size() != 24 + n * 8) {
    throw LoadError("image: payload size " + std::to_string(bytes.size()) +
                    " does not match " + std::to_string(img.height) + "x" +
                    std::to_string(img.width));
  }
  img.pixels.resize(n);
  for (size_t i = 0; i < n; ++i) {
    img.pixels[i] = get_f64(bytes.data() + 24 + i * 8);
  }
  img.validate();
  return img;
}

void save_grid(const ImageGrid& img, const std::string& path) {
  const auto bytes = grid_to_bytes(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw LoadError("image: cannot open '" + path + "' for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

ImageGrid load_grid(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw LoadError("image: cannot open '" + path + "'");
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return grid_from_bytes(bytes);
}

std::string base64_encode(const std::vector<std::uint8_t>& data) {
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 3 <= data.size(); i += 3) {
    const std::uint32_t n = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
    out.push_back(kB64[(n >> 18) & 63]);
    out.push_back(kB64[(n >> 12) & 63]);
    out.push_back(kB64[(n >> 6) & 63]);
    out.push_back(kB64[n & 63]);
  }
  const size_t rem = data.size() - i;
  if (rem == 1) {
    const std::uint32_t n = data[i] << 16;
    out.push_back(kB64[(n >> 18) & 63]);
    out.push_back(kB64[(n >> 12) & 63]);
    out += "==";
  } else if (rem == 2) {
    const std::uint32_t n = (data[i] << 16) | (data[i + 1] << 8);
    out.push_back(kB64[(n >> 18) & 63]);
    out.push_back(kB64[(n >> 12) & 63]);
    out.push_back(kB64[(n >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  auto value_of = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  std::uint32_t buf = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = value_of(c);
    if (v < 0) {
      throw LoadError(std::string("base64: invalid character '") + c + "'");
    }
    buf = (buf << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((buf >> bits) & 0xFF));
    }
  }
  return out;
}

std::string grid_to_base64(const ImageGrid& img) { return base64_encode(grid_to_bytes(img)); }

ImageGrid grid_from_base64(const std::string& b64) {
  return grid_from_bytes(base64_decode(b64));
}

}  // namespace lingopt
