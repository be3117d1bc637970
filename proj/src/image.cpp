#include "tela/image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "tela/errors.hpp"

namespace tela {

double GrayImage::mean() const {
  double s = 0;
  for (double v : data) s += v;
  return data.empty() ? 0.0 : s / static_cast<double>(data.size());
}

uint8_t quantize_u8(double v) {
  double c = clamp01(v);
  double q = std::floor(c * 255.0 + 0.5);
  return static_cast<uint8_t>(std::min(q, 255.0));
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      Vec3 c = img.get(x, y);
      row[x * 3 + 0] = quantize_u8(c.x);
      row[x * 3 + 1] = quantize_u8(c.y);
      row[x * 3 + 2] = quantize_u8(c.z);
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("write failed: " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw IoError("not a P6 PPM: " + path);
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported PPM header: " + path);
  in.get();  // single whitespace after maxval
  std::vector<uint8_t> bytes(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<size_t>(in.gcount()) != bytes.size()) throw IoError("truncated PPM: " + path);
  Image img(w, h);
  for (size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

namespace {

void png_chunk(std::ostream& out, const char type[4], const uint8_t* payload, size_t n) {
  auto be32 = [&](uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v >> 24), static_cast<uint8_t>(v >> 16),
                    static_cast<uint8_t>(v >> 8), static_cast<uint8_t>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  be32(static_cast<uint32_t>(n));
  out.write(type, 4);
  if (n) out.write(reinterpret_cast<const char*>(payload), static_cast<std::streamsize>(n));
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (n) crc = crc32(crc, payload, static_cast<uInt>(n));
  be32(static_cast<uint32_t>(crc));
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);

  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  out.write(reinterpret_cast<const char*>(sig), 8);

  uint8_t ihdr[13];
  auto put32 = [&](uint8_t* p, uint32_t v) {
    p[0] = static_cast<uint8_t>(v >> 24);
    p[1] = static_cast<uint8_t>(v >> 16);
    p[2] = static_cast<uint8_t>(v >> 8);
    p[3] = static_cast<uint8_t>(v);
  };
  put32(ihdr, static_cast<uint32_t>(img.width));
  put32(ihdr + 4, static_cast<uint32_t>(img.height));
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // truecolor
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  png_chunk(out, "IHDR", ihdr, 13);

  // one filter byte (0 = none) per scanline
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(img.height) * (1 + static_cast<size_t>(img.width) * 3));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    for (int x = 0; x < img.width; ++x) {
      Vec3 c = img.get(x, y);
      raw.push_back(quantize_u8(c.x));
      raw.push_back(quantize_u8(c.y));
      raw.push_back(quantize_u8(c.z));
    }
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("deflate failed: " + path);
  png_chunk(out, "IDAT", comp.data(), comp_len);
  png_chunk(out, "IEND", nullptr, 0);
  if (!out) throw IoError("write failed: " + path);
}

void write_image(const std::string& path, const Image& img, ImageFormat format) {
  if (format == ImageFormat::kPng)
    write_png(path, img);
  else
    write_ppm(path, img);
}

void write_image_auto(const std::string& path, const Image& img) {
  bool png = path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0;
  write_image(path, img, png ? ImageFormat::kPng : ImageFormat::kPpm);
}

double image_max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_shape(b)) return std::numeric_limits<double>::infinity();
  double m = 0;
  for (size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

double image_psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b) || a.data.empty()) return 0.0;
  double mse = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.data.size());
  if (mse <= 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

}  // namespace tela

namespace tela {

Image resize_bilinear(const Image& img, int width, int height) {
  if (width < 1 || height < 1) throw IoError("resize_bilinear: bad target size");
  if (img.width == width && img.height == height) return img;
  Image out(width, height);
  double sx = double(img.width) / width;
  double sy = double(img.height) / height;
  for (int y = 0; y < height; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double ty = fy - y0;
    int ya = std::clamp(y0, 0, img.height - 1);
    int yb = std::clamp(y0 + 1, 0, img.height - 1);
    for (int x = 0; x < width; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double tx = fx - x0;
      int xa = std::clamp(x0, 0, img.width - 1);
      int xb = std::clamp(x0 + 1, 0, img.width - 1);
      Vec3 c = img.get(xa, ya) * ((1 - tx) * (1 - ty)) + img.get(xb, ya) * (tx * (1 - ty)) +
               img.get(xa, yb) * ((1 - tx) * ty) + img.get(xb, yb) * (tx * ty);
      out.set(x, y, c);
    }
  }
  return out;
}

}  // namespace tela
