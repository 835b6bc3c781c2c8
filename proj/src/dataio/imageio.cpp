#include "dataio/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "core/error.hpp"

namespace avloc::dataio {

namespace {

unsigned char quantize(double v) {
  const double c = std::min(1.0, std::max(0.0, v));
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

int read_pnm_token(std::istream& in) {
  // skips whitespace and '#' comments
  while (true) {
    int ch = in.peek();
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(ch)) {
      in.get();
    } else {
      break;
    }
  }
  int v = 0;
  if (!(in >> v)) throw IoError("truncated PNM header");
  return v;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& img) {
  if (img.ndim() != 3 || img.dim(0) != 3) throw ValidationError("write_ppm expects (3,H,W)");
  const int h = img.dim(1), w = img.dim(2);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image: " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<std::size_t>(x) * 3 + c] = quantize(img.at(c, y, x));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("short write: " + path);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw IoError("unsupported image format (want binary PPM): " + path);
  const int w = read_pnm_token(in);
  const int h = read_pnm_token(in);
  const int maxval = read_pnm_token(in);
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported PPM header: " + path);
  in.get();  // single whitespace after header
  Tensor img({3, h, w});
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!in) throw IoError("truncated image data: " + path);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0;
  }
  return img;
}

void write_pgm(const std::string& path, const Tensor& gray) {
  if (gray.ndim() != 2) throw ValidationError("write_pgm expects (H,W)");
  const int h = gray.dim(0), w = gray.dim(1);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write image: " + path);
  out << "P5\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) row[static_cast<std::size_t>(x)] = quantize(gray.at(y, x));
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("short write: " + path);
}

Tensor bilinear_resize_chw(const Tensor& img, int out_h, int out_w) {
  if (img.ndim() != 3) throw ValidationError("bilinear_resize_chw expects (C,H,W)");
  if (out_h < 1 || out_w < 1) throw ValidationError("resize target must be positive");
  const int C = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out({C, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < C; ++c)
        out.at(c, y, x) = (1 - wy) * ((1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1)) +
                          wy * ((1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1));
    }
  }
  return out;
}

}  // namespace avloc::dataio
