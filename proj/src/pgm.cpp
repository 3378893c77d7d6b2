#include "inatlas/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "inatlas/errors.hpp"

namespace inatlas::pgm {

namespace {

void write_pgm(const std::vector<std::uint8_t>& pixels, int width, int height,
               const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("pgm: cannot open " + path);
  f << "P5\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!f) throw IoError("pgm: short write to " + path);
}

std::uint8_t quantize(float v) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

void export_mid_slices(const Volume& v, int channel, const std::string& prefix) {
  if (channel < 0 || channel >= v.channels) throw ShapeError("pgm: channel out of range");
  const int nx = v.dims[0], ny = v.dims[1], nz = v.dims[2];

  // Axial: z fixed, image is (x, y).
  {
    const int z = nz / 2;
    std::vector<std::uint8_t> px(static_cast<std::size_t>(nx) * ny);
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) px[static_cast<std::size_t>(y) * nx + x] = quantize(v.at(channel, x, y, z));
    write_pgm(px, nx, ny, prefix + "_axial.pgm");
  }
  // Coronal: y fixed, image is (x, z).
  {
    const int y = ny / 2;
    std::vector<std::uint8_t> px(static_cast<std::size_t>(nx) * nz);
    for (int z = 0; z < nz; ++z)
      for (int x = 0; x < nx; ++x) px[static_cast<std::size_t>(z) * nx + x] = quantize(v.at(channel, x, y, z));
    write_pgm(px, nx, nz, prefix + "_coronal.pgm");
  }
  // Sagittal: x fixed, image is (y, z).
  {
    const int x = nx / 2;
    std::vector<std::uint8_t> px(static_cast<std::size_t>(ny) * nz);
    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < ny; ++y) px[static_cast<std::size_t>(z) * ny + y] = quantize(v.at(channel, x, y, z));
    write_pgm(px, ny, nz, prefix + "_sagittal.pgm");
  }
}

}  // namespace inatlas::pgm
