#include "plenocal/image.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "plenocal/errors.hpp"

namespace plenocal {

namespace {

int read_header_int(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (c != EOF && std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
  int v = -1;
  if (!(in >> v)) throw Error(ErrorKind::InvalidInput, "malformed PGM header");
  return v;
}

}  // namespace

Raster16 read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::InvalidInput, "cannot open " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5") throw Error(ErrorKind::InvalidInput, path + " is not a binary PGM");
  const int w = read_header_int(in);
  const int h = read_header_int(in);
  const int maxval = read_header_int(in);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw Error(ErrorKind::InvalidInput, "unsupported PGM dimensions in " + path);
  }
  in.get();  // single whitespace before the raster

  Raster16 img(w, h, maxval);
  const std::size_t n = img.pixels.size();
  if (maxval < 256) {
    std::vector<unsigned char> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    if (!in) throw Error(ErrorKind::InvalidInput, "truncated PGM " + path);
    for (std::size_t k = 0; k < n; ++k) img.pixels[k] = buf[k];
  } else {
    std::vector<unsigned char> buf(2 * n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(2 * n));
    if (!in) throw Error(ErrorKind::InvalidInput, "truncated PGM " + path);
    for (std::size_t k = 0; k < n; ++k) {
      img.pixels[k] = static_cast<std::uint16_t>((buf[2 * k] << 8) | buf[2 * k + 1]);
    }
  }
  return img;
}

void write_pgm(const std::string& path, const Raster16& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::InvalidInput, "cannot write " + path);
  const int maxval = image.max_value > 255 ? image.max_value : 255;
  out << "P5\n" << image.width << " " << image.height << "\n" << maxval << "\n";
  if (maxval < 256) {
    std::vector<unsigned char> buf(image.pixels.size());
    for (std::size_t k = 0; k < buf.size(); ++k) {
      buf[k] = static_cast<unsigned char>(std::min<int>(image.pixels[k], 255));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  } else {
    std::vector<unsigned char> buf(2 * image.pixels.size());
    for (std::size_t k = 0; k < image.pixels.size(); ++k) {
      buf[2 * k] = static_cast<unsigned char>(image.pixels[k] >> 8);
      buf[2 * k + 1] = static_cast<unsigned char>(image.pixels[k] & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw Error(ErrorKind::InvalidInput, "failed writing " + path);
}

}  // namespace plenocal
