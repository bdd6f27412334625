#include "flowsan/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace flowsan {

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  for (float v : image.pixels) {
    const auto byte = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    out.put(static_cast<char>(byte));
  }
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read image " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P2") throw IoError(path.string() + " is not a PGM file");
  auto next_int = [&in, &path]() {
    int v = 0;
    while (in >> std::ws && in.peek() == '#') {
      std::string skip;
      std::getline(in, skip);
    }
    if (!(in >> v)) throw IoError("malformed PGM header in " + path.string());
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw IoError("bad PGM dimensions in " + path.string());
  Image img(h, w);
  if (magic == "P2") {
    for (float& v : img.pixels) v = static_cast<float>(next_int()) / static_cast<float>(maxval);
    return img;
  }
  in.get();
  const int bytes = maxval < 256 ? 1 : 2;
  for (float& v : img.pixels) {
    int value = 0;
    for (int b = 0; b < bytes; ++b) {
      const int c = in.get();
      if (c == EOF) throw IoError("truncated PGM data in " + path.string());
      value = (value << 8) | c;
    }
    v = static_cast<float>(value) / static_cast<float>(maxval);
  }
  return img;
}

Image tile_horizontal(const std::vector<Image>& panels, float gutter) {
  if (panels.empty()) throw ShapeError("tile_horizontal: no panels");
  const int h = panels.front().height, w = panels.front().width;
  const int n = static_cast<int>(panels.size());
  Image out(h, n * w + (n - 1), gutter);
  for (int p = 0; p < n; ++p) {
    require_same_size(panels.front(), panels[static_cast<std::size_t>(p)], "tile_horizontal");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(y, p * (w + 1) + x) = panels[static_cast<std::size_t>(p)].at(y, x);
  }
  return out;
}

}  // namespace flowsan
