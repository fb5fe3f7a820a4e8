#pragma once

#include <cctype>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "lanepilot/common/error.hpp"
#include "lanepilot/sim/render.hpp"

namespace lanepilot::dataset {

// Binary PGM (P5, maxval 255).
inline std::string encode_pgm(const sim::CameraFrame& f) {
  std::string out = "P5\n" + std::to_string(f.width) + " " + std::to_string(f.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(f.pixels.data()), f.pixels.size());
  return out;
}

inline sim::CameraFrame decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> std::size_t {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      throw FormatError("PGM: malformed header");
    }
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
    }
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("PGM: expected P5 magic");
  pos = 2;
  sim::CameraFrame f;
  f.width = read_uint();
  f.height = read_uint();
  const std::size_t maxval = read_uint();
  if (maxval != 255) throw FormatError("PGM: only maxval 255 is supported");
  if (f.width == 0 || f.height == 0) throw FormatError("PGM: zero dimension");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("PGM: malformed header");
  }
  ++pos;
  const std::size_t n = f.width * f.height;
  if (bytes.size() - pos < n) throw TruncatedError("PGM: truncated pixel data");
  f.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                  bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return f;
}

inline void write_pgm(const std::filesystem::path& path, const sim::CameraFrame& f) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const auto bytes = encode_pgm(f);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline sim::CameraFrame read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing frame file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pgm(bytes);
}

}  // namespace lanepilot::dataset
