#pragma once

// Minimal file IO for results: 16-bit grayscale PNG for slice images and raw
// float32 tensors with a small text sidecar for volumes.

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "drift/tensor.hpp"

namespace drift {

namespace detail {

inline void be32(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>(v >> 24));
  s.push_back(static_cast<char>(v >> 16));
  s.push_back(static_cast<char>(v >> 8));
  s.push_back(static_cast<char>(v));
}

inline void png_chunk(std::ofstream& out, const char type[5], const std::string& data) {
  std::string head;
  be32(head, static_cast<uint32_t>(data.size()));
  head.append(type, 4);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  uint32_t crc = static_cast<uint32_t>(crc32(0L, Z_NULL, 0));
  crc = static_cast<uint32_t>(
      crc32(crc, reinterpret_cast<const Bytef*>(type), 4));
  crc = static_cast<uint32_t>(crc32(crc, reinterpret_cast<const Bytef*>(data.data()),
                                    static_cast<uInt>(data.size())));
  std::string tail;
  be32(tail, crc);
  out.write(tail.data(), static_cast<std::streamsize>(tail.size()));
}

inline int paeth(int a, int b, int c) {
  int p = a + b - c, pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  return pb <= pc ? b : c;
}

}  // namespace detail

// clamp to [0,1] and write one channel as 16-bit grayscale
inline void write_png16(const std::string& path, const Tensor& img) {
  if (img.rank() != 2 && !(img.rank() == 3 && img.dim(0) == 1))
    op_error("write_png16", "expected [H,W] or [1,H,W], got " + shape_str(img.shape()));
  int H = static_cast<int>(img.dim(img.rank() - 2));
  int W = static_cast<int>(img.dim(img.rank() - 1));

  std::string raw;
  raw.reserve(static_cast<size_t>(H) * (1 + 2 * static_cast<size_t>(W)));
  const auto& v = img.value();
  for (int y = 0; y < H; ++y) {
    raw.push_back('\0');  // per-row filter: none
    for (int x = 0; x < W; ++x) {
      double d = v[static_cast<size_t>(y) * W + x];
      d = std::min(1.0, std::max(0.0, d));
      auto q = static_cast<uint32_t>(std::lround(d * 65535.0));
      raw.push_back(static_cast<char>(q >> 8));
      raw.push_back(static_cast<char>(q & 0xff));
    }
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::string z(zlen, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &zlen,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                6) != Z_OK)
    throw std::runtime_error("write_png16: compression failed");
  z.resize(zlen);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_png16: cannot open " + path);
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  out.write(reinterpret_cast<const char*>(sig), 8);
  std::string ihdr;
  detail::be32(ihdr, static_cast<uint32_t>(W));
  detail::be32(ihdr, static_cast<uint32_t>(H));
  ihdr.push_back(16);  // bit depth
  ihdr.push_back(0);   // grayscale
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", z);
  detail::png_chunk(out, "IEND", "");
  if (!out) throw std::runtime_error("write_png16: write failed for " + path);
}

// reads 16-bit grayscale PNGs (the format write_png16 emits); values in [0,1]
inline Tensor read_png16(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_png16: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0)
    throw std::runtime_error("read_png16: not a png: " + path);

  auto u32 = [&](size_t off) {
    return (static_cast<uint32_t>(static_cast<unsigned char>(bytes[off])) << 24) |
           (static_cast<uint32_t>(static_cast<unsigned char>(bytes[off + 1])) << 16) |
           (static_cast<uint32_t>(static_cast<unsigned char>(bytes[off + 2])) << 8) |
           static_cast<uint32_t>(static_cast<unsigned char>(bytes[off + 3]));
  };

  int W = 0, H = 0;
  std::string idat;
  size_t pos = 8;
  while (pos + 8 <= bytes.size()) {
    uint32_t len = u32(pos);
    std::string type = bytes.substr(pos + 4, 4);
    if (pos + 8 + len > bytes.size()) throw std::runtime_error("read_png16: truncated chunk");
    if (type == "IHDR") {
      W = static_cast<int>(u32(pos + 8));
      H = static_cast<int>(u32(pos + 12));
      int depth = static_cast<unsigned char>(bytes[pos + 16]);
      int color = static_cast<unsigned char>(bytes[pos + 17]);
      if (depth != 16 || color != 0)
        throw std::runtime_error("read_png16: only 16-bit grayscale is supported");
    } else if (type == "IDAT") {
      idat += bytes.substr(pos + 8, len);
    } else if (type == "IEND") {
      break;
    }
    pos += 12 + len;
  }
  if (W <= 0 || H <= 0 || idat.empty()) throw std::runtime_error("read_png16: missing data");

  size_t stride = 1 + 2 * static_cast<size_t>(W);
  std::string raw(static_cast<size_t>(H) * stride, '\0');
  uLongf rlen = static_cast<uLongf>(raw.size());
  if (uncompress(reinterpret_cast<Bytef*>(raw.data()), &rlen,
                 reinterpret_cast<const Bytef*>(idat.data()),
                 static_cast<uLong>(idat.size())) != Z_OK ||
      rlen != raw.size())
    throw std::runtime_error("read_png16: decompression failed");

  // undo per-row byte filters
  const int bpp = 2;
  std::vector<unsigned char> prev(2 * static_cast<size_t>(W), 0);
  std::vector<double> out(static_cast<size_t>(H) * W);
  for (int y = 0; y < H; ++y) {
    int filter = static_cast<unsigned char>(raw[static_cast<size_t>(y) * stride]);
    std::vector<unsigned char> row(2 * static_cast<size_t>(W));
    for (size_t i = 0; i < row.size(); ++i) {
      int cur = static_cast<unsigned char>(raw[static_cast<size_t>(y) * stride + 1 + i]);
      int left = i >= static_cast<size_t>(bpp) ? row[i - bpp] : 0;
      int up = prev[i];
      int ul = i >= static_cast<size_t>(bpp) ? prev[i - bpp] : 0;
      int rec;
      switch (filter) {
        case 0: rec = cur; break;
        case 1: rec = cur + left; break;
        case 2: rec = cur + up; break;
        case 3: rec = cur + (left + up) / 2; break;
        case 4: rec = cur + detail::paeth(left, up, ul); break;
        default: throw std::runtime_error("read_png16: unknown filter");
      }
      row[i] = static_cast<unsigned char>(rec & 0xff);
    }
    for (int x = 0; x < W; ++x) {
      uint32_t q = (static_cast<uint32_t>(row[2 * static_cast<size_t>(x)]) << 8) |
                   row[2 * static_cast<size_t>(x) + 1];
      out[static_cast<size_t>(y) * W + x] = q / 65535.0;
    }
    prev = row;
  }
  return Tensor({H, W}, std::move(out));
}

// a displayable single-channel view: [H,W] and [1,H,W] pass through, [2,H,W]
// collapses to the complex magnitude
inline Tensor magnitude_image(const Tensor& x) {
  if (x.rank() == 2) return x.detach();
  if (x.rank() == 3 && x.dim(0) == 1) return reshape(x, {x.dim(1), x.dim(2)});
  if (x.rank() == 3 && x.dim(0) == 2) {
    int64_t n = x.dim(1) * x.dim(2);
    std::vector<double> m(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
      m[static_cast<size_t>(i)] = std::hypot(x.value()[static_cast<size_t>(i)],
                                             x.value()[static_cast<size_t>(i + n)]);
    return Tensor({x.dim(1), x.dim(2)}, std::move(m));
  }
  op_error("magnitude_image", "expected [H,W], [1,H,W] or [2,H,W], got " + shape_str(x.shape()));
}

// ---- raw tensors ---------------------------------------------------------------

inline void write_tensor(const std::string& path, const Tensor& x) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_tensor: cannot open " + path);
  std::vector<float> buf(x.value().size());
  for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(x.value()[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  std::ofstream meta(path + ".meta");
  meta << "dtype=float32\n";
  meta << "shape=";
  for (size_t i = 0; i < x.shape().size(); ++i) meta << (i ? "," : "") << x.shape()[i];
  meta << "\n";
  if (!out || !meta) throw std::runtime_error("write_tensor: write failed for " + path);
}

inline Tensor read_tensor(const std::string& path) {
  std::ifstream meta(path + ".meta");
  if (!meta) throw std::runtime_error("read_tensor: missing sidecar for " + path);
  Shape shape;
  std::string line;
  while (std::getline(meta, line)) {
    if (line.rfind("shape=", 0) == 0) {
      std::stringstream ss(line.substr(6));
      std::string tok;
      while (std::getline(ss, tok, ',')) shape.push_back(std::stoll(tok));
    } else if (line.rfind("dtype=", 0) == 0 && line != "dtype=float32") {
      throw std::runtime_error("read_tensor: unsupported " + line);
    }
  }
  if (shape.empty()) throw std::runtime_error("read_tensor: sidecar lacks a shape");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_tensor: cannot open " + path);
  std::vector<float> buf(static_cast<size_t>(shape_numel(shape)));
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
    throw std::runtime_error("read_tensor: short read from " + path);
  std::vector<double> v(buf.begin(), buf.end());
  return Tensor(shape, std::move(v));
}

}  // namespace drift
