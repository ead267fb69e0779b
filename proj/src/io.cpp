#include "realanon/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <regex>
#include <sstream>

#include "realanon/errors.hpp"

namespace realanon::io {
namespace {

ImageTensor from_bgr(const cv::Mat& bgr) {
  ImageTensor img(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = row[x][2 - c] / 255.f;
  }
  return img;
}

cv::Mat to_bgr(const ImageTensor& img) {
  cv::Mat bgr(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(y, x, c), 0.f, 1.f);
        row[x][2 - c] = static_cast<std::uint8_t>(std::lround(v * 255.f));
      }
  }
  return bgr;
}

ImageTensor from_any(const cv::Mat& m) {
  if (m.empty()) throw IoError("image could not be decoded");
  cv::Mat bgr;
  if (m.channels() == 1)
    cv::cvtColor(m, bgr, cv::COLOR_GRAY2BGR);
  else if (m.channels() == 4)
    cv::cvtColor(m, bgr, cv::COLOR_BGRA2BGR);
  else
    bgr = m;
  if (bgr.depth() != CV_8U) bgr.convertTo(bgr, CV_8U, bgr.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
  return from_bgr(bgr);
}

}  // namespace

ImageTensor load_image(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw IoError("cannot read image: " + path);
  return from_bgr(m);
}

void save_image(const std::string& path, const ImageTensor& image) {
  if (!cv::imwrite(path, to_bgr(image))) throw IoError("cannot write image: " + path);
}

ImageTensor decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw IoError("empty image payload");
  cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat m;
  try {
    m = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw IoError(std::string("image could not be decoded: ") + e.what());
  }
  return from_any(m);
}

std::vector<std::uint8_t> encode_png(const ImageTensor& image) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", to_bgr(image), out)) throw IoError("png encoding failed");
  return out;
}

BinaryMask load_mask(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError("cannot read mask: " + path);
  BinaryMask mask(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) mask.set(y, x, m.at<std::uint8_t>(y, x) > 127);
  return mask;
}

void save_mask(const std::string& path, const BinaryMask& mask) {
  cv::Mat m(mask.height(), mask.width(), CV_8U);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) m.at<std::uint8_t>(y, x) = mask.at(y, x) ? 255 : 0;
  if (!cv::imwrite(path, m)) throw IoError("cannot write mask: " + path);
}

EmbeddingMap load_npy_embedding(const std::string& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 10 || std::memcmp(bytes.data(), "\x93NUMPY", 6) != 0) throw IoError("not an npy file: " + path);
  const int major = bytes[6];
  std::size_t header_len = 0, offset = 0;
  if (major == 1) {
    header_len = bytes[8] | (bytes[9] << 8);
    offset = 10;
  } else {
    if (bytes.size() < 12) throw IoError("truncated npy header: " + path);
    header_len = bytes[8] | (bytes[9] << 8) | (bytes[10] << 16) | (static_cast<std::size_t>(bytes[11]) << 24);
    offset = 12;
  }
  if (offset + header_len > bytes.size()) throw IoError("truncated npy header: " + path);
  const std::string header(bytes.begin() + offset, bytes.begin() + offset + header_len);
  if (header.find("'<f4'") == std::string::npos) throw IoError("npy: only little-endian float32 is supported");
  if (header.find("'fortran_order': True") != std::string::npos) throw IoError("npy: fortran order unsupported");
  std::smatch sm;
  if (!std::regex_search(header, sm, std::regex(R"(\(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,?\s*\))")))
    throw IoError("npy: expected a 3-d array");
  const int d0 = std::stoi(sm[1]), d1 = std::stoi(sm[2]), d2 = std::stoi(sm[3]);
  const std::size_t n = static_cast<std::size_t>(d0) * d1 * d2;
  const std::size_t data_off = offset + header_len;
  if (bytes.size() < data_off + n * 4) throw IoError("npy: truncated data");
  std::vector<float> raw(n);
  std::memcpy(raw.data(), bytes.data() + data_off, n * 4);
  const bool channels_last = d0 != EmbeddingMap::kDenseChannels && d2 == EmbeddingMap::kDenseChannels;
  if (!channels_last) {
    EmbeddingMap m(d0, d1, d2);
    std::copy(raw.begin(), raw.end(), m.values().begin());
    return m;
  }
  EmbeddingMap m(d2, d0, d1);
  for (int y = 0; y < d0; ++y)
    for (int x = 0; x < d1; ++x)
      for (int c = 0; c < d2; ++c) m.at(c, y, x) = raw[(static_cast<std::size_t>(y) * d1 + x) * d2 + c];
  return m;
}

void save_npy_embedding(const std::string& path, const EmbeddingMap& map) {
  std::ostringstream h;
  h << "{'descr': '<f4', 'fortran_order': False, 'shape': (" << map.channels() << ", " << map.height() << ", "
    << map.width() << "), }";
  std::string header = h.str();
  while ((10 + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::vector<std::uint8_t> out = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  out.push_back(static_cast<std::uint8_t>(header.size() & 0xff));
  out.push_back(static_cast<std::uint8_t>(header.size() >> 8));
  out.insert(out.end(), header.begin(), header.end());
  const auto v = map.values();
  const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
  out.insert(out.end(), p, p + v.size() * 4);
  write_file(path, out);
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kB64[v >> 18];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  if (i + 1 == bytes.size()) {
    const std::uint32_t v = bytes[i] << 16;
    out += kB64[v >> 18];
    out += kB64[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kB64[v >> 18];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+' || c == '-') return 62;
    if (c == '/' || c == '_') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  bool padding = false;
  for (char c : text) {
    if (c == '\n' || c == '\r' || c == ' ') continue;
    if (c == '=') {
      padding = true;
      continue;
    }
    const int v = value(c);
    if (v < 0 || padding) throw IoError("malformed base64 payload");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace realanon::io
