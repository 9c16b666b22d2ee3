#include "xfer/io.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "xfer/error.hpp"

namespace xfer::io {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";  // folds -0 into 0
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

std::string pgm_string(std::span<const double> values, std::size_t width, std::size_t height) {
  require(width > 0 && height > 0 && values.size() == width * height, "write_pgm: values do not match the image size");
  for (double v : values) require(std::isfinite(v), "write_pgm: values must be finite");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  std::string out = "P2\n" + std::to_string(width) + ' ' + std::to_string(height) + "\n255\n";
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      int pixel = 128;
      if (hi > lo) {
        const double scaled = (values[y * width + x] - lo) / (hi - lo) * 255.0;
        pixel = std::clamp(static_cast<int>(std::floor(scaled + 0.5)), 0, 255);
      }
      if (x) out += ' ';
      out += std::to_string(pixel);
    }
    out += '\n';
  }
  return out;
}

void write_pgm(std::span<const double> values, std::size_t width, std::size_t height,
               const std::filesystem::path& path) {
  write_text(path, pgm_string(values, width, height));
}

std::string trajectories_jsonl(std::span<const mdp::Trajectory> trajectories) {
  std::string out;
  for (const auto& t : trajectories) {
    nlohmann::json j = {{"states", t.states}, {"actions", t.actions}};
    out += j.dump() + '\n';
  }
  return out;
}

std::vector<mdp::Trajectory> parse_trajectories_jsonl(const std::string& text) {
  std::vector<mdp::Trajectory> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    mdp::Trajectory t;
    t.states = j.at("states").get<std::vector<std::size_t>>();
    t.actions = j.at("actions").get<std::vector<std::size_t>>();
    out.push_back(std::move(t));
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), digest);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char b : digest) {
    out += hex[b >> 4];
    out += hex[b & 0xf];
  }
  return out;
}

}  // namespace xfer::io
