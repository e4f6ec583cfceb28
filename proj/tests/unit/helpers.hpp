#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("ntkreg_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

// Writes an IDX3 image file and an IDX1 label file.
inline void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                      const std::vector<std::vector<std::uint8_t>>& pixels, const std::vector<std::uint8_t>& digits,
                      std::uint32_t rows, std::uint32_t cols) {
  std::vector<std::uint8_t> img;
  put_be32(img, 0x00000803);
  put_be32(img, static_cast<std::uint32_t>(pixels.size()));
  put_be32(img, rows);
  put_be32(img, cols);
  for (const auto& p : pixels) img.insert(img.end(), p.begin(), p.end());
  write_bytes(images, img);

  std::vector<std::uint8_t> lab;
  put_be32(lab, 0x00000801);
  put_be32(lab, static_cast<std::uint32_t>(digits.size()));
  lab.insert(lab.end(), digits.begin(), digits.end());
  write_bytes(labels, lab);
}

}  // namespace testing
