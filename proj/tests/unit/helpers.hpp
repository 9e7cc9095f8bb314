#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "disagree/trace.hpp"

namespace testing {

/// Fresh scratch directory under the build tree, removed first if present.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("disagree_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Trace from a flat [E][N][M] correctness array; wrong predictions use label+1.
inline disagree::EnsembleTrace trace_from_bits(int e, int n, const std::vector<int>& labels, int classes,
                                               const std::vector<int>& bits) {
  disagree::EnsembleTrace t(e, n, labels, classes, false);
  const int m = static_cast<int>(labels.size());
  for (int a = 0; a < e; ++a)
    for (int i = 0; i < n; ++i)
      for (int x = 0; x < m; ++x) {
        const bool ok = bits[(a * n + i) * m + x] != 0;
        t.set_prediction(a, i, x, ok ? labels[x] : (labels[x] + 1) % classes);
      }
  return t;
}

/// Bitwise CRC-32 (IEEE, reflected), independent of zlib.
inline std::uint32_t crc32_bitwise(const std::uint8_t* data, std::size_t n) {
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t k = 0; k < n; ++k) {
    c ^= data[k];
    for (int b = 0; b < 8; ++b) c = (c >> 1) ^ (0xEDB88320u & (0u - (c & 1u)));
  }
  return c ^ 0xFFFFFFFFu;
}

}  // namespace testing
