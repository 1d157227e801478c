#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace semiroute {

/// 64-bit FNV-1a, continuable through `state`.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t state = 0xcbf29ce484222325ULL);

/// splitmix64 finalizer; a bijective avalanche over 64 bits.
std::uint64_t mix64(std::uint64_t x);

std::string hex64(std::uint64_t value);

/// Platform-independent seeded generator. std::shuffle and the standard
/// distributions are implementation-defined, so sampling goes through here.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  /// Uniform double in [0, 1).
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Lines without terminators; a trailing CR is stripped. A final newline does
/// not produce an extra empty line.
std::vector<std::string> read_lines(const std::filesystem::path& path);
std::vector<std::string> split_lines(std::string_view text);

namespace text {

std::u32string decode_utf8(std::string_view utf8);
std::string encode_utf8(std::u32string_view code_points);

bool is_space(char32_t c);
bool is_upper(char32_t c);
bool is_digit(char32_t c);
bool is_punct(char32_t c);
bool is_opening_quote(char32_t c);

/// Canonical composition (NFC).
std::string nfc(std::string_view utf8);

/// Split on runs of Unicode whitespace.
std::vector<std::string> split_whitespace(std::string_view utf8);

}  // namespace text
}  // namespace semiroute
