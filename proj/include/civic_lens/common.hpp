#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace civic_lens {

/// Error raised for every contract violation in the pipeline. `kind` is a
/// short machine-readable tag ("parse", "duplicate_id", "missing_artifact", ...)
/// that the CLI copies into its error JSON.
class Error : public std::runtime_error {
 public:
  explicit Error(std::string message, std::string kind = "error")
      : std::runtime_error(std::move(message)), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

enum class Label : std::uint8_t { Poster, ActiveCitizen };
enum class Platform : std::uint8_t { TwitterStyle, WeiboStyle };

std::string_view to_string(Label label);
std::string_view to_string(Platform platform);
Label parse_label(std::string_view text);
Platform parse_platform(std::string_view text);

// Binary target used by every model: POSTER is the positive class.
inline int label_to_int(Label label) { return label == Label::Poster ? 1 : 0; }
inline Label int_to_label(int value) { return value != 0 ? Label::Poster : Label::ActiveCitizen; }

/// Seeded RNG. The engine sequence is fixed by the standard; the derived
/// draws below avoid <random> distributions, whose output is implementation
/// defined, so seeded runs reproduce across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

/// FNV-1a 64-bit; used for config, vocabulary and artifact hashes.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

std::string trim(std::string_view text);
std::vector<std::string> split_whitespace(std::string_view text);
/// Quotes a CSV field when it contains a comma, quote or line break.
std::string csv_field(std::string_view text);

}  // namespace civic_lens
