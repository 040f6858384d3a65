#pragma once

// Arithmetic coding of categorical streams under causal predictive models.
//
// Coder: bit-oriented (Witten-Neal-Cleary style) with 62-bit registers and a
// P-bit frequency table per symbol. Payload length stays within
// sum -log2 q_t(s_t) + 2 bits of the quantized ideal.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "preq/predictor.hpp"
#include "preq/preq_eval.hpp"
#include "preq/tasks.hpp"

namespace preq::codec {

inline constexpr int kDefaultPrecision = 16;
inline constexpr std::uint16_t kFormatVersion = 1;
// version (16) + symbol count (48) + precision (8) + payload bit length (64)
inline constexpr int kHeaderBits = 136;

struct SymbolDistribution {
  int precision = kDefaultPrecision;
  std::vector<std::uint32_t> freq;
  std::vector<std::uint64_t> cum;  // size K + 1, cum[K] = 2^precision

  [[nodiscard]] std::size_t size() const { return freq.size(); }
  [[nodiscard]] std::uint64_t total() const { return std::uint64_t{1} << precision; }
  [[nodiscard]] double prob(std::size_t s) const {
    return static_cast<double>(freq.at(s)) / static_cast<double>(total());
  }
};

// Floor, raise zeros to 1, then hand the remainder to the largest fractional parts
// (or take the excess from the largest frequencies).
SymbolDistribution quantize(std::span<const double> probs, int precision = kDefaultPrecision);

// log2(p / q) for one symbol: the cost of quantization (negative when q > p).
double quantization_penalty(double p, const SymbolDistribution& q, std::size_t symbol);

struct BitStream {
  std::vector<std::uint8_t> bytes;  // MSB first
  std::uint64_t length = 0;

  void push(bool bit);
  [[nodiscard]] bool get(std::uint64_t i) const;
  bool operator==(const BitStream&) const = default;
};

class Encoder {
 public:
  Encoder();
  void encode(std::size_t symbol, const SymbolDistribution& dist);
  BitStream finish();

 private:
  void emit(bool bit);
  std::uint64_t low_, high_;
  std::uint64_t pending_ = 0;
  BitStream out_;
  bool done_ = false;
};

class Decoder {
 public:
  explicit Decoder(const BitStream& bits);
  std::size_t decode(const SymbolDistribution& dist);

 private:
  bool next_bit();
  const BitStream& bits_;
  std::uint64_t low_, high_, value_ = 0;
  std::uint64_t cursor_ = 0;
};

// Distributions are requested one symbol at a time from the decoded/encoded
// prefix, so a model cannot look ahead.
class CausalModel {
 public:
  virtual ~CausalModel() = default;
  virtual std::vector<double> next_distribution(std::span<const int> prefix) = 0;
};

struct EncodeResult {
  BitStream bits;
  double ideal_bits = 0.0;            // sum -log2 p_t(s_t)
  double quantized_ideal_bits = 0.0;  // sum -log2 q_t(s_t)
  double max_penalty = 0.0;           // max_t log2(p_t / q_t), floored at 0
  double total_penalty = 0.0;         // sum_t log2(p_t / q_t)
};

EncodeResult encode(std::span<const int> symbols, CausalModel& model,
                    int precision = kDefaultPrecision);
std::vector<int> decode(const BitStream& bits, CausalModel& model, std::size_t n_symbols,
                        int precision = kDefaultPrecision);

double ideal_length(std::span<const std::vector<double>> distributions, std::span<const int> symbols);
double ideal_length(CausalModel& model, std::span<const int> symbols);

// Container: header (version, count, precision, payload bits) then payload bytes.
void write_stream(std::ostream& out, const BitStream& bits, std::uint64_t n_symbols, int precision);
struct StoredStream {
  BitStream bits;
  std::uint64_t n_symbols = 0;
  int precision = kDefaultPrecision;
};
StoredStream read_stream(std::istream& in);

// Episode labels as a symbol stream: point t contributes its labels in order,
// coded under the predictor's distribution given points < t and x_t.
class EpisodeModel : public CausalModel {
 public:
  EpisodeModel(const Predictor& predictor, Episode shape);
  std::vector<double> next_distribution(std::span<const int> prefix) override;

 private:
  const Predictor& predictor_;
  Episode episode_;
  int n_labels_;
  std::size_t cached_point_ = static_cast<std::size_t>(-1);
  Prediction cached_;
};

std::vector<int> episode_symbols(const Episode& episode);

struct CompressedEpisode {
  EncodeResult encoded;
  CodeLengthReport report;  // per-symbol ideal bits under the unquantized predictor
  std::size_t n_symbols = 0;
};

CompressedEpisode compress_episode(const Predictor& predictor, const Episode& episode,
                                   int precision = kDefaultPrecision);
// `shape` supplies the inputs x_t and the spec; its labels are ignored.
Episode decompress_episode(const Predictor& predictor, const BitStream& bits, const Episode& shape,
                           int precision = kDefaultPrecision);

}  // namespace preq::codec
