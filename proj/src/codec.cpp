#include "preq/codec.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace preq::codec {

namespace {

constexpr int kCodeBits = 62;
constexpr std::uint64_t kTop = (std::uint64_t{1} << kCodeBits) - 1;
constexpr std::uint64_t kHalf = std::uint64_t{1} << (kCodeBits - 1);
constexpr std::uint64_t kQuarter = std::uint64_t{1} << (kCodeBits - 2);
constexpr std::uint64_t kThreeQuarters = kHalf + kQuarter;

using u128 = unsigned __int128;

void check_precision(int precision) {
  if (precision < 2 || precision > 30) throw std::invalid_argument("codec: precision must be in [2, 30]");
}

// Narrow [low, high] to the symbol's slice of the current range.
void narrow(std::uint64_t& low, std::uint64_t& high, const SymbolDistribution& d, std::size_t s) {
  const u128 range = static_cast<u128>(high - low) + 1;
  const u128 total = d.total();
  high = low + static_cast<std::uint64_t>(range * d.cum[s + 1] / total) - 1;
  low = low + static_cast<std::uint64_t>(range * d.cum[s] / total);
}

}  // namespace

SymbolDistribution quantize(std::span<const double> probs, int precision) {
  check_precision(precision);
  const std::size_t k = probs.size();
  if (k == 0) throw std::invalid_argument("quantize: empty distribution");
  const std::uint64_t total = std::uint64_t{1} << precision;
  if (2 * static_cast<std::uint64_t>(k) > total) {
    throw std::invalid_argument("quantize: " + std::to_string(k) + " symbols do not fit " +
                                std::to_string(precision) + "-bit precision");
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw std::invalid_argument("quantize: negative or non-finite probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument("quantize: probabilities do not sum to 1");

  SymbolDistribution d;
  d.precision = precision;
  d.freq.resize(k);
  std::vector<double> frac(k);
  std::int64_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double scaled = probs[i] * static_cast<double>(total);
    const double fl = std::floor(scaled);
    frac[i] = scaled - fl;
    d.freq[i] = static_cast<std::uint32_t>(std::max(1.0, fl));
    assigned += d.freq[i];
  }
  std::int64_t diff = static_cast<std::int64_t>(total) - assigned;
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (diff > 0) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t j = 0; diff > 0; j = (j + 1) % k, --diff) ++d.freq[idx[j]];
  } else {
    while (diff < 0) {
      // Largest frequency first; ties go to the lowest index.
      std::size_t best = 0;
      for (std::size_t i = 1; i < k; ++i) {
        if (d.freq[i] > d.freq[best]) best = i;
      }
      const std::int64_t take = std::min<std::int64_t>(-diff, static_cast<std::int64_t>(d.freq[best]) - 1);
      d.freq[best] -= static_cast<std::uint32_t>(take);
      diff += take;
    }
  }
  d.cum.assign(k + 1, 0);
  for (std::size_t i = 0; i < k; ++i) d.cum[i + 1] = d.cum[i] + d.freq[i];
  return d;
}

double quantization_penalty(double p, const SymbolDistribution& q, std::size_t symbol) {
  if (!(p > 0.0)) throw std::invalid_argument("quantization_penalty: zero probability");
  return std::log2(p / q.prob(symbol));
}

void BitStream::push(bool bit) {
  if (length % 8 == 0) bytes.push_back(0);
  if (bit) bytes.back() |= static_cast<std::uint8_t>(0x80u >> (length % 8));
  ++length;
}

bool BitStream::get(std::uint64_t i) const {
  if (i >= length) throw std::out_of_range("BitStream: bit index out of range");
  return (bytes[i / 8] >> (7 - i % 8)) & 1u;
}

Encoder::Encoder() : low_(0), high_(kTop) {}

void Encoder::emit(bool bit) {
  out_.push(bit);
  for (; pending_ > 0; --pending_) out_.push(!bit);
}

void Encoder::encode(std::size_t symbol, const SymbolDistribution& dist) {
  if (done_) throw std::logic_error("Encoder: already finished");
  if (symbol >= dist.size()) throw std::out_of_range("Encoder: symbol outside the table");
  narrow(low_, high_, dist, symbol);
  while (true) {
    if (high_ < kHalf) {
      emit(false);
    } else if (low_ >= kHalf) {
      emit(true);
      low_ -= kHalf;
      high_ -= kHalf;
    } else if (low_ >= kQuarter && high_ < kThreeQuarters) {
      ++pending_;
      low_ -= kQuarter;
      high_ -= kQuarter;
    } else {
      break;
    }
    low_ <<= 1;
    high_ = (high_ << 1) | 1;
  }
}

BitStream Encoder::finish() {
  if (done_) throw std::logic_error("Encoder: already finished");
  done_ = true;
  ++pending_;
  emit(low_ >= kQuarter);
  return std::move(out_);
}

Decoder::Decoder(const BitStream& bits) : bits_(bits), low_(0), high_(kTop) {
  for (int i = 0; i < kCodeBits; ++i) value_ = (value_ << 1) | (next_bit() ? 1 : 0);
}

bool Decoder::next_bit() {
  // Past the payload the decoder reads zeros; running far beyond it means the
  // caller asked for more symbols than were coded.
  if (cursor_ > bits_.length + kCodeBits) throw std::runtime_error("Decoder: stream exhausted");
  const bool b = cursor_ < bits_.length && bits_.get(cursor_);
  ++cursor_;
  return b;
}

std::size_t Decoder::decode(const SymbolDistribution& dist) {
  const u128 range = static_cast<u128>(high_ - low_) + 1;
  const u128 total = dist.total();
  const auto count = static_cast<std::uint64_t>(((static_cast<u128>(value_ - low_) + 1) * total - 1) / range);
  const auto it = std::upper_bound(dist.cum.begin(), dist.cum.end(), count);
  const auto s = static_cast<std::size_t>(it - dist.cum.begin()) - 1;
  if (s >= dist.size()) throw std::runtime_error("Decoder: corrupt stream");
  narrow(low_, high_, dist, s);
  while (true) {
    if (high_ < kHalf) {
    } else if (low_ >= kHalf) {
      low_ -= kHalf;
      high_ -= kHalf;
      value_ -= kHalf;
    } else if (low_ >= kQuarter && high_ < kThreeQuarters) {
      low_ -= kQuarter;
      high_ -= kQuarter;
      value_ -= kQuarter;
    } else {
      break;
    }
    low_ <<= 1;
    high_ = (high_ << 1) | 1;
    value_ = (value_ << 1) | (next_bit() ? 1 : 0);
  }
  return s;
}

EncodeResult encode(std::span<const int> symbols, CausalModel& model, int precision) {
  check_precision(precision);
  EncodeResult r;
  Encoder enc;
  for (std::size_t t = 0; t < symbols.size(); ++t) {
    const auto probs = model.next_distribution(symbols.first(t));
    const auto q = quantize(probs, precision);
    const int s = symbols[t];
    if (s < 0 || static_cast<std::size_t>(s) >= q.size()) {
      throw std::out_of_range("encode: symbol " + std::to_string(s) + " outside the table at position " +
                              std::to_string(t));
    }
    const auto su = static_cast<std::size_t>(s);
    if (!(probs[su] > 0.0)) throw std::invalid_argument("encode: zero probability at a coded symbol");
    enc.encode(su, q);
    r.ideal_bits -= std::log2(probs[su]);
    r.quantized_ideal_bits -= std::log2(q.prob(su));
    const double pen = quantization_penalty(probs[su], q, su);
    r.total_penalty += pen;
    r.max_penalty = std::max(r.max_penalty, pen);
  }
  r.bits = enc.finish();
  return r;
}

std::vector<int> decode(const BitStream& bits, CausalModel& model, std::size_t n_symbols,
                        int precision) {
  check_precision(precision);
  Decoder dec(bits);
  std::vector<int> out;
  out.reserve(n_symbols);
  for (std::size_t t = 0; t < n_symbols; ++t) {
    const auto q = quantize(model.next_distribution(out), precision);
    out.push_back(static_cast<int>(dec.decode(q)));
  }
  return out;
}

double ideal_length(std::span<const std::vector<double>> distributions, std::span<const int> symbols) {
  if (distributions.size() != symbols.size()) {
    throw std::invalid_argument("ideal_length: one distribution per symbol required");
  }
  double bits = 0.0;
  for (std::size_t t = 0; t < symbols.size(); ++t) {
    const double p = distributions[t].at(static_cast<std::size_t>(symbols[t]));
    if (!(p > 0.0)) {
      throw std::invalid_argument("ideal_length: zero probability at position " + std::to_string(t + 1));
    }
    bits -= std::log2(p);
  }
  return bits;
}

double ideal_length(CausalModel& model, std::span<const int> symbols) {
  std::vector<std::vector<double>> dists;
  dists.reserve(symbols.size());
  for (std::size_t t = 0; t < symbols.size(); ++t) dists.push_back(model.next_distribution(symbols.first(t)));
  return ideal_length(dists, symbols);
}

namespace {

void put_be(std::ostream& out, std::uint64_t v, int bytes) {
  for (int i = bytes - 1; i >= 0; --i) out.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_be(std::istream& in, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw std::runtime_error("read_stream: truncated header");
    v = (v << 8) | static_cast<std::uint8_t>(c);
  }
  return v;
}

}  // namespace

void write_stream(std::ostream& out, const BitStream& bits, std::uint64_t n_symbols, int precision) {
  check_precision(precision);
  if (n_symbols >= (std::uint64_t{1} << 48)) throw std::invalid_argument("write_stream: count exceeds 48 bits");
  put_be(out, kFormatVersion, 2);
  put_be(out, n_symbols, 6);
  put_be(out, static_cast<std::uint64_t>(precision), 1);
  put_be(out, bits.length, 8);
  out.write(reinterpret_cast<const char*>(bits.bytes.data()), static_cast<std::streamsize>(bits.bytes.size()));
  if (!out) throw std::runtime_error("write_stream: write failed");
}

StoredStream read_stream(std::istream& in) {
  StoredStream s;
  const auto version = get_be(in, 2);
  if (version != kFormatVersion) {
    throw std::runtime_error("read_stream: unsupported version " + std::to_string(version));
  }
  s.n_symbols = get_be(in, 6);
  s.precision = static_cast<int>(get_be(in, 1));
  check_precision(s.precision);
  s.bits.length = get_be(in, 8);
  s.bits.bytes.resize(static_cast<std::size_t>((s.bits.length + 7) / 8));
  in.read(reinterpret_cast<char*>(s.bits.bytes.data()), static_cast<std::streamsize>(s.bits.bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(s.bits.bytes.size())) {
    throw std::runtime_error("read_stream: truncated payload");
  }
  return s;
}

EpisodeModel::EpisodeModel(const Predictor& predictor, Episode shape)
    : predictor_(predictor), episode_(std::move(shape)), n_labels_(io_shape(episode_.spec).n_labels) {
  if (n_labels_ < 1) throw std::invalid_argument("EpisodeModel: episode has no categorical labels");
  for (auto& p : episode_.points) p.labels.assign(static_cast<std::size_t>(n_labels_), 0);
}

std::vector<double> EpisodeModel::next_distribution(std::span<const int> prefix) {
  const std::size_t point = prefix.size() / static_cast<std::size_t>(n_labels_);
  const std::size_t label = prefix.size() % static_cast<std::size_t>(n_labels_);
  if (point >= episode_.size()) throw std::out_of_range("EpisodeModel: past the end of the episode");
  // Labels of points before `point` come from the prefix; later ones stay placeholders.
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    episode_.points[i / static_cast<std::size_t>(n_labels_)].labels[i % static_cast<std::size_t>(n_labels_)] = prefix[i];
  }
  if (cached_point_ != point) {
    const Query q{point, point};
    cached_ = predictor_.predict(episode_, std::span<const Query>(&q, 1)).at(0);
    cached_point_ = point;
  }
  return cached_.probs.at(label);
}

std::vector<int> episode_symbols(const Episode& episode) {
  std::vector<int> s;
  for (const auto& p : episode.points) s.insert(s.end(), p.labels.begin(), p.labels.end());
  return s;
}

CompressedEpisode compress_episode(const Predictor& predictor, const Episode& episode, int precision) {
  const auto symbols = episode_symbols(episode);
  EpisodeModel model(predictor, episode);
  CompressedEpisode c;
  c.n_symbols = symbols.size();
  // Recompute the distributions once for the per-symbol report.
  std::vector<double> observed;
  {
    EpisodeModel probe(predictor, episode);
    for (std::size_t t = 0; t < symbols.size(); ++t) {
      observed.push_back(probe.next_distribution(std::span<const int>(symbols).first(t))
                             .at(static_cast<std::size_t>(symbols[t])));
    }
  }
  c.encoded = encode(symbols, model, precision);
  c.report = code_length_from_probs(observed);
  return c;
}

Episode decompress_episode(const Predictor& predictor, const BitStream& bits, const Episode& shape,
                           int precision) {
  const int n_labels = io_shape(shape.spec).n_labels;
  EpisodeModel model(predictor, shape);
  const auto symbols = decode(bits, model, shape.size() * static_cast<std::size_t>(n_labels), precision);
  Episode out = shape;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.points[i].labels.assign(symbols.begin() + static_cast<std::ptrdiff_t>(i * n_labels),
                                symbols.begin() + static_cast<std::ptrdiff_t>((i + 1) * n_labels));
  }
  return out;
}

}  // namespace preq::codec
