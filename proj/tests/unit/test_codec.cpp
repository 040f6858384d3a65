#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "preq/codec.hpp"
#include "preq/preq_eval.hpp"

using namespace preq;
using namespace preq::codec;

namespace {

// Distribution over k symbols that depends on the whole prefix.
class HashModel : public CausalModel {
 public:
  HashModel(int k, unsigned seed, double skew) : k_(k), seed_(seed), skew_(skew) {}
  std::vector<double> next_distribution(std::span<const int> prefix) override {
    std::uint64_t h = seed_;
    for (int s : prefix) h = h * 1315423911u + static_cast<std::uint64_t>(s) + 7;
    std::mt19937_64 rng(h ^ prefix.size());
    std::gamma_distribution<double> g(skew_, 1.0);
    std::vector<double> p(static_cast<std::size_t>(k_));
    double z = 0;
    for (double& v : p) z += (v = g(rng) + 1e-12);
    for (double& v : p) v /= z;
    return p;
  }

 private:
  int k_;
  unsigned seed_;
  double skew_;
};

std::vector<int> sample_stream(CausalModel& m, std::size_t n, unsigned seed) {
  std::mt19937 rng(seed);
  std::vector<int> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = m.next_distribution(out);
    std::discrete_distribution<int> d(p.begin(), p.end());
    out.push_back(d(rng));
  }
  return out;
}

}  // namespace

TEST_CASE("quantization examples") {
  const std::vector<double> a{0.5, 0.25, 0.25};
  CHECK(quantize(a, 4).freq == std::vector<std::uint32_t>{8, 4, 4});
  const std::vector<double> b{1e-9, 1.0 - 1e-9};
  CHECK(quantize(b, 4).freq == std::vector<std::uint32_t>{1, 15});
  const std::vector<double> c{1.0 / 3, 1.0 / 3, 1.0 / 3};
  const SymbolDistribution q = quantize(c, 4);
  CHECK(q.freq == std::vector<std::uint32_t>{6, 5, 5});
  CHECK(q.cum == std::vector<std::uint64_t>{0, 6, 11, 16});
  const std::vector<double> zeros{0.0, 0.0, 1.0, 0.0};
  const SymbolDistribution z = quantize(zeros, 3);
  CHECK(z.freq == std::vector<std::uint32_t>{1, 1, 5, 1});
  CHECK(quantization_penalty(0.5, quantize(a, 4), 0) == doctest::Approx(0.0));
  const std::vector<double> bad{0.6, 0.6};
  CHECK_THROWS(quantize(bad, 8));
  const std::vector<double> many(9, 1.0 / 9);
  CHECK_THROWS(quantize(many, 3));
}

TEST_CASE("roundtrip and length bound on random causal streams") {
  for (unsigned s = 0; s < 20; ++s) {
    const int k = 2 + static_cast<int>(s % 9);
    HashModel model(k, s, s % 2 ? 0.3 : 2.0);
    const auto symbols = sample_stream(model, 1500, 100 + s);
    const EncodeResult r = encode(symbols, model);
    CHECK(decode(r.bits, model, symbols.size()) == symbols);
    CHECK(static_cast<double>(r.bits.length) <= r.quantized_ideal_bits + 2.0);
    CHECK(static_cast<double>(r.bits.length) <= r.ideal_bits + 32 + symbols.size() * r.max_penalty);
    CHECK(r.quantized_ideal_bits == doctest::Approx(r.ideal_bits + r.total_penalty).epsilon(1e-9));
  }
}

TEST_CASE("ideal length matches the evaluation code length") {
  HashModel model(5, 3, 1.0);
  const auto symbols = sample_stream(model, 300, 4);
  std::vector<double> probs;
  std::vector<int> prefix;
  for (int s : symbols) {
    probs.push_back(model.next_distribution(prefix)[static_cast<std::size_t>(s)]);
    prefix.push_back(s);
  }
  CHECK(std::abs(ideal_length(model, symbols) - code_length_from_probs(probs).total_bits) < 1e-9);
}

TEST_CASE("stream container") {
  HashModel model(4, 1, 1.0);
  const auto symbols = sample_stream(model, 200, 2);
  const EncodeResult r = encode(symbols, model);
  std::stringstream buf;
  write_stream(buf, r.bits, symbols.size(), kDefaultPrecision);
  const std::string bytes = buf.str();
  CHECK(bytes.size() == 17 + (r.bits.length + 7) / 8);
  std::stringstream in(bytes);
  const StoredStream s = read_stream(in);
  CHECK(s.bits == r.bits);
  CHECK(s.n_symbols == symbols.size());
  CHECK(s.precision == kDefaultPrecision);
  std::stringstream cut(bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS(read_stream(cut));
  std::string wrong = bytes;
  wrong[0] = 0x7f;
  wrong[1] = 0x7f;
  std::stringstream wv(wrong);
  CHECK_THROWS(read_stream(wv));
}

TEST_CASE("decoder reports an exhausted stream") {
  HashModel model(6, 5, 1.0);
  BitStream empty;
  CHECK_THROWS(decode(empty, model, 500));
}

TEST_CASE("bit streams") {
  BitStream b;
  const bool bits[] = {1, 0, 1, 1, 0, 0, 0, 0, 1};
  for (bool v : bits) b.push(v);
  CHECK(b.length == 9);
  CHECK(b.bytes == std::vector<std::uint8_t>{0xB0, 0x80});
  for (std::size_t i = 0; i < 9; ++i) CHECK(b.get(i) == bits[i]);
}

TEST_CASE("episodes compress losslessly under the marginal baseline") {
  const MetaDataset d = make_meta_dataset(TaskSpec::mastermind(), 2, 30, 5, Split::eval);
  const MarginalPredictor pred(2, 9);
  for (const Episode& ep : d.episodes) {
    const CompressedEpisode c = compress_episode(pred, ep);
    CHECK(c.n_symbols == 60);
    CHECK(episode_symbols(ep).size() == 60);
    CHECK(c.report.total_bits == doctest::Approx(c.encoded.ideal_bits).epsilon(1e-9));
    const Episode back = decompress_episode(pred, c.encoded.bits, ep);
    for (std::size_t i = 0; i < ep.size(); ++i) CHECK(back.points[i].labels == ep.points[i].labels);
  }
}
