#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mstwins {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
[[noreturn]] void fail(const char* file, int line, const std::string& msg);
}

#define MST_CHECK(cond, msg)                                  \
  do {                                                        \
    if (!(cond)) ::mstwins::detail::fail(__FILE__, __LINE__, (msg)); \
  } while (0)

// Counter-free xoshiro256++ generator. All randomness in the project goes
// through this type so that runs are reproducible from a single u64 seed
// and the state fits in four words (serializable as text).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ull) { reseed(seed); }

  void reseed(uint64_t seed);

  uint64_t next_u64();

  // [0, 1)
  double uniform();
  double uniform(double lo, double hi);
  // standard normal via Box-Muller; the second sample of each pair is
  // discarded so the state stays exactly four words
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // [0, n)
  int64_t index(int64_t n);

  const uint64_t* state() const { return s_; }
  void set_state(const uint64_t st[4]);

  // stable stream derivation, e.g. per (epoch, sample) substreams
  static uint64_t mix(uint64_t a, uint64_t b);

 private:
  uint64_t s_[4];
};

}  // namespace mstwins
