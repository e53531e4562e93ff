#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace knotseg {

/// Base exception for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Not enough eligible pixels of one class to honour a sampling request.
class SamplingShortfall : public Error {
 public:
  SamplingShortfall(int label, std::size_t requested, std::size_t available)
      : Error("sampling shortfall for class " + std::to_string(label) + ": requested " +
              std::to_string(requested) + ", eligible " + std::to_string(available)),
        label_(label),
        requested_(requested),
        available_(available) {}

  int label() const { return label_; }
  std::size_t requested() const { return requested_; }
  std::size_t available() const { return available_; }

 private:
  int label_;
  std::size_t requested_;
  std::size_t available_;
};

/// SplitMix64 finalizer. Used to derive independent child seeds so that a
/// component's random stream depends only on (parent seed, index).
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return mix_seed(parent ^ mix_seed(index + 0x632be59bd9b4e019ULL));
}

/// Runs fn(i) for i in [0, n) on up to hardware_concurrency threads. Each
/// index is processed exactly once; callers write results into slot i so the
/// output order never depends on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min(hw, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace knotseg
