#include "voxnav/rng.hpp"

#include <cmath>

namespace voxnav {

namespace {

// splitmix64 finalizer
uint64_t mix(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

StreamRng::StreamRng(uint64_t seed, uint64_t stream, uint64_t tick) {
  key_ = mix(mix(mix(seed) ^ stream) ^ tick);
}

uint64_t StreamRng::next_u64() { return mix(key_ + counter_++ * 0x9e3779b97f4a7c15ULL); }

double StreamRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double StreamRng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 shifted away from 0 for the log
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

Eigen::Vector3d StreamRng::gaussian3(double sigma) {
  return Eigen::Vector3d(sigma * gaussian(), sigma * gaussian(), sigma * gaussian());
}

}  // namespace voxnav
