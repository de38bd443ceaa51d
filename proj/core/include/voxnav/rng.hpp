#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace voxnav {

/// Counter-based deterministic stream RNG. Draws are a pure function of
/// (seed, stream, tick, draw index), so adding a sensor stream never
/// perturbs another stream's sequence.
class StreamRng {
 public:
  StreamRng(uint64_t seed, uint64_t stream, uint64_t tick);

  uint64_t next_u64();
  double uniform();   // [0, 1)
  double gaussian();  // standard normal, Box-Muller
  Eigen::Vector3d gaussian3(double sigma);

 private:
  uint64_t key_;
  uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace voxnav
