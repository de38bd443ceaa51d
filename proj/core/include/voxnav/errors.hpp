#pragma once

#include <stdexcept>
#include <string>

namespace voxnav {

struct RotationNearPi : std::domain_error {
  explicit RotationNearPi(const std::string& what) : std::domain_error(what) {}
};

struct NonFiniteInput : std::invalid_argument {
  explicit NonFiniteInput(const std::string& what) : std::invalid_argument(what) {}
};

struct OutOfOrderSample : std::runtime_error {
  explicit OutOfOrderSample(const std::string& what) : std::runtime_error(what) {}
};

struct InactiveMaplet : std::logic_error {
  explicit InactiveMaplet(const std::string& what) : std::logic_error(what) {}
};

struct GeometryMismatch : std::invalid_argument {
  explicit GeometryMismatch(const std::string& what) : std::invalid_argument(what) {}
};

struct EmptyPath : std::invalid_argument {
  explicit EmptyPath(const std::string& what) : std::invalid_argument(what) {}
};

struct ScenarioInvalid : std::runtime_error {
  explicit ScenarioInvalid(const std::string& what) : std::runtime_error(what) {}
};

struct InsufficientOverlap : std::runtime_error {
  explicit InsufficientOverlap(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace voxnav
