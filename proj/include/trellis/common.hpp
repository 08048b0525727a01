#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace trellis {

/// Scalar type used throughout the solver stack.
using Real = double;

/// Local indices address entries within one rank; global indices address
/// entries across the whole distributed object.
using LocalIndex = std::int32_t;
using GlobalIndex = std::int64_t;

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// Error type thrown by every module for contract violations.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }
}  // namespace detail

#define TRELLIS_REQUIRE(cond, msg) \
  do {                             \
    if (!(cond)) ::trellis::detail::fail(msg); \
  } while (0)

}  // namespace trellis
