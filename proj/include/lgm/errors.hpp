#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lgm {

class DimensionError : public std::invalid_argument
{
  public:
    using std::invalid_argument::invalid_argument;
};

// Linear constraint system A Sigma A^T is singular (or numerically so).
class ConstraintError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

// Linear predictor left the representable range. `index` is the offending
// observation (or MCMC iteration when raised by the sampler).
class OverflowError : public std::runtime_error
{
  public:
    OverflowError(std::string const& what, std::size_t index)
        : std::runtime_error(what), index_(index)
    {
    }
    std::size_t index() const { return index_; }

  private:
    std::size_t index_;
};

}  // namespace lgm
