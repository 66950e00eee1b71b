#pragma once

#include <cstddef>
#include <vector>

#include <boost/math/interpolators/cardinal_cubic_b_spline.hpp>

namespace lgm::detail {

// Cubic B-spline through equispaced samples, extended linearly past the ends
// with the end-point derivatives. Right/left slopes can be capped to force a
// decaying tail.
class EquispacedSpline
{
  public:
    EquispacedSpline(std::vector<double> values, double start, double step)
        : values_(std::move(values)), start_(start), step_(step),
          end_(start + step * static_cast<double>(values_.size() - 1)),
          spline_(make(values_, start, step))
    {
        left_value_ = values_.front();
        right_value_ = values_.back();
        left_slope_ = spline_.prime(start_);
        right_slope_ = spline_.prime(end_);
    }

    void cap_tail_slopes(double min_left, double max_right)
    {
        if (left_slope_ < min_left)
            left_slope_ = min_left;
        if (right_slope_ > max_right)
            right_slope_ = max_right;
    }

    double operator()(double t) const
    {
        if (t < start_)
            return left_value_ + left_slope_ * (t - start_);
        if (t > end_)
            return right_value_ + right_slope_ * (t - end_);
        return spline_(t);
    }

    double start() const { return start_; }
    double end() const { return end_; }

  private:
    using Spline = boost::math::interpolators::cardinal_cubic_b_spline<double>;

    // Fewer than five samples need explicit end derivatives; secants are used.
    static Spline make(std::vector<double> const& v, double start, double step)
    {
        if (v.size() >= 5)
            return Spline(v.begin(), v.end(), start, step);
        std::size_t n = v.size();
        return Spline(v.begin(), v.end(), start, step, (v[1] - v[0]) / step, (v[n - 1] - v[n - 2]) / step);
    }

    std::vector<double> values_;
    double start_;
    double step_;
    double end_;
    Spline spline_;
    double left_value_ = 0.0;
    double right_value_ = 0.0;
    double left_slope_ = 0.0;
    double right_slope_ = 0.0;
};

}  // namespace lgm::detail
