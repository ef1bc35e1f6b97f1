#pragma once

/// Uniformly sampled trajectories: an immutable segment (the x_tau(t) window
/// consumed by the Lyapunov functionals) and a fixed-capacity ring buffer used
/// by the simulator.

#include "tdrg/errors.hpp"
#include "tdrg/linalg.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace tdrg {

namespace detail {

/// Rounds x to the nearest integer when it is within floating noise of it.
inline double snap_to_grid(double x) {
    const double r = std::round(x);
    return std::abs(x - r) <= 1e-9 * std::max(1.0, std::abs(x)) ? r : x;
}

}  // namespace detail

class HistorySegment {
public:
    HistorySegment() = default;

    /// Columns of `values` are samples at t_begin, t_begin + dt, ...
    HistorySegment(double t_begin, double dt, Matrix values)
        : t_begin_(t_begin), dt_(dt), values_(std::move(values)) {
        if (!(dt_ > 0.0))
            throw InvalidArgument("segment step must be positive");
        if (values_.cols() < 1)
            throw InvalidArgument("segment needs at least one sample");
    }

    /// Builds a segment from explicit (time, value) samples; times must be
    /// strictly increasing with uniform spacing.
    static HistorySegment from_samples(const std::vector<std::pair<double, Vector>>& samples) {
        if (samples.size() < 2)
            throw InvalidArgument("segment needs at least two samples");
        const double dt = samples[1].first - samples[0].first;
        if (!(dt > 0.0))
            throw InvalidArgument("segment times must be strictly increasing");
        Matrix values(samples.front().second.size(), static_cast<Eigen::Index>(samples.size()));
        for (std::size_t i = 0; i < samples.size(); ++i) {
            if (i > 0) {
                const double step = samples[i].first - samples[i - 1].first;
                if (!(step > 0.0) || std::abs(step - dt) > 1e-12)
                    throw InvalidArgument("segment times are not uniformly spaced");
            }
            detail::require_dims(samples[i].second.size() == values.rows(), "segment sample dimension mismatch");
            values.col(static_cast<Eigen::Index>(i)) = samples[i].second;
        }
        return HistorySegment(samples.front().first, dt, std::move(values));
    }

    double dt() const { return dt_; }
    double t_begin() const { return t_begin_; }
    double t_end() const { return t_begin_ + dt_ * static_cast<double>(values_.cols() - 1); }
    double span() const { return dt_ * static_cast<double>(values_.cols() - 1); }
    int dim() const { return static_cast<int>(values_.rows()); }
    int size() const { return static_cast<int>(values_.cols()); }

    double time(int i) const { return t_begin_ + dt_ * i; }
    auto sample(int i) const { return values_.col(i); }
    const Matrix& values() const { return values_; }

    /// Linear interpolation; t must lie inside [t_begin, t_end].
    Vector at(double t) const {
        double s = detail::snap_to_grid((t - t_begin_) / dt_);
        const double last = static_cast<double>(values_.cols() - 1);
        if (s < 0.0 || s > last)
            throw InsufficientSpan("segment lookup at t=" + std::to_string(t) + " outside [" +
                                   std::to_string(t_begin_) + ", " + std::to_string(t_end()) + "]");
        const auto i = static_cast<Eigen::Index>(std::floor(s));
        const double w = s - static_cast<double>(i);
        if (w == 0.0)
            return values_.col(i);
        return (1.0 - w) * values_.col(i) + w * values_.col(i + 1);
    }

    bool covers(double t_from) const {
        return detail::snap_to_grid((t_from - t_begin_) / dt_) >= 0.0;
    }

private:
    double t_begin_ = 0.0;
    double dt_ = 1.0;
    Matrix values_;
};

/// Ring of uniformly spaced samples. Node k sits at time origin + k * dt;
/// the newest node defines the current time.
class HistoryBuffer {
public:
    HistoryBuffer() = default;

    HistoryBuffer(int dim, double dt, int capacity, long first_index = 0, double origin = 0.0)
        : dim_(dim), dt_(dt), origin_(origin), data_(dim, capacity), first_(first_index), next_(first_index) {
        if (!(dt > 0.0))
            throw InvalidArgument("buffer step must be positive");
        if (capacity < 2)
            throw InvalidArgument("buffer capacity must be at least 2");
    }

    template <typename Derived>
    void push(const Eigen::MatrixBase<Derived>& value) {
        data_.col(slot(next_)) = value;
        ++next_;
    }

    int dim() const { return dim_; }
    double dt() const { return dt_; }
    int capacity() const { return static_cast<int>(data_.cols()); }
    bool empty() const { return next_ == first_; }

    long newest_index() const { return next_ - 1; }
    long oldest_index() const {
        return std::max(first_, next_ - static_cast<long>(data_.cols()));
    }
    double time_of(long k) const { return origin_ + dt_ * static_cast<double>(k); }
    double newest_time() const { return time_of(newest_index()); }
    double oldest_time() const { return time_of(oldest_index()); }

    auto node(long k) const {
        if (k < oldest_index() || k > newest_index())
            throw HistoryUnderrun("history node " + std::to_string(k) + " not buffered");
        return data_.col(slot(k));
    }
    auto newest() const { return node(newest_index()); }

    /// Interpolated value at fractional node position s (origin-relative).
    template <typename Out>
    void interpolate(double s, Out&& out) const {
        s = detail::snap_to_grid(s);
        const auto i = static_cast<long>(std::floor(s));
        const double w = s - static_cast<double>(i);
        if (w == 0.0) {
            out = node(i);
            return;
        }
        out = (1.0 - w) * node(i) + w * node(i + 1);
    }

    Vector lookup(double t) const {
        Vector out(dim_);
        interpolate((t - origin_) / dt_, out);
        return out;
    }

    /// Grid nodes covering [t_from, newest_time()].
    HistorySegment segment_since(double t_from) const {
        const double s = detail::snap_to_grid((t_from - origin_) / dt_);
        const long k0 = static_cast<long>(std::floor(s));
        if (k0 < oldest_index())
            throw HistoryUnderrun("segment start before oldest buffered sample");
        Matrix values(dim_, newest_index() - k0 + 1);
        for (long k = k0; k <= newest_index(); ++k)
            values.col(k - k0) = node(k);
        return HistorySegment(time_of(k0), dt_, std::move(values));
    }

private:
    Eigen::Index slot(long k) const {
        const long c = static_cast<long>(data_.cols());
        return static_cast<Eigen::Index>(((k % c) + c) % c);
    }

    int dim_ = 0;
    double dt_ = 1.0;
    double origin_ = 0.0;
    Matrix data_;
    long first_ = 0;
    long next_ = 0;
};

}  // namespace tdrg
