#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "voltgame/errors.hpp"

namespace voltgame {

/// Step-size / tolerance sequence indexed by the outer iteration.
///
/// Three kinds are supported:
///   constant  v            ->  v
///   geometric a r [floor]  ->  max(a * r^k, floor)
///   harmonic  a tau        ->  a / (1 + k / tau)
class Schedule {
public:
    enum class Kind { Constant, Geometric, Harmonic };

    Schedule() = default;

    static Schedule constant(double value) {
        Schedule s;
        s.kind_ = Kind::Constant;
        s.initial_ = value;
        s.validate();
        return s;
    }

    static Schedule geometric(double initial, double ratio, double floor = 0.0) {
        Schedule s;
        s.kind_ = Kind::Geometric;
        s.initial_ = initial;
        s.param_ = ratio;
        s.floor_ = floor;
        s.validate();
        return s;
    }

    static Schedule harmonic(double initial, double tau) {
        Schedule s;
        s.kind_ = Kind::Harmonic;
        s.initial_ = initial;
        s.param_ = tau;
        s.validate();
        return s;
    }

    /// Parses a schedule spec of the form "constant 1e-4",
    /// "geometric 1e-3 0.9 1e-8" or "harmonic 1e-4 500".
    static Schedule parse(const std::vector<std::string>& tokens) {
        auto num = [&](std::size_t i) {
            double v = 0.0;
            const std::string& t = tokens[i];
            auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
            if (ec != std::errc{} || p != t.data() + t.size())
                throw ParseError("schedule: bad number '" + t + "'");
            return v;
        };
        if (tokens.empty())
            throw ParseError("schedule: empty spec");
        const std::string& kind = tokens[0];
        if (kind == "constant") {
            if (tokens.size() != 2)
                throw ParseError("schedule: constant takes one parameter");
            return constant(num(1));
        }
        if (kind == "geometric") {
            if (tokens.size() != 3 && tokens.size() != 4)
                throw ParseError("schedule: geometric takes initial, ratio and optional floor");
            return geometric(num(1), num(2), tokens.size() == 4 ? num(3) : 0.0);
        }
        if (kind == "harmonic") {
            if (tokens.size() != 3)
                throw ParseError("schedule: harmonic takes initial and tau");
            return harmonic(num(1), num(2));
        }
        throw ParseError("schedule: unknown kind '" + kind + "'");
    }

    double at(long k) const {
        switch (kind_) {
            case Kind::Constant:
                return initial_;
            case Kind::Geometric:
                return std::max(initial_ * std::pow(param_, static_cast<double>(k)), floor_);
            case Kind::Harmonic:
                return initial_ / (1.0 + static_cast<double>(k) / param_);
        }
        return initial_;
    }

    Kind kind() const { return kind_; }
    double initial() const { return initial_; }

    std::string str() const {
        std::ostringstream os;
        switch (kind_) {
            case Kind::Constant:
                os << "constant " << initial_;
                break;
            case Kind::Geometric:
                os << "geometric " << initial_ << " " << param_;
                if (floor_ > 0.0) os << " " << floor_;
                break;
            case Kind::Harmonic:
                os << "harmonic " << initial_ << " " << param_;
                break;
        }
        return os.str();
    }

private:
    void validate() const {
        if (!(initial_ > 0.0))
            throw ValidationError("schedule: initial value must be positive");
        if (kind_ == Kind::Geometric && !(param_ > 0.0 && param_ <= 1.0))
            throw ValidationError("schedule: geometric ratio must be in (0, 1]");
        if (kind_ == Kind::Geometric && floor_ < 0.0)
            throw ValidationError("schedule: geometric floor must be nonnegative");
        if (kind_ == Kind::Harmonic && !(param_ > 0.0))
            throw ValidationError("schedule: harmonic tau must be positive");
    }

    Kind kind_ = Kind::Constant;
    double initial_ = 1.0;
    double param_ = 0.0;
    double floor_ = 0.0;
};

}  // namespace voltgame
