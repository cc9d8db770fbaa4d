#pragma once

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include "sqar/error.hpp"

namespace sqar {

inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("probability must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline double student_t_quantile(double df, double p) {
    if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("probability must lie in (0, 1)");
    if (!(df > 0.0)) throw InvalidArgument("degrees of freedom must be positive");
    return boost::math::quantile(boost::math::students_t_distribution<double>(df), p);
}

/// P(chi2_df > x).
inline double chi_squared_upper_tail(double df, double x) {
    if (!(df > 0.0)) throw InvalidArgument("degrees of freedom must be positive");
    if (!(x > 0.0)) return 1.0;
    return boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<double>(df), x));
}

}  // namespace sqar
