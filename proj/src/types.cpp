#include "lapanet/types.hpp"

#include <cmath>

namespace lapanet {

void MultiCoil::validate() const
{
    if (coils.empty())
        throw ValidationError("multi-coil data needs at least one coil");
    for (const auto& c : coils) {
        if (c.rows() != coils.front().rows() || c.cols() != coils.front().cols())
            throw ValidationError("all coils must share one grid shape");
    }
}

bool all_finite(const CGrid& g)
{
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g.data()[i].real()) || !std::isfinite(g.data()[i].imag()))
            return false;
    }
    return true;
}

bool all_finite(const RGrid& g)
{
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g.data()[i]))
            return false;
    }
    return true;
}

void require_finite(const CGrid& g, const char* what)
{
    if (!all_finite(g))
        throw ValidationError(std::string(what) + ": input contains non-finite values");
}

void require_same_shape(const CGrid& a, const CGrid& b, const char* what)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ValidationError(std::string(what) + ": shape mismatch");
}

} // namespace lapanet
