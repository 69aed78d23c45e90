#include "cak/grid.hpp"

#include "cak/error.hpp"

#include <cmath>

namespace cak {

Grid::Grid(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data))
{
    if (data_.size() != rows_ * cols_)
        throw Error(ErrorCode::ShapeMismatch, "grid storage does not match its shape");
}

bool Grid::all_finite() const noexcept
{
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace cak
