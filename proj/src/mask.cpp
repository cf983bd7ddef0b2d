#include "invdriver/mask.hpp"

#include <algorithm>

namespace invd {

IntraInstanceMask::IntraInstanceMask(std::size_t rows, std::size_t cols, bool fill)
    : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

std::size_t IntraInstanceMask::allowed_count() const noexcept {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

bool IntraInstanceMask::is_symmetric() const noexcept {
  if (rows_ != cols_) return false;
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = i + 1; j < cols_; ++j)
      if (allowed(i, j) != allowed(j, i)) return false;
  return true;
}

bool IntraInstanceMask::has_reflexive_diagonal() const noexcept {
  if (rows_ != cols_) return false;
  for (std::size_t i = 0; i < rows_; ++i)
    if (!allowed(i, i)) return false;
  return true;
}

std::size_t IntraInstanceMask::first_empty_row() const noexcept {
  for (std::size_t i = 0; i < rows_; ++i) {
    const auto* r = row(i);
    if (std::none_of(r, r + cols_, [](std::uint8_t b) { return b != 0; })) return i;
  }
  return rows_;
}

}  // namespace invd
