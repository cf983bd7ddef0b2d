#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace invd {

// Dense boolean attention mask. allowed(i, j) == true means query i may attend to key j.
class IntraInstanceMask {
 public:
  IntraInstanceMask() = default;
  IntraInstanceMask(std::size_t rows, std::size_t cols, bool fill);

  static IntraInstanceMask all_allowed(std::size_t q) { return {q, q, true}; }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool allowed(std::size_t i, std::size_t j) const noexcept { return bits_[i * cols_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) noexcept { bits_[i * cols_ + j] = v ? 1 : 0; }
  const std::uint8_t* row(std::size_t i) const noexcept { return bits_.data() + i * cols_; }

  std::size_t allowed_count() const noexcept;
  bool is_symmetric() const noexcept;
  bool has_reflexive_diagonal() const noexcept;
  // Index of the first row with no allowed entry, or rows() if every row is usable.
  std::size_t first_empty_row() const noexcept;

  bool operator==(const IntraInstanceMask&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

}  // namespace invd
