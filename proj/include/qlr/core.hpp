#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace qlr {

using Index = Eigen::Index;

// Dense carriers. Row-major to match the on-disk layout.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = Mat<double>;
using Vector = Vec<double>;

enum class ErrorCode {
  NonSymmetric,
  NotFactorizable,
  RankTooLarge,
  DimensionMismatch,
  KOutOfRange,
  IndexOutOfRange,
  SingularFactor,
  ConfigInvalid,
  NonFinite,
  BadMagic,
  BadVersion,
  Truncated,
  NonFinitePayload,
  Io,
};

inline const char *to_string(ErrorCode code) {
  switch (code) {
  case ErrorCode::NonSymmetric: return "NonSymmetric";
  case ErrorCode::NotFactorizable: return "NotFactorizable";
  case ErrorCode::RankTooLarge: return "RankTooLarge";
  case ErrorCode::DimensionMismatch: return "DimensionMismatch";
  case ErrorCode::KOutOfRange: return "KOutOfRange";
  case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
  case ErrorCode::SingularFactor: return "SingularFactor";
  case ErrorCode::ConfigInvalid: return "ConfigInvalid";
  case ErrorCode::NonFinite: return "NonFinite";
  case ErrorCode::BadMagic: return "BadMagic";
  case ErrorCode::BadVersion: return "BadVersion";
  case ErrorCode::Truncated: return "Truncated";
  case ErrorCode::NonFinitePayload: return "NonFinitePayload";
  case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived> &m) {
  return m.derived().allFinite();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived> &m, const char *what) {
  if (!all_finite(m))
    throw Error(ErrorCode::NonFinite, std::string(what) + " contains NaN or Inf");
}

} // namespace qlr
