#pragma once

// ExperimentReport CSV: one row per (run, outer iteration).

#include "qlr/optimizer.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace qlr::report {

inline constexpr std::string_view kHeader =
    "seed,strategy,rank,k,q_bits,lr_bits,iter,q_scale,norm_q,norm_lr,act_err";

struct RunLabel {
  std::uint64_t seed = 0;
  std::string strategy;
  Index rank = 0;
  Index k = 0;      // 0 unless the strategy is odlri
  int q_bits = 0;
  int lr_bits = 16; // 16 denotes full-precision factors
};

struct Row {
  RunLabel label;
  IterationRecord record;
};

RunLabel label_for(const OptimizerConfig &cfg);
std::vector<Row> rows_for(const RunLabel &label, const std::vector<IterationRecord> &records);

/// Reals are printed with 17 significant digits.
std::string format_row(const Row &row);
std::string render(const std::vector<Row> &rows);

/// Inverse of render; throws ConfigInvalid on a malformed header or row.
std::vector<Row> parse(std::string_view csv);

} // namespace qlr::report
