#include "qlr/report.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

namespace qlr::report {
namespace {

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos)
      return out;
    start = pos + 1;
  }
}

template <typename T>
T number(std::string_view field) {
  T value{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw Error(ErrorCode::ConfigInvalid, "bad numeric field '" + std::string(field) + "'");
  return value;
}

} // namespace

RunLabel label_for(const OptimizerConfig &cfg) {
  return {cfg.seed,
          to_string(cfg.init.kind),
          cfg.rank,
          cfg.init.kind == InitStrategy::Kind::Odlri ? cfg.init.k : 0,
          cfg.q_bits,
          cfg.lr_bits.value_or(16)};
}

std::vector<Row> rows_for(const RunLabel &label, const std::vector<IterationRecord> &records) {
  std::vector<Row> rows;
  rows.reserve(records.size());
  for (const auto &rec : records)
    rows.push_back({label, rec});
  return rows;
}

std::string format_row(const Row &row) {
  const auto &l = row.label;
  const auto &r = row.record;
  std::ostringstream out;
  out << l.seed << ',' << l.strategy << ',' << l.rank << ',' << l.k << ',' << l.q_bits << ','
      << l.lr_bits << ',' << r.t << ',' << real(r.q_scale) << ',' << real(r.norm_q) << ','
      << real(r.norm_lr) << ',' << real(r.act_err);
  return out.str();
}

std::string render(const std::vector<Row> &rows) {
  std::string out(kHeader);
  out += '\n';
  for (const auto &row : rows) {
    out += format_row(row);
    out += '\n';
  }
  return out;
}

std::vector<Row> parse(std::string_view csv) {
  auto lines = split(csv, '\n');
  if (!lines.empty() && lines.back().empty())
    lines.pop_back();
  if (lines.empty() || lines.front() != kHeader)
    throw Error(ErrorCode::ConfigInvalid, "report header mismatch");

  std::vector<Row> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto f = split(lines[i], ',');
    if (f.size() != 11)
      throw Error(ErrorCode::ConfigInvalid, "report line " + std::to_string(i + 1) + " has " +
                                                std::to_string(f.size()) + " fields");
    Row row;
    row.label = {number<std::uint64_t>(f[0]), std::string(f[1]), number<Index>(f[2]),
                 number<Index>(f[3]),         number<int>(f[4]),  number<int>(f[5])};
    row.record.t = number<int>(f[6]);
    row.record.q_scale = number<double>(f[7]);
    row.record.norm_q = number<double>(f[8]);
    row.record.norm_lr = number<double>(f[9]);
    row.record.act_err = number<double>(f[10]);
    rows.push_back(std::move(row));
  }
  return rows;
}

} // namespace qlr::report
