#include "qlr/cli.hpp"

#include "qlr/calibration.hpp"
#include "qlr/matrix_io.hpp"
#include "qlr/optimizer.hpp"
#include "qlr/parallel.hpp"
#include "qlr/report.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

namespace qlr::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t parse_u64(std::string_view s, const std::string &what) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw UsageError(what + ": '" + std::string(s) + "' is not a non-negative integer");
  return v;
}

// Flags shared by decompose and sweep.
struct OptimizerFlags {
  int q_bits = 2;
  int lr_bits = 16;
  int iters = 15;
  int inner_iters = 10;
  std::string q_granularity = "matrix";

  void add_to(CLI::App &app) {
    app.add_option("--q-bits", q_bits, "bit-width of Q")->capture_default_str();
    app.add_option("--lr-bits", lr_bits, "bit-width of L and R; 16 keeps them unquantized")
        ->capture_default_str();
    app.add_option("--iters", iters, "outer iterations T")->capture_default_str();
    app.add_option("--inner-iters", inner_iters, "LPLR inner iterations")->capture_default_str();
    app.add_option("--q-granularity", q_granularity, "scale per matrix or per column")
        ->check(CLI::IsMember({"matrix", "column"}))
        ->capture_default_str();
  }

  void validate() const {
    if (q_bits < QuantSpec::kMinBits || q_bits > QuantSpec::kMaxBits)
      throw UsageError("--q-bits must be in [2, 16], got " + std::to_string(q_bits));
    if (lr_bits < QuantSpec::kMinBits || lr_bits > QuantSpec::kMaxBits)
      throw UsageError("--lr-bits must be 16 or in [2, 15], got " + std::to_string(lr_bits));
    if (iters < 1)
      throw UsageError("--iters must be >= 1, got " + std::to_string(iters));
    if (inner_iters < 1)
      throw UsageError("--inner-iters must be >= 1, got " + std::to_string(inner_iters));
  }

  OptimizerConfig config(Index rank, InitStrategy init, std::uint64_t seed) const {
    OptimizerConfig cfg;
    cfg.outer_iters = iters;
    cfg.inner_iters = inner_iters;
    cfg.rank = rank;
    cfg.q_bits = q_bits;
    if (lr_bits != 16)
      cfg.lr_bits = lr_bits;
    cfg.init = init;
    cfg.q_granularity = q_granularity == "column" ? Granularity::PerColumn : Granularity::PerMatrix;
    cfg.seed = seed;
    return cfg;
  }
};

InitStrategy::Kind parse_init(const std::string &name) {
  if (name == "zero")
    return InitStrategy::Kind::Zero;
  if (name == "lrapprox")
    return InitStrategy::Kind::LRApproxW;
  if (name == "odlri")
    return InitStrategy::Kind::Odlri;
  throw UsageError("unknown init '" + name + "' (expected zero, lrapprox or odlri)");
}

json config_json(const OptimizerConfig &cfg) {
  return {{"rank", cfg.rank},
          {"q_bits", cfg.q_bits},
          {"q_granularity", cfg.q_granularity == Granularity::PerColumn ? "column" : "matrix"},
          {"lr_bits", cfg.lr_bits.value_or(16)},
          {"init", to_string(cfg.init.kind)},
          {"k", cfg.init.kind == InitStrategy::Kind::Odlri ? cfg.init.k : 0},
          {"iters", cfg.outer_iters},
          {"inner_iters", cfg.inner_iters},
          {"seed", cfg.seed}};
}

// Writes report.csv, Q/L/R.qlrm and manifest.json into `dir`; returns the report rows.
std::vector<report::Row> write_run(const fs::path &dir, const Trajectory<double> &traj,
                                   const OptimizerConfig &cfg, json manifest) {
  fs::create_directories(dir);
  const auto rows = report::rows_for(report::label_for(cfg), traj.records);
  io::write_file_atomic(dir / "report.csv", report::render(rows));
  io::write_matrix(dir / "Q.qlrm", dequantize(traj.final_q));
  io::write_matrix(dir / "L.qlrm", traj.final_factors.left);
  io::write_matrix(dir / "R.qlrm", traj.final_factors.right);

  manifest["config"] = config_json(cfg);
  manifest["q_scales"] = traj.final_q.scales;
  if (const auto &meta = traj.final_factors.quant_meta) {
    manifest["l_scales"] = meta->scales_left;
    manifest["r_scales"] = meta->scales_right;
  }
  io::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  return rows;
}

Matrix load(const std::string &flag, const std::string &path) {
  try {
    return io::read_matrix(path);
  } catch (const Error &e) {
    throw Error(e.code(), flag + " " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------- decompose

struct DecomposeFlags {
  std::string weights, hessian, calib, out, init = "zero";
  Index rank = 0;
  std::optional<Index> k;
  std::uint64_t seed = 0;
  OptimizerFlags opt;
};

void add_decompose(CLI::App &app, DecomposeFlags &f) {
  app.add_option("--weights", f.weights, "QLRM weight matrix W (m x n)")->required();
  auto *hess = app.add_option("--hessian", f.hessian, "QLRM Hessian H (n x n)");
  auto *calib = app.add_option("--calib", f.calib, "QLRM activations X (n x d); H = X X^T");
  hess->excludes(calib);
  app.add_option("--rank", f.rank, "rank r of L R")->required();
  app.add_option("--init", f.init, "initialization strategy")
      ->check(CLI::IsMember({"zero", "lrapprox", "odlri"}))
      ->capture_default_str();
  app.add_option("--k", f.k, "outlier channels for odlri (default: rank-dependent policy)");
  app.add_option("--out", f.out, "output directory")->required();
  app.add_option("--seed", f.seed, "seed recorded with the run")->capture_default_str();
  f.opt.add_to(app);
}

int cmd_decompose(const DecomposeFlags &f, std::ostream &out) {
  if (f.rank < 1)
    throw UsageError("--rank must be >= 1, got " + std::to_string(f.rank));
  if (f.hessian.empty() == f.calib.empty())
    throw UsageError("exactly one of --hessian or --calib is required");
  f.opt.validate();

  const Matrix w = load("--weights", f.weights);
  const auto h = f.hessian.empty() ? hessian_from_activations(load("--calib", f.calib))
                                   : Hessian<double>::from_matrix(load("--hessian", f.hessian));
  if (h.dim() != w.cols())
    throw UsageError("--weights has " + std::to_string(w.cols()) + " columns but the Hessian is " +
                     std::to_string(h.dim()) + "-dimensional");
  if (f.rank > std::min(w.rows(), w.cols()))
    throw UsageError("--rank " + std::to_string(f.rank) + " exceeds min(m, n) = " +
                     std::to_string(std::min(w.rows(), w.cols())));

  InitStrategy init{parse_init(f.init), 0};
  if (init.kind == InitStrategy::Kind::Odlri) {
    init.k = f.k.value_or(k_for_rank(f.rank, w.cols()));
    if (init.k < 1 || init.k > std::min(f.rank, w.cols()))
      throw UsageError("--k must be in [1, min(rank, n)], got " + std::to_string(init.k));
  }

  const auto cfg = f.opt.config(f.rank, init, f.seed);
  const auto traj = run(w, h, cfg);

  json manifest = {{"command", "decompose"}, {"weights", f.weights}, {"m", w.rows()},
                   {"n", w.cols()}};
  if (!f.hessian.empty())
    manifest["hessian"] = f.hessian;
  else
    manifest["calib"] = f.calib;
  write_run(f.out, traj, cfg, manifest);

  const auto &last = traj.records.back();
  out << "decompose: " << traj.records.size() << " iterations, final act_err "
      << std::setprecision(6) << last.act_err << ", q_scale " << last.q_scale << " -> " << f.out
      << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- synth

struct SynthFlags {
  Index m = 64, n = 64, d = 256, outliers = 4;
  double gain = 10.0;
  std::uint64_t seed = 0;
  std::string out;

  void add_dims(CLI::App &app) {
    app.add_option("--m", m, "rows of W")->capture_default_str();
    app.add_option("--n", n, "input channels")->capture_default_str();
    app.add_option("--d", d, "calibration samples")->capture_default_str();
    app.add_option("--outliers", outliers, "planted outlier channels")->capture_default_str();
    app.add_option("--gain", gain, "outlier channel gain (>= 1)")->capture_default_str();
  }

  void validate() const {
    if (m < 1)
      throw UsageError("--m must be >= 1");
    if (n < 1)
      throw UsageError("--n must be >= 1");
    if (d < 1)
      throw UsageError("--d must be >= 1");
    if (outliers < 0 || outliers > n)
      throw UsageError("--outliers must be in [0, n]");
    if (!(gain >= 1.0) || !std::isfinite(gain))
      throw UsageError("--gain must be a finite value >= 1");
  }
};

struct SynthData {
  Matrix w;
  PlantedActivations act;
};

SynthData synthesize(const SynthFlags &f, std::uint64_t seed) {
  return {synth_weights(f.m, f.n, seed), synth_activations(f.n, f.d, f.outliers, f.gain, seed)};
}

int cmd_synth(const SynthFlags &f, std::ostream &out) {
  f.validate();
  const auto data = synthesize(f, f.seed);
  const auto h = hessian_from_activations(data.act.x);
  const fs::path dir = f.out;
  fs::create_directories(dir);
  io::write_matrix(dir / "W.qlrm", data.w);
  io::write_matrix(dir / "X.qlrm", data.act.x);
  io::write_matrix(dir / "H.qlrm", h.matrix());
  std::string listing;
  for (Index i : data.act.outliers)
    listing += std::to_string(i) + "\n";
  io::write_file_atomic(dir / "outliers.txt", listing);
  out << "synth: W " << f.m << "x" << f.n << ", X " << f.n << "x" << f.d << ", "
      << data.act.outliers.size() << " outliers -> " << f.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- sweep

struct SweepFlags {
  std::string inits = "zero,lrapprox,odlri";
  std::string ranks = "8";
  std::string seeds = "0..49";
  std::string k_mode = "paper";
  SynthFlags synth;
  OptimizerFlags opt;
  std::string out;
};

struct KPolicy {
  enum class Mode { Paper, Fixed, EqualRank } mode = Mode::Paper;
  Index fixed = 0;

  static KPolicy parse(const std::string &text) {
    if (text == "paper")
      return {Mode::Paper, 0};
    if (text == "equal-rank")
      return {Mode::EqualRank, 0};
    if (text.starts_with("fixed:")) {
      const auto k = parse_u64(std::string_view(text).substr(6), "--k-mode");
      if (k < 1)
        throw UsageError("--k-mode fixed:K needs K >= 1");
      return {Mode::Fixed, static_cast<Index>(k)};
    }
    throw UsageError("--k-mode must be paper, fixed:K or equal-rank, got '" + text + "'");
  }

  Index resolve(Index rank, Index n) const {
    switch (mode) {
    case Mode::Paper: return k_for_rank(rank, n);
    case Mode::EqualRank: return std::min(rank, n);
    case Mode::Fixed: return fixed;
    }
    return 0;
  }
};

struct SweepRun {
  std::uint64_t seed;
  Index rank;
  InitStrategy init;
  std::vector<report::Row> rows;
};

void add_sweep(CLI::App &app, SweepFlags &f) {
  app.add_option("--inits", f.inits, "comma list of zero, lrapprox, odlri")->capture_default_str();
  app.add_option("--ranks", f.ranks, "comma list of ranks")->capture_default_str();
  app.add_option("--seeds", f.seeds, "seeds: a..b (inclusive) or comma list")
      ->capture_default_str();
  app.add_option("--k-mode", f.k_mode, "paper | fixed:K | equal-rank")->capture_default_str();
  app.add_option("--out", f.out, "output directory")->required();
  f.synth.add_dims(app);
  f.opt.add_to(app);
}

std::string summarize(const std::vector<SweepRun> &runs, const std::vector<Index> &ranks,
                      const std::vector<InitStrategy::Kind> &kinds) {
  // Final act_err keyed by (rank, seed) for the zero-init baseline.
  std::map<std::pair<Index, std::uint64_t>, double> zero_final;
  for (const auto &r : runs)
    if (r.init.kind == InitStrategy::Kind::Zero)
      zero_final[{r.rank, r.seed}] = r.rows.back().record.act_err;

  std::ostringstream s;
  s << "rank,strategy,runs,mean_final_act_err,mean_final_q_scale,win_rate_vs_zero\n";
  for (Index rank : ranks) {
    for (auto kind : kinds) {
      std::size_t count = 0, wins = 0, compared = 0;
      double err_sum = 0, scale_sum = 0;
      for (const auto &r : runs) {
        if (r.rank != rank || r.init.kind != kind)
          continue;
        const auto &last = r.rows.back().record;
        ++count;
        err_sum += last.act_err;
        scale_sum += last.q_scale;
        if (auto it = zero_final.find({rank, r.seed}); it != zero_final.end()) {
          ++compared;
          wins += last.act_err < it->second ? 1 : 0;
        }
      }
      s << rank << ',' << to_string(kind) << ',' << count << ',' << std::setprecision(17)
        << err_sum / static_cast<double>(count) << ',' << scale_sum / static_cast<double>(count)
        << ',';
      if (compared > 0 && kind != InitStrategy::Kind::Zero)
        s << static_cast<double>(wins) / static_cast<double>(compared);
      else
        s << "NA";
      s << '\n';
    }
  }
  return s.str();
}

int cmd_sweep(const SweepFlags &f, std::ostream &out) {
  f.synth.validate();
  f.opt.validate();
  const auto k_policy = KPolicy::parse(f.k_mode);

  std::vector<InitStrategy::Kind> kinds;
  for (const auto &name : split_list(f.inits))
    kinds.push_back(parse_init(name));
  if (kinds.empty())
    throw UsageError("--inits must name at least one strategy");

  std::vector<Index> ranks;
  for (const auto &text : split_list(f.ranks)) {
    const auto r = static_cast<Index>(parse_u64(text, "--ranks"));
    if (r < 1 || r > std::min(f.synth.m, f.synth.n))
      throw UsageError("--ranks entry " + text + " outside [1, min(m, n)]");
    ranks.push_back(r);
  }
  if (ranks.empty())
    throw UsageError("--ranks must list at least one rank");

  const auto seeds = parse_seed_list(f.seeds);

  std::vector<SweepRun> runs;
  for (auto seed : seeds)
    for (Index rank : ranks)
      for (auto kind : kinds) {
        InitStrategy init{kind, 0};
        if (kind == InitStrategy::Kind::Odlri) {
          init.k = k_policy.resolve(rank, f.synth.n);
          if (init.k < 1 || init.k > std::min(rank, f.synth.n))
            throw UsageError("--k-mode gives k = " + std::to_string(init.k) + " for rank " +
                             std::to_string(rank) + ", outside [1, min(rank, n)]");
        }
        runs.push_back({seed, rank, init, {}});
      }

  const fs::path root = f.out;
  fs::create_directories(root / "runs");
  parallel_for(runs.size(), thread_limit(), [&](std::size_t i) {
    auto &r = runs[i];
    const auto data = synthesize(f.synth, r.seed);
    const auto h = hessian_from_activations(data.act.x);
    const auto cfg = f.opt.config(r.rank, r.init, r.seed);
    const auto traj = run(data.w, h, cfg);
    const std::string name = "s" + std::to_string(r.seed) + "_r" + std::to_string(r.rank) + "_" +
                             to_string(r.init.kind);
    r.rows = write_run(root / "runs" / name, traj, cfg, {{"command", "sweep-run"}});
  });

  std::vector<report::Row> combined;
  for (const auto &r : runs)
    combined.insert(combined.end(), r.rows.begin(), r.rows.end());
  io::write_file_atomic(root / "report.csv", report::render(combined));

  const auto summary = summarize(runs, ranks, kinds);
  io::write_file_atomic(root / "summary.csv", summary);

  json manifest = {{"command", "sweep"},       {"inits", f.inits},
                   {"ranks", ranks},           {"seeds", seeds},
                   {"k_mode", f.k_mode},       {"m", f.synth.m},
                   {"n", f.synth.n},           {"d", f.synth.d},
                   {"outliers", f.synth.outliers}, {"gain", f.synth.gain},
                   {"q_bits", f.opt.q_bits},   {"lr_bits", f.opt.lr_bits},
                   {"iters", f.opt.iters},     {"inner_iters", f.opt.inner_iters},
                   {"q_granularity", f.opt.q_granularity}};
  io::write_file_atomic(root / "manifest.json", manifest.dump(2) + "\n");

  out << "sweep: " << runs.size() << " runs -> " << f.out << "\n" << summary;
  return kExitOk;
}

int exit_code_for(ErrorCode code) {
  switch (code) {
  case ErrorCode::NotFactorizable:
  case ErrorCode::SingularFactor:
  case ErrorCode::NonFinite:
    return kExitNumerical;
  default:
    return kExitUsage;
  }
}

std::string one_line(std::string s) {
  for (auto &c : s)
    if (c == '\n' || c == '\r')
      c = ' ';
  return s;
}

} // namespace

std::vector<std::string> split_list(const std::string &text) {
  std::vector<std::string> items;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, ',');)
    if (!item.empty())
      items.push_back(item);
  return items;
}

std::vector<std::uint64_t> parse_seed_list(const std::string &text) {
  std::vector<std::uint64_t> seeds;
  for (const auto &item : split_list(text)) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      seeds.push_back(parse_u64(item, "--seeds"));
      continue;
    }
    const auto lo = parse_u64(std::string_view(item).substr(0, dots), "--seeds");
    const auto hi = parse_u64(std::string_view(item).substr(dots + 2), "--seeds");
    if (lo > hi)
      throw UsageError("--seeds range " + item + " is empty");
    for (auto s = lo; s <= hi; ++s)
      seeds.push_back(s);
  }
  if (seeds.empty())
    throw UsageError("--seeds must list at least one seed");
  return seeds;
}

std::size_t thread_limit() {
  if (const char *env = std::getenv("QLR_THREADS")) {
    const auto n = parse_u64(env, "QLR_THREADS");
    if (n < 1)
      throw UsageError("QLR_THREADS must be a positive integer");
    return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Q + LR weight decomposition with pluggable low-rank initialization", "qlr"};
  app.require_subcommand(1);

  DecomposeFlags decompose;
  auto *decompose_cmd = app.add_subcommand("decompose", "decompose W into Q + L R");
  add_decompose(*decompose_cmd, decompose);

  SynthFlags synth;
  auto *synth_cmd = app.add_subcommand("synth", "write a seeded planted-outlier instance");
  synth.add_dims(*synth_cmd);
  synth_cmd->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "output directory")->required();

  SweepFlags sweep;
  auto *sweep_cmd = app.add_subcommand("sweep", "cross-product of inits, ranks and seeds");
  add_sweep(*sweep_cmd, sweep);

  std::vector<std::string> argv_storage{"qlr"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char *> argv;
  for (const auto &a : argv_storage)
    argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp &) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError &e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kExitUsage;
  }

  try {
    if (decompose_cmd->parsed())
      return cmd_decompose(decompose, out);
    if (synth_cmd->parsed())
      return cmd_synth(synth, out);
    return cmd_sweep(sweep, out);
  } catch (const UsageError &e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kExitUsage;
  } catch (const Error &e) {
    err << "error: " << one_line(e.what()) << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception &e) {
    err << "error: " << one_line(e.what()) << "\n";
    return kExitNumerical;
  }
}

int main(int argc, char **argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

} // namespace qlr::cli
