#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "invnets/bnn.hpp"
#include "invnets/common.hpp"
#include "invnets/invariance.hpp"
#include "invnets/networks.hpp"
#include "invnets/report.hpp"
#include "invnets/signals.hpp"
#include "invnets/targets.hpp"

namespace invnets::cli {

inline constexpr int kOk = 0;
inline constexpr int kInputError = 1;
inline constexpr int kCheckFailure = 2;

namespace detail {

/// Derives `count` distinct experiment seeds from a base seed.
inline std::vector<std::uint64_t> derive_seeds(std::uint64_t base, int count) {
  std::vector<std::uint64_t> seeds(count);
  std::uint64_t state = base;
  for (int i = 0; i < count; ++i) seeds[i] = rng::splitmix64(state);
  return seeds;
}

inline num::RVec map_vec(const std::vector<double>& v) {
  return Eigen::Map<const num::RVec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// invariance-suite
// ---------------------------------------------------------------------------

inline report::Report run_invariance_suite(const report::Config& cfg) {
  report::Report rep;
  rep.subcommand = "invariance-suite";
  rep.config = cfg;
  rep.seed = cfg.get_u64("seed");
  const int dim = cfg.get_int("dim");
  const std::size_t samples = static_cast<std::size_t>(cfg.get_int("samples"));
  const int n_rotations = cfg.get_int("rotations");

  std::ostringstream table;
  table << "check,value,threshold,passed\n";
  auto push_row = [&](const std::string& name, double value, double threshold, bool passed) {
    table << name << ',' << report::fmt(value) << ',' << report::fmt(threshold) << ','
          << (passed ? 1 : 0) << '\n';
    rep.add_check(name, passed, report::fmt(value));
  };

  auto seed_stream = rng::Stream(rep.seed, 0xACE);
  std::vector<inv::GroupAction> rotations;
  for (int i = 0; i < n_rotations; ++i)
    rotations.push_back(inv::sample_action(inv::ActionKind::rotation, dim, seed_stream));

  tgt::RadialTarget target = tgt::RadialTarget::alternating(dim, 1.0, 4);
  inv::Sampler shell_sampler = [&](rng::Stream& s) {
    return net::sample_shell(dim, target.shell_lo(), target.shell_hi(), s);
  };
  auto defect = inv::invariance_defect([&](const num::RVec& x) { return eval_radial(target, x); },
                                       rotations, shell_sampler, samples, rep.seed);
  push_row("radial_rotation_sup_defect", defect.sup_defect, 1e-9, defect.sup_defect <= 1e-9);

  // group axiom round trips: action then inverse returns the input
  double max_roundtrip = 0.0;
  double max_norm_drift = 0.0;
  for (auto kind : {inv::ActionKind::permutation, inv::ActionKind::rotation,
                    inv::ActionKind::translation}) {
    for (int k = 0; k < 16; ++k) {
      auto action = inv::sample_action(kind, dim, seed_stream);
      auto inv_action = inv::inverse(action);
      for (int s = 0; s < 16; ++s) {
        num::RVec x(dim);
        for (int j = 0; j < dim; ++j) x[j] = seed_stream.normal();
        num::RVec y = inv::apply_action(action, x);
        max_roundtrip =
            std::max(max_roundtrip, (inv::apply_action(inv_action, y) - x).cwiseAbs().maxCoeff());
        if (kind == inv::ActionKind::rotation)
          max_norm_drift = std::max(max_norm_drift, std::abs(y.norm() - x.norm()));
      }
    }
  }
  push_row("action_inverse_roundtrip", max_roundtrip, 1e-10, max_roundtrip <= 1e-10);
  push_row("rotation_norm_preserved", max_norm_drift, 1e-10, max_norm_drift <= 1e-10);

  bool closure_ok = true;
  try {
    auto p1 = inv::sample_action(inv::ActionKind::permutation, dim, seed_stream);
    auto p2 = inv::sample_action(inv::ActionKind::permutation, dim, seed_stream);
    (void)inv::compose(p1, p2);
  } catch (const std::exception&) {
    closure_ok = false;
  }
  push_row("permutation_closure", closure_ok ? 1.0 : 0.0, 1.0, closure_ok);

  // Lemma-1 closure bound on constructed (f, g_eps) pairs
  inv::Sampler normal_sampler = [&](rng::Stream& s) {
    num::RVec x(dim);
    for (int j = 0; j < dim; ++j) x[j] = s.normal();
    return x;
  };
  for (double eps : {0.1, 0.01}) {
    auto g = [](const num::RVec& x) { return x.squaredNorm(); };
    auto f = [eps](const num::RVec& x) { return x.squaredNorm() + eps * std::sin(x[0]); };
    bool ok = false;
    try {
      ok = inv::closure_bound_check(f, g, eps, rotations, normal_sampler, samples, rep.seed);
    } catch (const std::exception&) {
      ok = false;
    }
    push_row("closure_bound_eps_" + report::fmt(eps), ok ? 1.0 : 0.0, 1.0, ok);
  }

  rep.table_csv = table.str();
  return rep;
}

// ---------------------------------------------------------------------------
// lfinite
// ---------------------------------------------------------------------------

inline report::Report run_lfinite(const report::Config& cfg) {
  report::Report rep;
  rep.subcommand = "lfinite";
  rep.config = cfg;
  rep.seed = cfg.get_u64("seed");
  const int l = cfg.get_int("l");
  const double half_range = cfg.get_double("half_range");
  const int grid = cfg.get_int("grid");
  const std::string which = cfg.get("activation");

  struct Entry {
    const char* name;
    std::function<double(double)> fn;
    int expected;  // 1 true, 0 false, -1 unknown
  };
  std::vector<Entry> entries = {
      {"sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, 1},
      {"tanh", [](double x) { return std::tanh(x); }, 1},
      {"gaussian", [](double x) { return std::exp(-x * x); }, 0},
      {"identity", [](double x) { return x; }, 0},
  };
  if (which != "all") {
    std::vector<Entry> filtered;
    for (auto& e : entries)
      if (which == e.name) filtered.push_back(e);
    if (filtered.empty()) throw ContractError("lfinite: unknown activation '" + which + "'");
    entries = std::move(filtered);
  }

  std::ostringstream table;
  table << "activation,l,integral,is_l_finite\n";
  for (const auto& e : entries) {
    auto res = inv::check_l_finite(e.fn, l, half_range, grid);
    table << e.name << ',' << l << ',' << report::fmt(res.integral) << ','
          << (res.is_l_finite ? 1 : 0) << '\n';
    if (e.expected >= 0 && l == 1) {
      bool pass = res.is_l_finite == (e.expected == 1);
      rep.add_check(std::string(e.name) + "_l_finite_as_expected", pass,
                    "integral=" + report::fmt(res.integral));
    }
  }
  rep.table_csv = table.str();
  return rep;
}

// ---------------------------------------------------------------------------
// gap-bound
// ---------------------------------------------------------------------------

inline report::Report run_gap_bound(const report::Config& cfg) {
  report::Report rep;
  rep.subcommand = "gap-bound";
  rep.config = cfg;
  rep.seed = cfg.get_u64("seed");
  const int d = cfg.get_int("d");
  const double c2 = cfg.get_double("c2");
  int bands = cfg.get_int("bands");
  if (bands == 0) bands = tgt::default_band_count(d, c2);
  const std::size_t samples = static_cast<std::size_t>(cfg.get_int("samples"));
  const auto mode = tgt::surrogate_mode_from(cfg.get("mode"));

  tgt::RadialTarget target = tgt::RadialTarget::alternating(d, c2, bands);
  tgt::LipschitzSurrogate surrogate = tgt::LipschitzSurrogate::make(target, mode);
  tgt::ShellDensity phi = tgt::ShellDensity::make(d, c2);
  tgt::GapEstimate gap = tgt::surrogate_gap_mc(target, surrogate, phi, samples, rep.seed);

  bool pass = gap.estimate + 3.0 * gap.std_error <= gap.bound;
  rep.add_check("lemma5_gap_bound", pass,
                report::fmt(gap.estimate) + " + 3*" + report::fmt(gap.std_error) +
                    " <= " + report::fmt(gap.bound));
  rep.add_metric("estimate", gap.estimate);
  rep.add_metric("std_error", gap.std_error);
  rep.add_metric("bound", gap.bound);

  std::ostringstream table;
  table << "d,c2,n_bands,mode,samples,estimate,std_error,bound,passed\n";
  table << d << ',' << report::fmt(c2) << ',' << bands << ',' << to_string(mode) << ',' << samples
        << ',' << report::fmt(gap.estimate) << ',' << report::fmt(gap.std_error) << ','
        << report::fmt(gap.bound) << ',' << (pass ? 1 : 0) << '\n';
  rep.table_csv = table.str();

  tgt::TargetSpec spec{d, c2, bands, target.betas, mode, rep.seed};
  rep.add_metric("target_document", "embedded");
  rep.add_metric("target_kv", tgt::to_kv(spec));
  return rep;
}

// ---------------------------------------------------------------------------
// width-sweep
// ---------------------------------------------------------------------------

inline net::SweepConfig sweep_config_from(const report::Config& cfg) {
  net::SweepConfig sc;
  sc.n_train = cfg.get_int("n_train");
  sc.n_test = cfg.get_int("n_test");
  sc.train.max_epochs = cfg.get_int("epochs");
  sc.train.step_size = cfg.get_double("step");
  return sc;
}

inline report::Report run_width_sweep(const report::Config& cfg) {
  report::Report rep;
  rep.subcommand = "width-sweep";
  rep.config = cfg;
  rep.seed = cfg.get_u64("seed");
  const std::string arch = cfg.get("arch");
  const int d = cfg.get_int("d");
  const double c2 = cfg.get_double("c2");
  const int bands = cfg.get_int("bands");
  std::vector<int> widths = cfg.get_int_list("widths");
  auto seeds = detail::derive_seeds(rep.seed, cfg.get_int("seeds"));
  net::SweepConfig sc = sweep_config_from(cfg);

  tgt::RadialTarget target = tgt::RadialTarget::alternating(d, c2, bands);

  if (arch == "cvnn-vs-fcn") {
    auto compare = net::matched_budget_compare(target, widths, seeds, sc);
    std::ostringstream table;
    table << "cvnn_width,fcn_width,cvnn_params,fcn_params,seed,cvnn_mse,fcn_mse,valid\n";
    for (const auto& c : compare.cells)
      table << c.cvnn_width << ',' << c.fcn_width << ',' << c.cvnn_params << ',' << c.fcn_params
            << ',' << c.seed << ',' << report::fmt(c.cvnn_mse) << ',' << report::fmt(c.fcn_mse)
            << ',' << (c.valid ? 1 : 0) << '\n';
    rep.table_csv = table.str();
    rep.add_metric("fraction_cvnn_wins", compare.fraction_cvnn_wins);
    rep.add_check("cvnn_beats_fcn_matched_budget", compare.fraction_cvnn_wins >= 0.6,
                  "fraction=" + report::fmt(compare.fraction_cvnn_wins));
    return rep;
  }

  net::Arch a;
  if (arch == "cvnn") a = net::Arch::cvnn;
  else if (arch == "fcn") a = net::Arch::fcn;
  else if (arch == "cnn1d") a = net::Arch::cnn1d;
  else throw ContractError("width-sweep: unknown arch '" + arch + "'");

  auto sweep = net::width_sweep(target, a, widths, seeds, sc);
  rep.table_csv = net::sweep_to_csv(sweep);
  rep.add_metric("loglog_slope", sweep.loglog_slope);
  for (std::size_t i = 0; i < sweep.widths.size(); ++i)
    rep.add_metric("median_mse_w" + std::to_string(sweep.widths[i]), sweep.median_test_mse[i]);

  if (a == net::Arch::cvnn) {
    bool monotone = true;
    for (std::size_t i = 1; i < sweep.median_test_mse.size(); ++i)
      if (sweep.median_test_mse[i] > sweep.median_test_mse[i - 1] + 1e-12) monotone = false;
    rep.add_check("median_mse_non_increasing", monotone, "");
    rep.add_check("loglog_slope_leq_-0.5", sweep.loglog_slope <= -0.5,
                  "slope=" + report::fmt(sweep.loglog_slope));
  } else {
    rep.add_check("sweep_completed", !sweep.cells.empty(), "");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// cnn-shift
// ---------------------------------------------------------------------------

inline report::Report run_cnn_shift(const report::Config& cfg) {
  report::Report rep;
  rep.subcommand = "cnn-shift";
  rep.config = cfg;
  rep.seed = cfg.get_u64("seed");
  const int d = cfg.get_int("d");
  const double c2 = cfg.get_double("c2");
  const int bands = cfg.get_int("bands");
  std::vector<int> filters = cfg.get_int_list("filters");
  std::vector<int> fcn_widths = cfg.get_int_list("fcn_widths");
  auto seeds = detail::derive_seeds(rep.seed, cfg.get_int("seeds"));
  net::SweepConfig sc = sweep_config_from(cfg);
  const double margin = cfg.get_double("margin");

  tgt::RadialTarget bands_target = tgt::RadialTarget::alternating(d, c2, bands);
  auto compare = net::cnn_shift_compare(bands_target, filters, fcn_widths, seeds, sc, margin);

  std::ostringstream table;
  table << "filter_len,fcn_width,cnn_params,fcn_params,seed,cnn_mse,fcn_mse,invariance_defect,"
           "valid\n";
  for (const auto& c : compare.cells)
    table << c.filter_len << ',' << c.fcn_width << ',' << c.cnn_params << ',' << c.fcn_params
          << ',' << c.seed << ',' << report::fmt(c.cnn_mse) << ',' << report::fmt(c.fcn_mse) << ','
          << report::fmt(c.invariance_defect) << ',' << (c.valid ? 1 : 0) << '\n';
  rep.table_csv = table.str();
  rep.add_metric("fraction_cnn_wins", compare.fraction_cnn_wins);
  rep.add_metric("max_invariance_defect", compare.max_invariance_defect);
  rep.add_check("circular_meanpool_shift_invariant", compare.max_invariance_defect <= 1e-12,
                "defect=" + report::fmt(compare.max_invariance_defect));
  rep.add_check("cnn_beats_fcn_matched_budget", compare.fraction_cnn_wins >= 0.6,
                "fraction=" + report::fmt(compare.fraction_cnn_wins));
  return rep;
}

// ---------------------------------------------------------------------------
// bnn-demo
// ---------------------------------------------------------------------------

inline report::Report run_bnn_demo(const report::Config& cfg) {
  report::Report rep;
  rep.subcommand = "bnn-demo";
  rep.config = cfg;
  rep.seed = cfg.get_u64("seed");
  const int d = cfg.get_int("d");
  const int width = cfg.get_int("width");
  const int depth = cfg.get_int("depth");
  const int iterations = cfg.get_int("iterations");
  const int mc_budget = cfg.get_int("mc_budget");
  const int n_data = cfg.get_int("n_data");
  const double noise_var = cfg.get_double("noise_var");
  const double damping = cfg.get_double("damping");

  // algebra spot checks
  auto stream = rng::Stream(rep.seed, 0xB0B);
  double btx_max = 0.0;
  for (int dd = 2; dd <= 32; ++dd) {
    num::RVec x(dd);
    for (int j = 0; j < dd; ++j) x[j] = stream.normal();
    x[dd - 1] = (dd % 3 == 0) ? 0.0 : x[dd - 1];  // exercise the pivoted path
    auto basis = bnn::build_translation_basis(x);
    btx_max = std::max(btx_max, (basis.b.transpose() * x).cwiseAbs().maxCoeff());
  }
  rep.add_check("translation_basis_annihilates_anchor", btx_max <= 1e-12,
                "max|B'x|=" + report::fmt(btx_max));

  auto random_spd = [&](int n) {
    num::RMat m(n, n);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stream.normal();
    return num::RMat(m * m.transpose() + 0.5 * num::RMat::Identity(n, n));
  };
  double woodbury_resid = 0.0;
  double identity_resid = 0.0;
  for (int rep_i = 0; rep_i < 20; ++rep_i) {
    int n = 6;
    num::RMat sigma = random_spd(n);
    num::RVec anchor(n);
    for (int j = 0; j < n; ++j) anchor[j] = stream.normal();
    auto basis = bnn::build_translation_basis(anchor);
    bnn::GaussianBelief q{num::RVec::Zero(n), sigma};
    auto marg = bnn::marginal_over_subspace(q, basis, 3.0);
    num::RMat direct = marg.cov.inverse();
    woodbury_resid =
        std::max(woodbury_resid, (marg.precision - direct).cwiseAbs().maxCoeff());
    num::RMat sw = random_spd(n);
    num::RMat lhs = (sigma.inverse() + sw.inverse()).inverse();
    num::RMat rhs = sigma * (sigma + sw).inverse() * sw;
    identity_resid = std::max(identity_resid, (lhs - rhs).cwiseAbs().maxCoeff());
  }
  rep.add_check("woodbury_matches_direct_inverse", woodbury_resid <= 1e-8,
                "resid=" + report::fmt(woodbury_resid));
  rep.add_check("printed_two_form_identity", identity_resid <= 1e-8,
                "resid=" + report::fmt(identity_resid));

  // toy layerwise run on data from a reference network
  auto data_stream = rng::Stream(rep.seed, 0xDA);
  num::RMat x(n_data, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = data_stream.normal();
  num::RMat w1(width, d);
  for (Eigen::Index i = 0; i < w1.size(); ++i) w1.data()[i] = data_stream.normal();
  num::RVec w2(width);
  for (int i = 0; i < width; ++i) w2[i] = data_stream.normal();
  num::RVec y(n_data);
  for (int i = 0; i < n_data; ++i) {
    num::RVec h = (w1 * x.row(i).transpose() / d).array().tanh();
    y[i] = std::tanh(w2.dot(h) / width);
  }

  bnn::LayerwiseConfig lc;
  lc.widths.assign(depth - 1, width);
  lc.widths.push_back(1);
  lc.iterations = iterations;
  lc.mc_budget = mc_budget;
  lc.seed = rep.seed;
  lc.noise_var = noise_var;
  lc.damping = damping;
  auto result = bnn::layerwise_iterate(x, y, lc);

  const auto& trace = result.trace.total;
  bool positive = std::all_of(trace.begin(), trace.end(), [](double v) { return v > 0.0; });
  bool decreasing = true;
  for (std::size_t t = 3; t + 1 < trace.size(); ++t)
    if (trace[t + 1] > trace[t]) decreasing = false;
  rep.add_check("trace_positive", positive, "");
  rep.add_check("trace_decreasing_after_burnin", decreasing, "");
  bool rate_ok = false;
  double alpha = 0.0, r2 = 0.0;
  try {
    std::vector<double> tail(trace.begin() + std::min<std::size_t>(3, trace.size()), trace.end());
    auto rate = bnn::fit_geometric_rate(tail);
    alpha = rate.alpha;
    r2 = rate.r_squared;
    rate_ok = alpha > 1.0 && r2 >= 0.8;
  } catch (const std::exception&) {
    rate_ok = false;
  }
  rep.add_metric("alpha", alpha);
  rep.add_metric("r_squared", r2);
  rep.add_check("geometric_rate_alpha_gt_1_r2_geq_0.8", rate_ok,
                "alpha=" + report::fmt(alpha) + " r2=" + report::fmt(r2));

  rep.table_csv = bnn::trace_to_csv(result.trace);
  return rep;
}

// ---------------------------------------------------------------------------
// signal-bench
// ---------------------------------------------------------------------------

inline report::Report run_signal_bench(const report::Config& cfg) {
  report::Report rep;
  rep.subcommand = "signal-bench";
  rep.config = cfg;
  rep.seed = cfg.get_u64("seed");
  const std::string checks = cfg.get("checks");

  sig::ArrayConfig array;
  array.n_sources = cfg.get_int("n");
  array.m_doublets = cfg.get_int("m");
  array.snr_db = cfg.get_double("snr_db");
  array.source_rho = cfg.get_double("rho");

  if (checks == "doa" || checks == "all") {
    sig::ArrayConfig clean = array;
    clean.n_sources = 2;
    clean.snr_db = std::numeric_limits<double>::infinity();
    clean.source_rho = 0.0;
    std::vector<double> thetas = {-0.4, 0.5};
    auto batch = sig::simulate(clean, thetas, 200, rep.seed);
    auto cov = sig::sample_covariance(batch);
    auto esp = sig::esprit(clean, cov);
    double esp_err = 0.0;
    for (int i = 0; i < 2; ++i) esp_err = std::max(esp_err, std::abs(esp.thetas[i] - thetas[i]));
    rep.add_check("noiseless_esprit_within_1e-6", esp_err <= 1e-6,
                  "max_err=" + report::fmt(esp_err));
    double mod_err = 0.0;
    for (const auto& lam : esp.op_eigenvalues)
      mod_err = std::max(mod_err, std::abs(std::abs(lam) - 1.0));
    rep.add_check("noiseless_esprit_unit_modulus", mod_err <= 1e-6,
                  "max|1-|lambda||=" + report::fmt(mod_err));
    const int grid = cfg.get_int("grid");
    auto mus = sig::music(clean, cov, grid);
    double cell = M_PI / grid;
    double mus_err = 0.0;
    for (int i = 0; i < 2; ++i) mus_err = std::max(mus_err, std::abs(mus.thetas[i] - thetas[i]));
    rep.add_check("noiseless_music_within_cell", mus_err <= cell,
                  "max_err=" + report::fmt(mus_err) + " cell=" + report::fmt(cell));
  }

  if (checks == "bench" || checks == "all") {
    sig::BenchConfig bc;
    bc.array = array;
    bc.snapshots = cfg.get_int("snapshots");
    bc.window = cfg.get_int("window");
    bc.music_grid = cfg.get_int("grid");
    bc.trials = cfg.get_int("trials");
    bc.seed = rep.seed;
    bc.window_stride = cfg.get_int("window_stride");
    bc.train.max_epochs = cfg.get_int("epochs");
    bc.train.step_size = cfg.get_double("step");

    std::vector<int> cvnn_widths = cfg.get_int_list("cvnn_widths");
    const int fcn_width = cfg.get_int("fcn_width");
    std::vector<sig::ForecastModel> models;
    for (int w : cvnn_widths) models.push_back({"cvnn", w});
    models.push_back({"fcn", fcn_width});
    models.push_back({"esprit_predictor", 0});
    models.push_back({"music_predictor", 0});
    auto rows = sig::forecast_benchmark(bc, models);
    rep.table_csv = sig::bench_to_csv(rows);

    auto find = [&](const std::string& kind, int w) -> const sig::BenchRow* {
      for (const auto& r : rows) {
        if (r.model != kind) continue;
        if ((kind == "cvnn" || kind == "fcn") &&
            r.settings != "size(" + std::to_string(bc.window) + "," + std::to_string(w) + ",1)")
          continue;
        return &r;
      }
      return nullptr;
    };
    const auto* cvnn_hi = find("cvnn", cvnn_widths.front());
    const auto* cvnn_lo = cvnn_widths.size() > 1 ? find("cvnn", cvnn_widths[1]) : nullptr;
    const auto* fcn = find("fcn", fcn_width);
    const auto* esp = find("esprit_predictor", 0);
    const auto* mus = find("music_predictor", 0);

    if (cvnn_hi && fcn && cvnn_hi->valid && fcn->valid) {
      rep.add_check("ordering_cvnn_below_fcn", cvnn_hi->mse_median < fcn->mse_median,
                    report::fmt(cvnn_hi->mse_median) + " vs " + report::fmt(fcn->mse_median));
    } else {
      rep.add_check("ordering_cvnn_below_fcn", false, "row missing or invalid");
    }
    if (esp && mus && esp->valid && mus->valid) {
      rep.add_check("ordering_esprit_below_music", esp->mse_median < mus->mse_median,
                    report::fmt(esp->mse_median) + " vs " + report::fmt(mus->mse_median));
    } else {
      rep.add_check("ordering_esprit_below_music", false, "row missing or invalid");
    }
    if (cvnn_hi && cvnn_lo && cvnn_hi->valid && cvnn_lo->valid) {
      rep.add_check("ordering_wide_cvnn_leq_narrow", cvnn_hi->mse_median <= cvnn_lo->mse_median,
                    report::fmt(cvnn_hi->mse_median) + " vs " + report::fmt(cvnn_lo->mse_median));
    } else if (cvnn_widths.size() > 1) {
      rep.add_check("ordering_wide_cvnn_leq_narrow", false, "row missing or invalid");
    }
  } else {
    rep.table_csv = "check,value\n";
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Argument handling.
// ---------------------------------------------------------------------------

struct SubcommandSpec {
  std::string name;
  std::vector<std::pair<std::string, std::string>> defaults;  // key -> default value
  std::function<report::Report(const report::Config&)> runner;
};

inline std::vector<SubcommandSpec> subcommand_specs() {
  return {
      {"invariance-suite",
       {{"dim", "4"},
        {"samples", "1000"},
        {"rotations", "10"},
        {"seed", "1"},
        {"out", "invariance_suite"}},
       run_invariance_suite},
      {"lfinite",
       {{"activation", "all"},
        {"l", "1"},
        {"half_range", "8"},
        {"grid", "2001"},
        {"seed", "1"},
        {"out", "lfinite"}},
       run_lfinite},
      {"gap-bound",
       {{"d", "4"},
        {"c2", "1"},
        {"bands", "0"},
        {"samples", "100000"},
        {"mode", "tent_corrected"},
        {"seed", "1"},
        {"out", "gap_bound"}},
       run_gap_bound},
      {"width-sweep",
       {{"arch", "cvnn"},
        {"d", "4"},
        {"c2", "1"},
        {"bands", "4"},
        {"widths", "8,16,32,64,128,256"},
        {"seeds", "5"},
        {"n_train", "3072"},
        {"n_test", "2048"},
        {"epochs", "1200"},
        {"step", "0.05"},
        {"seed", "1"},
        {"out", "width_sweep"}},
       run_width_sweep},
      {"cnn-shift",
       {{"d", "16"},
        {"c2", "1"},
        {"bands", "4"},
        {"filters", "4,8,12,15"},
        {"fcn_widths", "1,2,4,8"},
        {"seeds", "5"},
        {"n_train", "2048"},
        {"n_test", "384"},
        {"epochs", "800"},
        {"step", "0.05"},
        {"margin", "0.05"},
        {"seed", "1"},
        {"out", "cnn_shift"}},
       run_cnn_shift},
      {"bnn-demo",
       {{"d", "4"},
        {"width", "4"},
        {"depth", "2"},
        {"iterations", "30"},
        {"mc_budget", "64"},
        {"n_data", "64"},
        {"noise_var", "0.1"},
        {"damping", "0.15"},
        {"seed", "1"},
        {"out", "bnn_demo"}},
       run_bnn_demo},
      {"signal-bench",
       {{"n", "10"},
        {"m", "20"},
        {"snr_db", "10"},
        {"rho", "0.95"},
        {"trials", "20"},
        {"snapshots", "512"},
        {"grid", "1024"},
        {"window", "10"},
        {"window_stride", "2"},
        {"cvnn_widths", "150,50"},
        {"fcn_width", "150"},
        {"epochs", "150"},
        {"step", "0.05"},
        {"checks", "all"},
        {"seed", "1"},
        {"out", "signal_bench"}},
       run_signal_bench},
  };
}

/// Parses argv, resolves config (defaults < config file < explicit flags),
/// runs the subcommand, writes <out>.csv and <out>.json.
/// Exit codes: 0 ok, 1 input error, 2 a check failed.
inline int run(std::vector<std::string> args) {
  CLI::App app{"invnets: invariant-function approximation experiments"};
  app.require_subcommand(1);

  struct Pending {
    SubcommandSpec spec;
    CLI::App* sub = nullptr;
    std::map<std::string, std::string> flag_values;
    std::string config_path;
  };
  std::vector<std::shared_ptr<Pending>> pendings;
  for (const auto& spec : subcommand_specs()) {
    auto pending = std::make_shared<Pending>();
    pending->spec = spec;
    pending->sub = app.add_subcommand(spec.name);
    for (const auto& kv : spec.defaults) {
      pending->flag_values[kv.first] = kv.second;
      pending->sub->add_option("--" + kv.first, pending->flag_values[kv.first],
                               "default: " + kv.second);
    }
    pending->sub->add_option("--config", pending->config_path,
                             "key = value file; explicit flags win");
    pendings.push_back(pending);
  }

  std::reverse(args.begin(), args.end());
  try {
    app.parse(std::move(args));
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputError;
  }

  for (const auto& pending : pendings) {
    if (!pending->sub->parsed()) continue;
    try {
      std::set<std::string> known;
      for (const auto& kv : pending->spec.defaults) known.insert(kv.first);
      report::Config resolved;
      for (const auto& kv : pending->spec.defaults) resolved.set(kv.first, kv.second);
      if (!pending->config_path.empty()) {
        report::Config from_file = report::Config::parse_file(pending->config_path, known);
        for (const auto& item : from_file.items()) resolved.set(item.first, item.second);
      }
      for (const auto& kv : pending->spec.defaults) {
        const auto* opt = pending->sub->get_option_no_throw("--" + kv.first);
        if (opt && opt->count() > 0) resolved.set(kv.first, pending->flag_values[kv.first]);
      }
      report::Report rep = pending->spec.runner(resolved);
      rep.write(resolved.get("out"));
      int failures = 0;
      for (const auto& c : rep.checks) {
        std::cout << (c.passed ? "[pass] " : "[FAIL] ") << c.name
                  << (c.detail.empty() ? "" : ": " + c.detail) << "\n";
        if (!c.passed) ++failures;
      }
      std::cout << "report: " << resolved.get("out") << ".csv, " << resolved.get("out")
                << ".json\n";
      return failures == 0 ? kOk : kCheckFailure;
    } catch (const ContractError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kInputError;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kInputError;
    }
  }
  return kInputError;
}

inline int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args));
}

}  // namespace invnets::cli
