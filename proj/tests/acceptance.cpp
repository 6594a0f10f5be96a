// Acceptance checks: one PASS/FAIL line per criterion; exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <string>

#include "grad_suite.hpp"
#include "osssl/ablate.hpp"
#include "osssl/config.hpp"
#include "osssl/metrics.hpp"
#include "osssl/prototypes.hpp"
#include "osssl/trainer.hpp"
#include "pool_mc.hpp"
#include "test_util.hpp"

using namespace osssl;

namespace {

int failures = 0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void criterion(const std::string& name, double budget_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = secs < budget_s;
  const bool pass = o.pass && in_time;
  failures += !pass;
  std::cout << (pass ? "PASS " : "FAIL ") << name << " | " << o.detail
            << fmt(" | %.2fs (budget %.0fs%s)", secs, budget_s, in_time ? "" : ", exceeded") << std::endl;
}

TrainConfig desk() { return load_config(std::filesystem::path(OSSSL_CONFIG_DIR) / "desk.json"); }

// Per-row, per-seed summaries of one ablation sweep.
using Sweep = std::map<std::string, std::vector<RunSummary>>;

Sweep sweep(const TrainConfig& base, std::vector<std::string> rows, const std::string& dir) {
  AblationOptions opts;
  opts.seeds = 5;
  opts.only_rows = std::move(rows);
  opts.out_dir = testutil::scratch_dir(dir);
  const auto runs = ablate(base, opts);
  std::cout << ablation_table(runs);
  Sweep out;
  for (const auto& r : runs) {
    if (!r.ok) throw std::runtime_error(r.row + " seed " + std::to_string(r.repetition) + ": " + r.error);
    out[r.row].push_back(r.summary);
  }
  return out;
}

double mean(const std::vector<RunSummary>& v, const std::function<double(const RunSummary&)>& get) {
  double s = 0.0;
  for (const auto& x : v) s += get(x);
  return s / static_cast<double>(v.size());
}

double acc(const RunSummary& s) { return 100.0 * s.final_accuracy; }

}  // namespace

int main() {
  std::cout.setf(std::ios::unitbuf);

  criterion("gradient suite (20 seeds, SSL / clustering / labeled clustering / consistency)", 10, [] {
    double worst[4] = {0, 0, 0, 0};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      worst[0] = std::max(worst[0], gradsuite::ssl_error(seed));
      worst[1] = std::max(worst[1], gradsuite::cluster_unlabeled_error(seed));
      worst[2] = std::max(worst[2], gradsuite::cluster_labeled_error(seed));
      worst[3] = std::max(worst[3], gradsuite::cluster_cr_error(seed));
    }
    const double w = std::max({worst[0], worst[1], worst[2], worst[3]});
    return Outcome{w <= 1e-4, fmt("max rel err ssl %.2e, unl %.2e, lab %.2e, cr %.2e (tol 1e-4)", worst[0], worst[1],
                                  worst[2], worst[3])};
  });

  criterion("clustering loss structure (K=1, closed gate, logit shift)", 1, [] {
    Rng rng(7);
    ClusterConfig cfg;
    cfg.prototypes_per_class = 1;
    PrototypeBank one(2, 1, 4);
    for (std::size_t s = 0; s < 2; ++s) one.set_prototype(s, 0, testutil::random_unit(rng, 4));
    one.mark_initialized();
    bool k1 = true, closed = true;
    double shift = 0.0;
    for (int t = 0; t < 100; ++t) {
      const auto f = testutil::random_unit(rng, 4);
      ForwardResult open{f, {0.0, 0.0}, {0.999, 0.001}};
      const auto r = clustering_loss_unlabeled(one, open, 0, cfg);
      k1 = k1 && r.target && r.loss == 0.0;

      cfg.prototypes_per_class = 3;
      PrototypeBank bank(2, 3, 4);
      for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t j = 0; j < 3; ++j) bank.set_prototype(s, j, testutil::random_unit(rng, 4));
      bank.mark_initialized();
      ForwardResult shut{f, {0.0, 0.0}, {cfg.confidence_threshold, 1.0 - cfg.confidence_threshold}};
      const auto c = clustering_loss_unlabeled(bank, shut, 0, cfg);
      closed = closed && !c.target && c.loss == 0.0 && std::all_of(c.grad.begin(), c.grad.end(), [](double g) {
                 return g == 0.0;
               });
      cfg.prototypes_per_class = 1;

      const auto logits = testutil::random_vector(rng, 5, 10.0);
      Vector moved = logits;
      const double k = rng.normal(0.0, 100.0);
      for (double& v : moved) v += k;
      shift = std::max(shift, std::abs(contrast_nll(logits, 1) - contrast_nll(moved, 1)));
    }
    return Outcome{k1 && closed && shift <= 1e-10,
                   fmt("K=1 zero: %s, closed gate zero: %s, shift dev %.1e (tol 1e-10)", k1 ? "yes" : "no",
                       closed ? "yes" : "no", shift)};
  });

  criterion("prototype update fixed point and convergence", 1, [] {
    Rng rng(8);
    ClusterConfig cfg;
    double fixed = 0.0;
    bool monotone = true;
    double last = 0.0;
    int max_steps = 0;
    for (int t = 0; t < 50; ++t) {
      PrototypeBank bank(1, 1, 6);
      bank.set_prototype(0, 0, testutil::random_unit(rng, 6));
      bank.mark_initialized();
      const auto p = bank.prototype(0, 0);
      update_prototype(bank, 0, 0, p, cfg);
      fixed = std::max(fixed, testutil::max_abs_diff(bank.prototype(0, 0), p));

      const auto f = testutil::random_unit(rng, 6);
      auto angle = [&] {
        const auto& q = bank.prototype(0, 0);
        double c = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < 6; ++i) c += q[i] * f[i];
        for (std::size_t i = 0; i < 6; ++i) s2 += (q[i] - c * f[i]) * (q[i] - c * f[i]);
        return std::atan2(std::sqrt(s2), c);
      };
      double prev = angle();
      int steps = 0;
      while (prev >= 1e-6 && steps < 100000) {
        update_prototype(bank, 0, 0, f, cfg);
        const double a = angle();
        monotone = monotone && a < prev;
        prev = a;
        ++steps;
      }
      last = std::max(last, prev);
      max_steps = std::max(max_steps, steps);
    }
    return Outcome{fixed <= 1e-12 && monotone && last < 1e-6,
                   fmt("fixed-point drift %.1e (tol 1e-12), strictly decreasing: %s, final angle %.1e rad after <= %d "
                       "steps",
                       fixed, monotone ? "yes" : "no", last, max_steps)};
  });

  criterion("importance replacement Monte Carlo (10 pool states, N_p=50, 1e5 trials)", 60, [] {
    double sel = 0.0, rep = 0.0;
    bool bounded = true, sound = true;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const auto r = poolmc::run(1000 + seed);
      sel = std::max(sel, r.worst_selection_z);
      rep = std::max(rep, r.worst_replacement_z);
      bounded = bounded && r.max_replaced <= r.incoming;
      sound = sound && r.capacity_ok && r.unique_ok;
    }
    return Outcome{sel <= 4.0 && rep <= 4.0 && bounded && sound,
                   fmt("worst |z| selection vs P_i %.2f, replacement vs exact %.2f (tol 4), replaced <= M: %s, "
                       "capacity/uniqueness: %s",
                       sel, rep, bounded ? "yes" : "no", sound ? "yes" : "no")};
  });

  criterion("AUROC equals pairwise brute force (100 sets with ties)", 5, [] {
    Rng rng(9);
    int exact = 0;
    for (int t = 0; t < 100; ++t) {
      const auto s = testutil::random_scores(rng, 10 + rng.uniform_index(200));
      exact += auroc(s) == testutil::brute_auroc(s);
    }
    return Outcome{exact == 100, fmt("%d/100 exact", exact)};
  });

  Sweep main_sweep;
  const double sweep_budget = 30 * 60;
  criterion("ablation ordering (desk config, 5 seeds)", sweep_budget, [&] {
    main_sweep = sweep(desk(), {"baseline", "clustering", "refinement_cascading", "labeled_only"}, "acc_ablation");
    const auto& lo = main_sweep.at("labeled_only");
    const auto& base = main_sweep.at("baseline");
    const auto& clus = main_sweep.at("clustering");
    const auto& casc = main_sweep.at("refinement_cascading");
    const double m_lo = mean(lo, acc), m_b = mean(base, acc), m_c = mean(clus, acc), m_r = mean(casc, acc);
    double worst1 = 0.0, worst2 = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
      worst1 = std::max(worst1, acc(base[i]) - acc(clus[i]));
      worst2 = std::max(worst2, acc(clus[i]) - acc(casc[i]));
    }
    const bool pass = m_lo < m_b && m_b <= m_c && m_c <= m_r && m_r >= m_b + 2.0 && worst1 <= 0.5 && worst2 <= 0.5;
    return Outcome{pass, fmt("labeled-only %.2f, baseline %.2f, +clustering %.2f, +cascading %.2f; gain %.2f (need "
                             ">= 2.0); worst-seed violations %.2f, %.2f (tol 0.5)",
                             m_lo, m_b, m_c, m_r, m_r - m_b, std::max(0.0, worst1), std::max(0.0, worst2))};
  });

  criterion("ID density of the pools (desk config, 5 seeds, after epoch 30)", 15 * 60, [&] {
    const auto& casc = main_sweep.at("refinement_cascading");
    const double raw = mean(casc, [](const RunSummary& s) { return s.raw_id_ratio; });
    const double d1 = mean(casc, [](const RunSummary& s) { return s.id_density_level1.value_or(0.0); });
    const double d2 = mean(casc, [](const RunSummary& s) { return s.id_density_level2.value_or(0.0); });
    return Outcome{d2 >= d1 && d1 >= raw + 0.05 && d2 >= raw + 0.15,
                   fmt("raw %.3f, level 1 %.3f (need >= %.3f), level 2 %.3f (need >= %.3f and >= level 1)", raw, d1,
                       raw + 0.05, d2, raw + 0.15)};
  });

  criterion("prototype OOD score beats max-softmax AUROC (desk config, 5 seeds)", sweep_budget, [&] {
    const auto& casc = main_sweep.at("refinement_cascading");
    const double b = mean(casc, [](const RunSummary& s) { return s.auroc_baseline.value_or(0.0); });
    const double p = mean(casc, [](const RunSummary& s) { return s.auroc_prototype.value_or(0.0); });
    return Outcome{p >= b + 0.03, fmt("prototype %.4f vs max-softmax %.4f, gain %.4f (need >= 0.03)", p, b, p - b)};
  });

  criterion("clustering helps with all-OOD unlabeled data (5 seeds)", 10 * 60, [] {
    auto cfg = desk();
    cfg.dataset->unlabeled_per_class = 0;
    const auto s = sweep(cfg, {"baseline", "clustering", "labeled_only"}, "acc_ood_only");
    const double b = mean(s.at("baseline"), acc), c = mean(s.at("clustering"), acc), lo = mean(s.at("labeled_only"), acc);
    return Outcome{c >= b + 1.0 && b > lo && c > lo,
                   fmt("+clustering %.2f, baseline %.2f (need gain >= 1.0, got %.2f), labeled-only %.2f", c, b, c - b,
                       lo)};
  });

  criterion("determinism and resume (desk config)", 10 * 60, [] {
    const auto cfg = desk();
    const std::map<std::string, std::filesystem::path> dirs{{"a", testutil::scratch_dir("acc_det_a")},
                                                            {"b", testutil::scratch_dir("acc_det_b")},
                                                            {"c", testutil::scratch_dir("acc_det_c")}};
    auto run = [&](const std::string& name, std::optional<std::size_t> stop, bool resume) {
      RunOptions o;
      o.out_dir = dirs.at(name);
      o.event_log = true;
      o.stop_after_iterations = stop;
      o.resume = resume;
      return train(cfg, o);
    };
    run("a", std::nullopt, false);
    run("b", std::nullopt, false);
    const auto stopped = run("c", 1001, false);
    run("c", std::nullopt, true);
    bool same = true, resumed = stopped.interrupted;
    for (const char* f : {"metrics.jsonl", "events.jsonl", "checkpoint.json", "summary.json"}) {
      const auto a = testutil::read_file(dirs.at("a") / f);
      same = same && !a.empty() && a == testutil::read_file(dirs.at("b") / f);
      resumed = resumed && a == testutil::read_file(dirs.at("c") / f);
    }
    return Outcome{same && resumed, fmt("repeat byte-identical: %s, resume after 1001 iterations identical: %s",
                                        same ? "yes" : "no", resumed ? "yes" : "no")};
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
