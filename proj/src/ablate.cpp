#include "osssl/ablate.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "osssl/errors.hpp"

namespace osssl {

std::vector<AblationRow> ablation_rows(const TrainConfig& base) {
  auto variant = [&](ClusteringMode c, RefinementMode r) {
    TrainConfig cfg = base;
    cfg.clustering = c;
    cfg.refinement = r;
    cfg.unlabeled = UnlabeledUse::all;
    return cfg;
  };
  std::vector<AblationRow> rows;
  rows.push_back({"baseline", variant(ClusteringMode::off, RefinementMode::off)});
  rows.push_back({"clustering_weak_only", variant(ClusteringMode::weak_only, RefinementMode::off)});
  rows.push_back({"clustering", variant(ClusteringMode::on, RefinementMode::off)});
  rows.push_back({"refinement_random", variant(ClusteringMode::on, RefinementMode::random)});
  rows.push_back({"refinement_importance", variant(ClusteringMode::on, RefinementMode::importance)});
  rows.push_back({"refinement_cascading", variant(ClusteringMode::on, RefinementMode::cascading)});
  TrainConfig clean = variant(ClusteringMode::off, RefinementMode::off);
  clean.unlabeled = UnlabeledUse::id_only;
  rows.push_back({"clean", clean});
  TrainConfig labeled_only = variant(ClusteringMode::off, RefinementMode::off);
  labeled_only.unlabeled = UnlabeledUse::none;
  rows.push_back({"labeled_only", labeled_only});
  return rows;
}

TrainConfig with_seed_offset(const TrainConfig& cfg, std::uint64_t offset) {
  TrainConfig out = cfg;
  out.seed += offset;
  if (out.dataset) out.dataset->seed += offset;
  return out;
}

RunSummary summarize(const std::vector<EpochMetrics>& epochs, std::size_t density_after) {
  RunSummary s;
  std::vector<double> acc;
  double d1 = 0.0, d2 = 0.0;
  std::size_t n1 = 0, n2 = 0;
  for (const auto& m : epochs) {
    acc.push_back(m.test_acc);
    s.gate_open_pseudo += m.gate_open_pseudo;
    if (m.epoch <= density_after) continue;
    if (m.id_density_level1) d1 += *m.id_density_level1, ++n1;
    if (m.id_density_level2) d2 += *m.id_density_level2, ++n2;
  }
  s.final_accuracy = final_accuracy(acc);
  if (!epochs.empty()) {
    s.auroc_baseline = epochs.back().auroc_baseline;
    s.auroc_prototype = epochs.back().auroc_prototype;
    s.raw_id_ratio = epochs.back().raw_id_ratio;
  }
  if (n1 > 0) s.id_density_level1 = d1 / static_cast<double>(n1);
  if (n2 > 0) s.id_density_level2 = d2 / static_cast<double>(n2);
  return s;
}

std::vector<AblationRun> ablate(const TrainConfig& base, const AblationOptions& opts) {
  base.validate();
  const auto rows = ablation_rows(base);
  std::vector<AblationRun> runs;
  for (std::size_t rep = 0; rep < opts.seeds; ++rep) {
    const TrainConfig seeded = with_seed_offset(base, rep);
    std::optional<OpenSetDataset> data;
    std::string data_error;
    try {
      data = materialize_dataset(seeded);
    } catch (const Error& e) {
      data_error = e.what();
    }
    for (const auto& row : rows) {
      if (!opts.only_rows.empty() &&
          std::find(opts.only_rows.begin(), opts.only_rows.end(), row.name) == opts.only_rows.end())
        continue;
      if (opts.stop_flag && opts.stop_flag->load()) return runs;
      AblationRun run;
      run.row = row.name;
      run.repetition = rep;
      const TrainConfig cfg = with_seed_offset(row.config, rep);
      run.seed = cfg.seed;
      if (!data) {
        run.error = data_error;
        runs.push_back(run);
        continue;
      }
      try {
        RunOptions ro;
        ro.data = &*data;
        ro.stop_flag = opts.stop_flag;
        if (!opts.out_dir.empty()) ro.out_dir = opts.out_dir / row.name / ("seed" + std::to_string(rep));
        const RunResult r = train(cfg, ro);
        if (r.interrupted) {
          run.error = "interrupted";
        } else {
          run.ok = true;
          run.summary = summarize(r.epochs, cfg.epochs / 2);
        }
      } catch (const Error& e) {
        run.error = e.what();
      }
      runs.push_back(run);
    }
  }
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    std::ofstream(opts.out_dir / "ablation.csv") << ablation_csv(runs);
    std::ofstream(opts.out_dir / "ablation.txt") << ablation_table(runs);
  }
  return runs;
}

namespace {

std::string fmt(const std::optional<double>& v, int precision = 4) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", precision, *v);
  return buf;
}

struct RowMean {
  std::size_t runs = 0;
  double acc = 0.0;
  double auroc_b = 0.0, auroc_p = 0.0, d1 = 0.0, d2 = 0.0;
  std::size_t nb = 0, np = 0, n1 = 0, n2 = 0;
  std::size_t failures = 0;

  void add(const AblationRun& r) {
    if (!r.ok) {
      ++failures;
      return;
    }
    ++runs;
    acc += r.summary.final_accuracy;
    if (r.summary.auroc_baseline) auroc_b += *r.summary.auroc_baseline, ++nb;
    if (r.summary.auroc_prototype) auroc_p += *r.summary.auroc_prototype, ++np;
    if (r.summary.id_density_level1) d1 += *r.summary.id_density_level1, ++n1;
    if (r.summary.id_density_level2) d2 += *r.summary.id_density_level2, ++n2;
  }
  static std::optional<double> mean(double sum, std::size_t n) {
    return n ? std::optional<double>(sum / static_cast<double>(n)) : std::nullopt;
  }
};

std::vector<std::pair<std::string, RowMean>> row_means(const std::vector<AblationRun>& runs) {
  std::vector<std::pair<std::string, RowMean>> out;
  for (const auto& r : runs) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == r.row; });
    if (it == out.end()) it = out.insert(out.end(), {r.row, RowMean{}});
    it->second.add(r);
  }
  return out;
}

}  // namespace

std::string ablation_csv(const std::vector<AblationRun>& runs) {
  std::ostringstream os;
  os << "row,repetition,seed,status,final_accuracy,auroc_baseline,auroc_prototype,id_density_level1,"
        "id_density_level2,raw_id_ratio\n";
  for (const auto& r : runs) {
    os << r.row << ',' << r.repetition << ',' << r.seed << ',' << (r.ok ? "ok" : "failed") << ',';
    if (r.ok) {
      const auto& s = r.summary;
      os << fmt(s.final_accuracy, 6) << ',' << fmt(s.auroc_baseline, 6) << ',' << fmt(s.auroc_prototype, 6) << ','
         << fmt(s.id_density_level1, 6) << ',' << fmt(s.id_density_level2, 6) << ',' << fmt(s.raw_id_ratio, 6);
    } else {
      os << ",,,,,";
    }
    os << '\n';
  }
  for (const auto& [name, m] : row_means(runs)) {
    os << name << ",mean,," << m.runs << "/" << (m.runs + m.failures) << " ok,"
       << fmt(RowMean::mean(m.acc, m.runs), 6) << ',' << fmt(RowMean::mean(m.auroc_b, m.nb), 6) << ','
       << fmt(RowMean::mean(m.auroc_p, m.np), 6) << ',' << fmt(RowMean::mean(m.d1, m.n1), 6) << ','
       << fmt(RowMean::mean(m.d2, m.n2), 6) << ",\n";
  }
  return os.str();
}

std::string ablation_table(const std::vector<AblationRun>& runs) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %5s %9s %9s %9s %9s %9s\n", "row", "runs", "accuracy", "auroc_msp",
                "auroc_pro", "density1", "density2");
  os << line;
  for (const auto& [name, m] : row_means(runs)) {
    auto pct = [](std::optional<double> v) {
      if (v) *v *= 100.0;
      return v;
    };
    std::snprintf(line, sizeof line, "%-24s %5zu %9s %9s %9s %9s %9s\n", name.c_str(), m.runs,
                  fmt(pct(RowMean::mean(m.acc, m.runs)), 2).c_str(), fmt(RowMean::mean(m.auroc_b, m.nb)).c_str(),
                  fmt(RowMean::mean(m.auroc_p, m.np)).c_str(), fmt(RowMean::mean(m.d1, m.n1)).c_str(),
                  fmt(RowMean::mean(m.d2, m.n2)).c_str());
    os << line;
    if (m.failures) os << "  (" << m.failures << " failed)\n";
  }
  for (const auto& r : runs)
    if (!r.ok) os << "failed: " << r.row << " seed " << r.seed << ": " << r.error << '\n';
  return os.str();
}

}  // namespace osssl
