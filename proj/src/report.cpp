#include "osssl/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>

#include "json.hpp"

#include "osssl/ablate.hpp"
#include "osssl/errors.hpp"

namespace osssl {

using nlohmann::json;

namespace {

std::optional<double> opt(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

std::vector<EpochMetrics> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::vector<EpochMetrics> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      EpochMetrics m;
      m.epoch = j.at("epoch").get<std::size_t>();
      m.test_acc = j.at("test_acc").get<double>();
      m.auroc_baseline = opt(j, "auroc_baseline");
      m.auroc_prototype = opt(j, "auroc_prototype");
      m.id_density_level1 = opt(j, "id_density_level1");
      m.id_density_level2 = opt(j, "id_density_level2");
      m.raw_id_ratio = j.at("raw_id_ratio").get<double>();
      m.loss_supervised = j.at("loss_supervised").get<double>();
      m.loss_unlabeled = j.at("loss_unlabeled").get<double>();
      m.loss_cluster = j.at("loss_cluster").get<double>();
      m.loss_total = j.at("loss_total").get<double>();
      m.gate_open_pseudo = j.at("gate_open_pseudo").get<std::size_t>();
      m.gate_open_cluster = j.at("gate_open_cluster").get<std::size_t>();
      m.identified_id = j.at("identified_id").get<std::size_t>();
      m.identified_ood = j.at("identified_ood").get<std::size_t>();
      m.prototypes_ready = j.at("prototypes_ready").get<bool>();
      out.push_back(m);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::size_t write_report(const std::filesystem::path& run_dir) {
  if (!std::filesystem::is_directory(run_dir)) throw ParseError("not a directory: " + run_dir.string());
  std::vector<std::filesystem::path> logs;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(run_dir))
    if (entry.is_regular_file() && entry.path().filename() == "metrics.jsonl") logs.push_back(entry.path());
  std::sort(logs.begin(), logs.end());
  if (logs.empty()) throw ParseError("no metrics.jsonl under " + run_dir.string());

  std::ofstream summary(run_dir / "summary.csv");
  summary << "run,epochs,final_accuracy,auroc_baseline,auroc_prototype,id_density_level1,id_density_level2,"
             "raw_id_ratio\n";
  for (const auto& log : logs) {
    const auto epochs = read_metrics(log);
    std::ofstream curves(log.parent_path() / "curves.csv");
    curves << "epoch,test_acc,auroc_baseline,auroc_prototype,id_density_level1,id_density_level2,loss_supervised,"
              "loss_unlabeled,loss_cluster,loss_total,gate_open_pseudo,gate_open_cluster,identified_id,"
              "identified_ood\n";
    for (const auto& m : epochs) {
      curves << m.epoch << ',' << cell(m.test_acc) << ',' << cell(m.auroc_baseline) << ','
             << cell(m.auroc_prototype) << ',' << cell(m.id_density_level1) << ',' << cell(m.id_density_level2)
             << ',' << cell(m.loss_supervised) << ',' << cell(m.loss_unlabeled) << ',' << cell(m.loss_cluster)
             << ',' << cell(m.loss_total) << ',' << m.gate_open_pseudo << ',' << m.gate_open_cluster << ','
             << m.identified_id << ',' << m.identified_ood << '\n';
    }
    const RunSummary s = summarize(epochs, epochs.empty() ? 0 : epochs.back().epoch / 2);
    auto rel = std::filesystem::relative(log.parent_path(), run_dir).generic_string();
    if (rel.empty()) rel = ".";
    summary << rel << ',' << epochs.size() << ',' << cell(s.final_accuracy) << ',' << cell(s.auroc_baseline) << ','
            << cell(s.auroc_prototype) << ',' << cell(s.id_density_level1) << ',' << cell(s.id_density_level2)
            << ',' << cell(s.raw_id_ratio) << '\n';
  }
  return logs.size();
}

}  // namespace osssl
