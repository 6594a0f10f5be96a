#pragma once

#include <filesystem>
#include <vector>

#include "osssl/trainer.hpp"

namespace osssl {

/// Parses a metrics.jsonl file. Throws ParseError.
std::vector<EpochMetrics> read_metrics(const std::filesystem::path& path);

/// Writes curves.csv next to every metrics.jsonl under run_dir and a
/// summary.csv (one row per run) in run_dir. Returns the number of runs found.
std::size_t write_report(const std::filesystem::path& run_dir);

}  // namespace osssl
