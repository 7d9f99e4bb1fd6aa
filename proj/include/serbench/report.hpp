#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "serbench/benchmark.hpp"

namespace serbench {

/// results.csv: model, augmentation, fold, repeat, ua, weighted_f1,
/// confusion ("a b c;d e f;..."), error. Metrics use 17 significant digits so
/// the file reproduces the in-memory values exactly.
void write_results_csv(const std::filesystem::path& path, const std::vector<RunResult>& runs);
std::vector<RunResult> read_results_csv(const std::filesystem::path& path);

nlohmann::json summary_json(const EvalReport& report);

/// Model x augmentation table of "mean±std" UA and weighted F1 (Markdown).
std::string summary_table(const EvalReport& report);

/// Confusion-matrix heatmap; every cell is annotated with its count.
std::string heatmap_svg(const CellSummary& cell, const std::vector<std::string>& class_labels);

/// File name used for a cell's heatmap, e.g. "Gated-CNN__Speed_0.9_.svg".
std::string heatmap_file_name(const std::string& model, const std::string& augmentation);

/// Writes results.csv, summary.json, summary.md and heatmaps/<cell>.svg.
void emit_report(const EvalReport& report, const std::filesystem::path& out_dir);

/// Writes summary.json, summary.md and heatmaps from results.csv alone.
EvalReport report_from_csv(const std::filesystem::path& results_csv,
                           std::vector<std::string> class_labels = {});

}  // namespace serbench
