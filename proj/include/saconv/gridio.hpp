#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "saconv/climate.hpp"
#include "saconv/layers.hpp"
#include "saconv/metrics.hpp"
#include "saconv/train.hpp"

namespace saconv::io {

namespace fs = std::filesystem;

// All writers go through a temp file + rename so readers never observe a
// partially written artifact.
void write_file_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

// Grid series: text header (format line, JSON metadata line, separator)
// followed by little-endian float32 cells in date-major row-major order.
void write_grid_series(const fs::path& path, const DailyGridSeries& s);
DailyGridSeries read_grid_series(const fs::path& path);

// date,value CSV with ISO-8601 dates.
void write_precip_csv(const fs::path& path, const PrecipSeries& s);
PrecipSeries read_precip_csv(const fs::path& path);

// date,label,threshold_percentile CSV plus a sidecar JSON recording the
// resolved threshold value ("<path>.meta.json").
void write_labels_csv(const fs::path& path, const LabelSeries& s);
LabelSeries read_labels_csv(const fs::path& path);

// Checkpoint: format line, model config JSON, tensor manifest JSON, then raw
// little-endian float64 payloads in canonical parameter order. Round-trips
// bit-exactly.
void save_checkpoint(const fs::path& path, const ModelParams& params);
ModelParams load_checkpoint(const fs::path& path);

std::string model_config_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);
std::string train_config_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// Optional config file with "model" and/or "train" sections.
struct FileConfig {
    ModelConfig model;
    TrainConfig train;
};
FileConfig parse_config_file(const std::string& text);

// One JSON object per line: the epoch records, then a final summary line.
std::string train_log_jsonl(const TrainResult& result);

std::string metrics_report_json(const MetricsReport& r);
std::string ensemble_report_json(const EnsembleReport& r);
// Table-style CSV row; header() gives the column line.
std::string metrics_csv_header(const std::string& label_column);
std::string metrics_csv_row(const std::string& label, const MetricsReport& r);
std::string ensemble_csv_header();
std::string ensemble_csv_row(const EnsembleReport& r, int positives);
std::string confusion_text(const ConfusionMatrix& cm);

// Run manifest: written as "incomplete" before a command produces artifacts
// and finalized with digests afterwards.
struct Manifest {
    std::string command;
    std::string status = "incomplete";
    std::string config_hash;
    std::uint64_t master_seed = 0;
    std::map<std::string, std::string> input_digests;
    std::vector<std::string> artifacts;
    std::string created_at;
    std::string completed_at;
};
void write_manifest(const fs::path& path, const Manifest& m);
std::string timestamp_now();
std::string digest_file(const fs::path& path);

}  // namespace saconv::io
