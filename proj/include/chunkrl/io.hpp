#pragma once

// File formats: line-delimited dataset records, binary parameter
// checkpoints with a JSON shape manifest, and the metrics CSV writer.
// All writers use fixed float formatting so reruns are byte-identical.

#include "chunkrl/core.hpp"
#include "chunkrl/critics.hpp"
#include "chunkrl/trainer.hpp"

#include <map>
#include <string>
#include <vector>

namespace chunkrl::io {

// One trajectory per line with fields `states`, `actions`, `rewards`,
// `terminal`; the first line is a header record with env metadata and the
// generator seed.
void save_dataset(const core::Dataset& data, const std::string& path);
core::Dataset load_dataset(const std::string& path);

class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& columns);
    ~CsvWriter();
    void row(const std::vector<std::string>& cells);
    const std::vector<std::string>& columns() const { return columns_; }

private:
    std::vector<std::string> columns_;
    std::string path_;
    std::string buffer_;
};

// Metrics CSV with the fixed column layout
//   step,phase,loss_qh,loss_vh,loss_qk_<k>...,loss_vk_<k>...,loss_bc,
//   success_rate,mean_kstar,kstar_freq_<k>...
class MetricsCsv {
public:
    MetricsCsv(const std::string& path, const core::ScaleSet& scales);
    void write(const trainer::MetricRow& row);

private:
    std::vector<int> partial_scales_;  // K \ {h}
    std::vector<int> all_scales_;
    std::unique_ptr<CsvWriter> csv_;
};

// Named parameter tensors serialized as a flat little-endian double blob
// beside a JSON manifest ({"version":1,"tensors":[...]}).
struct TensorEntry {
    std::string name;
    long rows = 0;
    long cols = 0;
    std::vector<double> data;
};

void save_checkpoint(const std::vector<TensorEntry>& tensors, const std::string& path_prefix);
std::vector<TensorEntry> load_checkpoint(const std::string& path_prefix);

// Bundles and policies flattened to named tensors (live + EMA shadows).
std::vector<TensorEntry> snapshot_artifacts(const trainer::Artifacts& art);
void restore_artifacts(trainer::Artifacts& art, const std::vector<TensorEntry>& tensors);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace chunkrl::io
