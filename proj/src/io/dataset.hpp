#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "kernel/engine.hpp"

namespace iak {

// Numeric CSV; a first line with any non-numeric field is taken as a header.
Matrix read_numeric_csv(const std::string& path);

// Whitespace-separated integers (labels or token ids), one example per line.
std::vector<std::vector<long>> read_integer_lines(const std::string& path);

enum class DatasetKind { Dense, Sequence };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::Dense;
  std::string inputs;      // dense: .iak (rank 2, 3 or 4) or .csv (one flattened example per row)
  std::string labels;      // optional: .iak or one integer per line
  std::string ids;         // sequence: token ids, one example per line
  std::string embeddings;  // sequence: vocab x d0 CSV
  // Required for CSV inputs; checked against IAK1 ranks otherwise.
  std::optional<SpatialGeometry> geometry;
  std::size_t max_length = 0;  // sequence truncation; 0 keeps full length
  bool standardize = false;    // per-position standardization across channels
};

struct DatasetBundle {
  std::vector<KernelInput> inputs;
  std::vector<int> labels;               // empty without a labels file
  std::vector<std::size_t> raw_lengths;  // sequence lengths before truncation
  int classes = 0;                       // max label + 1
};

// Relative paths are resolved against base_dir.
DatasetBundle load_dataset(const DatasetSpec& spec, const std::string& base_dir = "");

}  // namespace iak
