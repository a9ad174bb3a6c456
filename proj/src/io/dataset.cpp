#include "io/dataset.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "common/error.hpp"
#include "io/tensor_io.hpp"

namespace iak {

namespace {

std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty() || base.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(base) / path).string();
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

bool parse_double(const std::string& field, double& out) {
  const std::string t = trim(field);
  if (t.empty()) return false;
  const auto r = std::from_chars(t.data(), t.data() + t.size(), out);
  return r.ec == std::errc() && r.ptr == t.data() + t.size();
}

std::vector<int> to_labels(const std::vector<double>& values, const std::string& path) {
  std::vector<int> out;
  for (double v : values) {
    if (v != std::floor(v) || v < 0 || v > 1e9) throw IoError(path + ": labels must be non-negative integers");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

std::vector<int> load_labels(const std::string& path) {
  if (ends_with(path, ".iak")) {
    const Tensor t = read_tensor(path);
    if (t.dims.size() != 1) throw IoError(path + ": labels tensor must have rank 1");
    return to_labels(t.values, path);
  }
  std::vector<double> values;
  for (const auto& line : read_integer_lines(path)) {
    if (line.size() != 1) throw IoError(path + ": expected one label per line");
    values.push_back(static_cast<double>(line[0]));
  }
  return to_labels(values, path);
}

SpatialGeometry geometry_from_rank(const Tensor& t, const std::string& path) {
  switch (t.dims.size()) {
    case 2: return SpatialGeometry::vector();
    case 3: return SpatialGeometry::string(t.dims[1]);
    case 4: return SpatialGeometry::image(t.dims[1], t.dims[2]);
    default: throw IoError(path + ": dense inputs need rank 2 (n, d), 3 (n, length, d) or 4 (n, h, w, d)");
  }
}

std::vector<KernelInput> load_dense(const DatasetSpec& spec, const std::string& path) {
  std::vector<KernelInput> out;
  if (ends_with(path, ".csv")) {
    if (!spec.geometry) throw ConfigError("dataset.geometry is required for CSV inputs");
    const Matrix rows = read_numeric_csv(path);
    const auto ds = static_cast<Eigen::Index>(spec.geometry->size());
    if (rows.cols() % ds != 0)
      throw IoError(path + ": " + std::to_string(rows.cols()) + " columns are not a multiple of " +
                    std::to_string(ds) + " positions");
    const Eigen::Index d0 = rows.cols() / ds;
    for (Eigen::Index n = 0; n < rows.rows(); ++n) {
      Matrix x(ds, d0);
      for (Eigen::Index a = 0; a < ds; ++a) x.row(a) = rows.block(n, a * d0, 1, d0);
      out.push_back({std::move(x), *spec.geometry});
    }
    return out;
  }
  const Tensor t = read_tensor(path);
  if (t.dtype != DType::F32 && t.dtype != DType::F64) throw IoError(path + ": dense inputs must be f32 or f64");
  const SpatialGeometry g = geometry_from_rank(t, path);
  if (spec.geometry && *spec.geometry != g)
    throw ConfigError("dataset.geometry " + spec.geometry->describe() + " disagrees with " + path + " (" +
                      g.describe() + ")");
  const auto n = static_cast<Eigen::Index>(t.dims[0]);
  const auto d0 = static_cast<Eigen::Index>(t.dims.back());
  const auto ds = static_cast<Eigen::Index>(g.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    Matrix x(ds, d0);
    for (Eigen::Index a = 0; a < ds; ++a)
      for (Eigen::Index c = 0; c < d0; ++c) x(a, c) = t.values[static_cast<std::size_t>((i * ds + a) * d0 + c)];
    out.push_back({std::move(x), g});
  }
  return out;
}

}  // namespace

Matrix read_numeric_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string field;
    bool numeric = true;
    while (std::getline(ss, field, ',')) {
      double v = 0;
      if (!parse_double(field, v)) numeric = false;
      row.push_back(v);
    }
    if (!numeric) {
      if (rows.empty() && lineno == 1) continue;  // header
      throw IoError(path + ":" + std::to_string(lineno) + ": non-numeric field");
    }
    if (!rows.empty() && row.size() != rows[0].size())
      throw IoError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(rows[0].size()) +
                    " fields, got " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IoError(path + ": no data rows");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

std::vector<std::vector<long>> read_integer_lines(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  std::vector<std::vector<long>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    std::stringstream ss(line);
    std::string tok;
    std::vector<long> ids;
    while (ss >> tok) {
      long v = 0;
      const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (r.ec != std::errc() || r.ptr != tok.data() + tok.size())
        throw IoError(path + ":" + std::to_string(lineno) + ": '" + tok + "' is not an integer");
      ids.push_back(v);
    }
    out.push_back(std::move(ids));
  }
  while (!out.empty() && out.back().empty()) out.pop_back();
  return out;
}

DatasetBundle load_dataset(const DatasetSpec& spec, const std::string& base_dir) {
  DatasetBundle b;
  if (spec.kind == DatasetKind::Dense) {
    if (spec.inputs.empty()) throw ConfigError("dataset.inputs is required for dense datasets");
    b.inputs = load_dense(spec, resolve(spec.inputs, base_dir));
  } else {
    if (spec.ids.empty() || spec.embeddings.empty())
      throw ConfigError("sequence datasets need dataset.ids and dataset.embeddings");
    const std::string ids_path = resolve(spec.ids, base_dir);
    const Matrix table = read_numeric_csv(resolve(spec.embeddings, base_dir));
    const auto lines = read_integer_lines(ids_path);
    for (std::size_t n = 0; n < lines.size(); ++n) {
      const auto& ids = lines[n];
      if (ids.empty()) throw IoError(ids_path + ":" + std::to_string(n + 1) + ": empty sequence");
      const std::size_t len = spec.max_length ? std::min(ids.size(), spec.max_length) : ids.size();
      Matrix x(static_cast<Eigen::Index>(len), table.cols());
      for (std::size_t t = 0; t < len; ++t) {
        if (ids[t] < 0 || ids[t] >= table.rows())
          throw IoError(ids_path + ":" + std::to_string(n + 1) + ": token id " + std::to_string(ids[t]) +
                        " outside vocabulary of " + std::to_string(table.rows()));
        x.row(static_cast<Eigen::Index>(t)) = table.row(ids[t]);
      }
      b.raw_lengths.push_back(ids.size());
      b.inputs.push_back({std::move(x), SpatialGeometry::string(len)});
    }
  }
  if (b.inputs.empty()) throw IoError("dataset has no examples");
  if (spec.standardize)
    for (auto& x : b.inputs) x.values = standardize_positions(x.values);
  if (!spec.labels.empty()) {
    b.labels = load_labels(resolve(spec.labels, base_dir));
    if (b.labels.size() != b.inputs.size())
      throw ConfigError("dataset has " + std::to_string(b.inputs.size()) + " inputs but " +
                        std::to_string(b.labels.size()) + " labels");
    for (int l : b.labels) b.classes = std::max(b.classes, l + 1);
  }
  return b;
}

}  // namespace iak
