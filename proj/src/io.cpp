#include "protosphere/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace proto {

namespace fs = std::filesystem;
using nlohmann::json;

const char* kTraceHeader =
    "iter,loss,acc,erank_intra,erank_inter,erank_weights,align_w,align_inst,"
    "mir,hdr";

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  return in;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

[[noreturn]] void malformed(const fs::path& path, int line, const std::string& why) {
  throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": " +
                           why);
}

double parse_double(const fs::path& path, int line, const std::string& s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) malformed(path, line, "trailing junk in number '" + s + "'");
    return v;
  } catch (const std::invalid_argument&) {
    malformed(path, line, "not a number: '" + s + "'");
  } catch (const std::out_of_range&) {
    malformed(path, line, "number out of range: '" + s + "'");
  }
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;  // numeric cells, header-aligned
};

// Reads a rectangular CSV with one header line; every body cell numeric.
Table read_table(const fs::path& path) {
  std::ifstream in = open_in(path);
  Table table;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::vector<std::string> fields = split_csv(line);
    if (lineno == 1) {
      table.header = fields;
      continue;
    }
    if (fields.size() != table.header.size()) {
      malformed(path, lineno,
                "expected " + std::to_string(table.header.size()) +
                    " fields, got " + std::to_string(fields.size()));
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (const std::string& f : fields) {
      row.push_back(parse_double(path, lineno, f));
    }
    table.rows.push_back(std::move(row));
  }
  if (table.header.empty()) malformed(path, 1, "missing header");
  return table;
}

} // namespace

void write_embeddings(const fs::path& path, const Matrix& features,
                      const std::vector<int>& labels) {
  if (static_cast<Index>(labels.size()) != features.rows()) {
    throw std::invalid_argument("write_embeddings: label/row count mismatch");
  }
  std::ofstream out = open_out(path);
  out << "label";
  for (Index j = 0; j < features.cols(); ++j) out << ",f" << j;
  out << "\n";
  for (Index i = 0; i < features.rows(); ++i) {
    out << labels[i];
    for (Index j = 0; j < features.cols(); ++j) {
      out << ',' << format_double(features(i, j));
    }
    out << "\n";
  }
}

EmbeddingBatch read_embeddings(const fs::path& path) {
  const Table table = read_table(path);
  if (table.header.empty() || table.header[0] != "label") {
    malformed(path, 1, "first column must be 'label'");
  }
  if (table.rows.empty()) malformed(path, 2, "no data rows");
  const Index d = static_cast<Index>(table.header.size()) - 1;
  if (d < 1) malformed(path, 1, "no feature columns");

  EmbeddingBatch batch;
  batch.features.resize(static_cast<Index>(table.rows.size()), d);
  batch.labels.resize(table.rows.size());
  int max_label = 0;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const double raw = table.rows[i][0];
    const int label = static_cast<int>(raw);
    if (raw != label || label < 0) {
      malformed(path, static_cast<int>(i) + 2, "label must be a non-negative integer");
    }
    batch.labels[i] = label;
    max_label = std::max(max_label, label);
    for (Index j = 0; j < d; ++j) {
      batch.features(static_cast<Index>(i), j) = table.rows[i][j + 1];
    }
  }
  batch.num_classes = max_label + 1;
  batch.validate();
  return batch;
}

void write_weights(const fs::path& path, const Matrix& weights,
                   const std::optional<Vector>& bias) {
  std::ofstream out = open_out(path);
  out << "label";
  for (Index j = 0; j < weights.cols(); ++j) out << ",f" << j;
  if (bias) out << ",bias";
  out << "\n";
  for (Index c = 0; c < weights.rows(); ++c) {
    out << c;
    for (Index j = 0; j < weights.cols(); ++j) {
      out << ',' << format_double(weights(c, j));
    }
    if (bias) out << ',' << format_double((*bias)[c]);
    out << "\n";
  }
}

WeightsFile read_weights(const fs::path& path) {
  const Table table = read_table(path);
  const bool has_bias = !table.header.empty() && table.header.back() == "bias";
  const Index d = static_cast<Index>(table.header.size()) - 1 - (has_bias ? 1 : 0);
  if (table.header.empty() || table.header[0] != "label" || d < 1) {
    malformed(path, 1, "expected header label,f0,...[,bias]");
  }
  WeightsFile file;
  file.weights.resize(static_cast<Index>(table.rows.size()), d);
  if (has_bias) file.bias = Vector(static_cast<Index>(table.rows.size()));
  for (std::size_t c = 0; c < table.rows.size(); ++c) {
    if (table.rows[c][0] != static_cast<double>(c)) {
      malformed(path, static_cast<int>(c) + 2, "class rows must be 0,1,2,...");
    }
    for (Index j = 0; j < d; ++j) {
      file.weights(static_cast<Index>(c), j) = table.rows[c][j + 1];
    }
    if (has_bias) (*file.bias)[static_cast<Index>(c)] = table.rows[c].back();
  }
  return file;
}

void write_trace(const fs::path& path, const std::vector<TraceRecord>& records) {
  std::ofstream out = open_out(path);
  out << kTraceHeader << "\n";
  for (const TraceRecord& r : records) {
    out << r.iteration << ',' << format_double(r.loss) << ','
        << format_double(r.report.train_accuracy) << ','
        << format_double(r.report.erank_intra) << ','
        << format_double(r.report.erank_inter) << ','
        << format_double(r.report.erank_weights) << ','
        << format_double(r.report.weight_alignment) << ','
        << format_double(r.report.instance_alignment) << ','
        << format_double(r.report.mir) << ',' << format_double(r.report.hdr)
        << "\n";
  }
}

std::vector<TraceRecord> read_trace(const fs::path& path) {
  const Table table = read_table(path);
  if (table.header != split_csv(kTraceHeader)) {
    malformed(path, 1, "unexpected trace header");
  }
  std::vector<TraceRecord> records;
  long prev_iter = -1;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    TraceRecord r;
    r.iteration = static_cast<long>(row[0]);
    if (r.iteration <= prev_iter) {
      malformed(path, static_cast<int>(i) + 2, "iterations must increase");
    }
    prev_iter = r.iteration;
    r.loss = row[1];
    r.report.train_accuracy = row[2];
    r.report.erank_intra = row[3];
    r.report.erank_inter = row[4];
    r.report.erank_weights = row[5];
    r.report.weight_alignment = row[6];
    r.report.instance_alignment = row[7];
    r.report.mir = row[8];
    r.report.hdr = row[9];
    records.push_back(r);
  }
  return records;
}

void write_manifest(const fs::path& path,
                    const std::map<std::string, std::string>& entries) {
  std::ofstream out = open_out(path);
  out << json(entries).dump(2) << "\n";
}

std::map<std::string, std::string> read_manifest(const fs::path& path) {
  std::ifstream in = open_in(path);
  json doc;
  in >> doc;
  return doc.get<std::map<std::string, std::string>>();
}

} // namespace proto
