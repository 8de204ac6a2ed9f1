#pragma once

// Append-only CSV emission with a single header line.

#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rdlt/format.hpp"

namespace rdlt {

class MetricsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string csv_row(std::span<const double> row) {
  std::string line;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) line += ',';
    line += format_double(row[i]);
  }
  return line;
}

/// Opens `path` for appending. A new or empty file gets `header`; an existing
/// file must already start with exactly that header.
class MetricsWriter {
 public:
  MetricsWriter(std::string path, std::string header) : path_(std::move(path)), header_(std::move(header)) {
    std::error_code ec;
    const bool has_content = std::filesystem::exists(path_, ec) && std::filesystem::file_size(path_, ec) > 0;
    if (has_content) {
      std::ifstream in(path_);
      std::string first;
      std::getline(in, first);
      if (first != header_)
        throw MetricsError("metrics file '" + path_ + "' has header '" + first + "', expected '" + header_ + "'");
    }
    out_.open(path_, std::ios::app);
    if (!out_) throw MetricsError("cannot open metrics file '" + path_ + "'");
    if (!has_content) {
      out_ << header_ << '\n';
      flush();
    }
  }

  void append(std::span<const double> row) {
    out_ << csv_row(row) << '\n';
    flush();
  }

  void append_rows(const std::vector<std::vector<double>>& rows) {
    for (const auto& r : rows) out_ << csv_row(r) << '\n';
    flush();
  }

  /// Raw pre-formatted line (for rows with text columns).
  void append_line(const std::string& line) {
    out_ << line << '\n';
    flush();
  }

  const std::string& path() const { return path_; }

 private:
  void flush() {
    out_.flush();
    if (!out_) throw MetricsError("write failed for metrics file '" + path_ + "'");
  }

  std::string path_;
  std::string header_;
  std::ofstream out_;
};

/// One-shot convenience: header (if new) plus `rows`.
inline void write_metrics(const std::vector<std::vector<double>>& rows, const std::string& path,
                          const std::string& header) {
  MetricsWriter w(path, header);
  w.append_rows(rows);
}

}  // namespace rdlt
