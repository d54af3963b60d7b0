#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "dgm/tensor.hpp"

namespace dgm::csv {

/// Shortest decimal text that parses back to exactly the same double.
std::string format(double v);

/// Writes rows to a file, failing loudly if the file cannot be opened.
class Writer {
 public:
  Writer(const std::string& path, const std::vector<std::string>& header);
  /// Appends to an existing file without repeating the header.
  struct Append {};
  Writer(const std::string& path, Append);
  void row(const std::vector<double>& values);
  /// Row with a leading integer column.
  void row(long long first, const std::vector<double>& values);
  /// Preformatted cells (empty strings leave a cell blank).
  void cells(const std::vector<std::string>& values);
  void comment(const std::string& text);
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  std::string path_;
};

/// Header plus one row per tensor row, columns named by `header`.
void write_matrix(const std::string& path, const std::vector<std::string>& header, const Tensor& m);

}  // namespace dgm::csv
