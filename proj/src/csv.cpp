#include "dgm/csv.hpp"

#include <charconv>

#include "dgm/error.hpp"

namespace dgm::csv {

std::string format(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

Writer::Writer(const std::string& path, const std::vector<std::string>& header)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
  if (!out_) throw Error("cannot open '" + path + "' for writing");
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

Writer::Writer(const std::string& path, Append) : out_(path, std::ios::binary | std::ios::app), path_(path) {
  if (!out_) throw Error("cannot open '" + path + "' for appending");
}

void Writer::row(const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << format(values[i]);
  out_ << '\n';
}

void Writer::row(long long first, const std::vector<double>& values) {
  out_ << first;
  for (double v : values) out_ << ',' << format(v);
  out_ << '\n';
}

void Writer::cells(const std::vector<std::string>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) out_ << (i ? "," : "") << values[i];
  out_ << '\n';
}

void Writer::comment(const std::string& text) { out_ << "# " << text << '\n'; }

void write_matrix(const std::string& path, const std::vector<std::string>& header, const Tensor& m) {
  Writer w(path, header);
  for (std::size_t r = 0; r < m.rows() && m.numel() > 0; ++r) w.row(m.row(r));
}

}  // namespace dgm::csv
