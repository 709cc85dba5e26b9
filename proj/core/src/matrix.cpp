#include "leaklab/matrix.hpp"

#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "leaklab/errors.hpp"

namespace leaklab {

namespace {
constexpr char kMagic[4] = {'L', 'L', 'F', 'B'};
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void write_matrix_binary(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open for writing: " + path.string());
  out.write(kMagic, 4);
  const auto r = static_cast<std::uint32_t>(m.rows());
  const auto c = static_cast<std::uint32_t>(m.cols());
  out.write(reinterpret_cast<const char*>(&r), 4);
  out.write(reinterpret_cast<const char*>(&c), 4);
  out.write(reinterpret_cast<const char*>(m.data().data()),
            static_cast<std::streamsize>(m.data().size() * sizeof(double)));
  if (!out) throw ParseError("short write: " + path.string());
}

Matrix read_matrix_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw ParseError("not a frame matrix file: " + path.string());
  std::uint32_t r = 0, c = 0;
  in.read(reinterpret_cast<char*>(&r), 4);
  in.read(reinterpret_cast<char*>(&c), 4);
  if (!in) throw ParseError("truncated header: " + path.string());
  Matrix m(r, c);
  in.read(reinterpret_cast<char*>(m.data().data()),
          static_cast<std::streamsize>(m.data().size() * sizeof(double)));
  if (!in) throw ParseError("truncated data: " + path.string());
  return m;
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open for writing: " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << m.at(i, j);
    }
    out << '\n';
  }
}

Matrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open: " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v = 0.0;
      const char* first = cell.data();
      const char* last = cell.data() + cell.size();
      while (first != last && (*first == ' ' || *first == '\t')) ++first;
      auto [p, ec] = std::from_chars(first, last, v);
      if (ec != std::errc())
        throw ParseError(path.string() + ": bad number at line " + std::to_string(lineno));
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(path.string() + ": ragged row at line " + std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m.at(i, j) = rows[i][j];
  return m;
}

Matrix read_matrix_file(const std::filesystem::path& path) {
  if (path.extension() == ".csv") return read_matrix_csv(path);
  return read_matrix_binary(path);
}

}  // namespace leaklab
