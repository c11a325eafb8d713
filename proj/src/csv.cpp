#include "fedci/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace fedci {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& cell, std::size_t line_no,
                  const std::string& col) {
  if (cell.empty())
    throw ParseError("empty cell in column '" + col + "' at line " +
                     std::to_string(line_no));
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  while (end > begin && (end[-1] == ' ' || end[-1] == '\t' || end[-1] == '\r'))
    --end;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end)
    throw ParseError("cannot parse '" + cell + "' in column '" + col +
                     "' at line " + std::to_string(line_no));
  return value;
}

}  // namespace

Eigen::Index CsvTable::column(const std::string& name) const {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return static_cast<Eigen::Index>(j);
  throw ParseError("missing column: " + name);
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);

  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  table.header = split_line(line);
  if (table.header.empty()) throw ParseError("empty header in " + path);

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != table.header.size())
      throw ParseError("row at line " + std::to_string(line_no) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(table.header.size()));
    std::vector<double> row(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j)
      row[j] = parse_cell(cells[j], line_no, table.header[j]);
    rows.push_back(std::move(row));
  }

  table.values.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(table.header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      table.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rows[i][j];
  return table;
}

Dataset dataset_from_csv(const CsvTable& table, const std::string& outcome,
                         const std::string& treatment,
                         const std::vector<std::string>& covariates) {
  Dataset data;
  data.y = table.values.col(table.column(outcome));
  data.w = table.values.col(table.column(treatment));
  data.x.resize(table.values.rows(),
                static_cast<Eigen::Index>(covariates.size()));
  for (std::size_t j = 0; j < covariates.size(); ++j)
    data.x.col(static_cast<Eigen::Index>(j)) =
        table.values.col(table.column(covariates[j]));
  data.covariate_names = covariates;
  for (Eigen::Index i = 0; i < data.w.size(); ++i)
    if (data.w[i] != 0.0 && data.w[i] != 1.0)
      throw ParseError("treatment column '" + treatment +
                       "' has a non-binary value at row " + std::to_string(i + 1));
  data.validate();
  return data;
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (std::size_t j = 0; j < table.header.size(); ++j)
    out << (j ? "," : "") << table.header[j];
  out << "\n";
  out.precision(17);
  for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < table.values.cols(); ++j)
      out << (j ? "," : "") << table.values(i, j);
    out << "\n";
  }
}

}  // namespace fedci
