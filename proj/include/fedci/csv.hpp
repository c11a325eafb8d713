#ifndef FEDCI_CSV_HPP
#define FEDCI_CSV_HPP

#include "fedci/types.hpp"

namespace fedci {

struct CsvTable {
  std::vector<std::string> header;
  MatrixXd values;  // rows x columns, all numeric

  Eigen::Index column(const std::string& name) const;
};

// Strict dialect: comma separated, header row required, UTF-8, '.' decimal,
// no empty cells.
CsvTable read_csv(const std::string& path);

Dataset dataset_from_csv(const CsvTable& table, const std::string& outcome,
                         const std::string& treatment,
                         const std::vector<std::string>& covariates);

void write_csv(const std::string& path, const CsvTable& table);

}  // namespace fedci

#endif  // FEDCI_CSV_HPP
