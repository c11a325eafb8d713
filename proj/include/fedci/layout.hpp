#ifndef FEDCI_LAYOUT_HPP
#define FEDCI_LAYOUT_HPP

#include <map>
#include <optional>

#include "fedci/types.hpp"

namespace fedci {

// Coefficient layout on the combined data: a shared block followed by one
// block per site for dataset-specific ("unstable") coefficients. The same
// structure is instantiated separately for the outcome (beta) and the
// propensity (gamma) spaces.
struct GlobalLayout {
  std::vector<std::string> shared_names;
  // site -> its unstable coefficient names, in block order. Sites appear in
  // the order their blocks occupy the layout.
  std::vector<std::pair<std::string, std::vector<std::string>>> per_site_unstable;

  Eigen::Index total_dim() const;
  bool restricted() const;

  // Global slot of a shared name, or of `site`'s unstable name.
  Eigen::Index slot(const std::string& name,
                    const std::string& site = std::string()) const;

  // Global slots backing `site`'s local coefficient order: shared names
  // first (layout order), then the site's own unstable names.
  std::vector<Eigen::Index> site_slots(const std::string& site) const;
  std::vector<std::string> site_local_names(const std::string& site) const;

  // Fully-shared layout (restricted mode).
  static GlobalLayout all_shared(std::vector<std::string> names);

  // Partition `names` into shared and per-site blocks; every unstable name
  // must belong to exactly one site and be absent from `shared`.
  static GlobalLayout partition(
      const std::vector<std::string>& names,
      const std::map<std::string, std::vector<std::string>>& unstable_by_site,
      const std::vector<std::string>& site_order);

  std::string canonical_string() const;
  std::uint64_t fingerprint() const;  // FNV-1a over canonical_string()
};

// Scatter a site's local vector/matrix into the global layout; every entry
// outside the site's slots is exactly zero.
std::pair<VectorXd, MatrixXd> zero_pad(const VectorXd& local_vector,
                                       const MatrixXd& local_matrix,
                                       const std::string& site_id,
                                       const GlobalLayout& layout);

VectorXd zero_pad_vector(const VectorXd& local_vector,
                         const std::string& site_id, const GlobalLayout& layout);
MatrixXd zero_pad_matrix(const MatrixXd& local_matrix,
                         const std::string& site_id, const GlobalLayout& layout);
// Rectangular scatter: rows in `row_layout` for `site`, columns likewise in
// `col_layout` (used for the C blocks whose two sides live in beta/gamma
// spaces).
MatrixXd zero_pad_cross(const MatrixXd& local_matrix, const std::string& site_id,
                        const GlobalLayout& row_layout,
                        const GlobalLayout& col_layout);

// Gather back the site's blocks (inverse of the scatter).
VectorXd gather_vector(const VectorXd& padded, const std::string& site_id,
                       const GlobalLayout& layout);
MatrixXd gather_matrix(const MatrixXd& padded, const std::string& site_id,
                       const GlobalLayout& layout);

// True if every entry of `padded` outside the site's slots is exactly zero.
bool padding_is_clean(const MatrixXd& padded, const std::string& site_id,
                      const GlobalLayout& layout);
bool padding_is_clean(const VectorXd& padded, const std::string& site_id,
                      const GlobalLayout& layout);

}  // namespace fedci

#endif  // FEDCI_LAYOUT_HPP
