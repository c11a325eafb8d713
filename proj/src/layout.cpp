#include "fedci/layout.hpp"

#include <algorithm>

namespace fedci {

Eigen::Index GlobalLayout::total_dim() const {
  std::size_t total = shared_names.size();
  for (const auto& [site, names] : per_site_unstable) total += names.size();
  return static_cast<Eigen::Index>(total);
}

bool GlobalLayout::restricted() const {
  for (const auto& [site, names] : per_site_unstable)
    if (!names.empty()) return false;
  return true;
}

Eigen::Index GlobalLayout::slot(const std::string& name,
                                const std::string& site) const {
  for (std::size_t j = 0; j < shared_names.size(); ++j)
    if (shared_names[j] == name) return static_cast<Eigen::Index>(j);
  // The same covariate name may be unstable at several sites; each block
  // owns its own slot, so the lookup is scoped to the requested site.
  Eigen::Index offset = static_cast<Eigen::Index>(shared_names.size());
  for (const auto& [sid, names] : per_site_unstable) {
    if (sid == site)
      for (std::size_t j = 0; j < names.size(); ++j)
        if (names[j] == name) return offset + static_cast<Eigen::Index>(j);
    offset += static_cast<Eigen::Index>(names.size());
  }
  for (const auto& [sid, names] : per_site_unstable)
    for (const auto& other : names)
      if (other == name)
        throw Error("coefficient '" + name + "' belongs to site '" + sid +
                    "', not '" + site + "'");
  throw Error("unknown coefficient name: " + name);
}

std::vector<Eigen::Index> GlobalLayout::site_slots(
    const std::string& site) const {
  std::vector<Eigen::Index> slots;
  for (std::size_t j = 0; j < shared_names.size(); ++j)
    slots.push_back(static_cast<Eigen::Index>(j));
  Eigen::Index offset = static_cast<Eigen::Index>(shared_names.size());
  for (const auto& [sid, names] : per_site_unstable) {
    if (sid == site)
      for (std::size_t j = 0; j < names.size(); ++j)
        slots.push_back(offset + static_cast<Eigen::Index>(j));
    offset += static_cast<Eigen::Index>(names.size());
  }
  return slots;
}

std::vector<std::string> GlobalLayout::site_local_names(
    const std::string& site) const {
  std::vector<std::string> names = shared_names;
  for (const auto& [sid, block] : per_site_unstable)
    if (sid == site) names.insert(names.end(), block.begin(), block.end());
  return names;
}

GlobalLayout GlobalLayout::all_shared(std::vector<std::string> names) {
  GlobalLayout layout;
  layout.shared_names = std::move(names);
  return layout;
}

GlobalLayout GlobalLayout::partition(
    const std::vector<std::string>& names,
    const std::map<std::string, std::vector<std::string>>& unstable_by_site,
    const std::vector<std::string>& site_order) {
  GlobalLayout layout;
  auto is_unstable = [&](const std::string& name) {
    for (const auto& [site, block] : unstable_by_site)
      if (std::find(block.begin(), block.end(), name) != block.end())
        return true;
    return false;
  };
  for (const auto& name : names)
    if (!is_unstable(name)) layout.shared_names.push_back(name);
  for (const auto& site : site_order) {
    auto it = unstable_by_site.find(site);
    layout.per_site_unstable.emplace_back(
        site, it == unstable_by_site.end() ? std::vector<std::string>{}
                                           : it->second);
  }
  // Unstable names must stay out of the shared block and not repeat within
  // a site; the same name at two different sites is two parameters.
  for (const auto& [site, block] : layout.per_site_unstable) {
    std::vector<std::string> seen;
    for (const auto& name : block) {
      if (std::find(layout.shared_names.begin(), layout.shared_names.end(),
                    name) != layout.shared_names.end())
        throw Error("coefficient '" + name + "' is both shared and unstable");
      if (std::find(seen.begin(), seen.end(), name) != seen.end())
        throw Error("coefficient '" + name + "' repeats in site '" + site + "'");
      seen.push_back(name);
    }
  }
  return layout;
}

std::string GlobalLayout::canonical_string() const {
  std::string s = "shared=";
  for (const auto& name : shared_names) s += name + ",";
  for (const auto& [site, names] : per_site_unstable) {
    s += "|" + site + "=";
    for (const auto& name : names) s += name + ",";
  }
  return s;
}

std::uint64_t GlobalLayout::fingerprint() const {
  // FNV-1a 64-bit
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : canonical_string()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

VectorXd zero_pad_vector(const VectorXd& local_vector,
                         const std::string& site_id,
                         const GlobalLayout& layout) {
  const auto slots = layout.site_slots(site_id);
  if (local_vector.size() != static_cast<Eigen::Index>(slots.size()))
    throw DimensionError("local vector does not match the site's layout");
  VectorXd padded = VectorXd::Zero(layout.total_dim());
  for (std::size_t j = 0; j < slots.size(); ++j)
    padded[slots[j]] = local_vector[static_cast<Eigen::Index>(j)];
  return padded;
}

MatrixXd zero_pad_matrix(const MatrixXd& local_matrix,
                         const std::string& site_id,
                         const GlobalLayout& layout) {
  const auto slots = layout.site_slots(site_id);
  if (local_matrix.rows() != static_cast<Eigen::Index>(slots.size()) ||
      local_matrix.cols() != static_cast<Eigen::Index>(slots.size()))
    throw DimensionError("local matrix does not match the site's layout");
  MatrixXd padded = MatrixXd::Zero(layout.total_dim(), layout.total_dim());
  for (std::size_t r = 0; r < slots.size(); ++r)
    for (std::size_t c = 0; c < slots.size(); ++c)
      padded(slots[r], slots[c]) =
          local_matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  return padded;
}

MatrixXd zero_pad_cross(const MatrixXd& local_matrix, const std::string& site_id,
                        const GlobalLayout& row_layout,
                        const GlobalLayout& col_layout) {
  const auto rslots = row_layout.site_slots(site_id);
  const auto cslots = col_layout.site_slots(site_id);
  if (local_matrix.rows() != static_cast<Eigen::Index>(rslots.size()) ||
      local_matrix.cols() != static_cast<Eigen::Index>(cslots.size()))
    throw DimensionError("local cross matrix does not match the layouts");
  MatrixXd padded =
      MatrixXd::Zero(row_layout.total_dim(), col_layout.total_dim());
  for (std::size_t r = 0; r < rslots.size(); ++r)
    for (std::size_t c = 0; c < cslots.size(); ++c)
      padded(rslots[r], cslots[c]) =
          local_matrix(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  return padded;
}

std::pair<VectorXd, MatrixXd> zero_pad(const VectorXd& local_vector,
                                       const MatrixXd& local_matrix,
                                       const std::string& site_id,
                                       const GlobalLayout& layout) {
  return {zero_pad_vector(local_vector, site_id, layout),
          zero_pad_matrix(local_matrix, site_id, layout)};
}

VectorXd gather_vector(const VectorXd& padded, const std::string& site_id,
                       const GlobalLayout& layout) {
  const auto slots = layout.site_slots(site_id);
  if (padded.size() != layout.total_dim())
    throw DimensionError("padded vector does not match the layout");
  VectorXd local(static_cast<Eigen::Index>(slots.size()));
  for (std::size_t j = 0; j < slots.size(); ++j)
    local[static_cast<Eigen::Index>(j)] = padded[slots[j]];
  return local;
}

MatrixXd gather_matrix(const MatrixXd& padded, const std::string& site_id,
                       const GlobalLayout& layout) {
  const auto slots = layout.site_slots(site_id);
  if (padded.rows() != layout.total_dim() || padded.cols() != layout.total_dim())
    throw DimensionError("padded matrix does not match the layout");
  MatrixXd local(static_cast<Eigen::Index>(slots.size()),
                 static_cast<Eigen::Index>(slots.size()));
  for (std::size_t r = 0; r < slots.size(); ++r)
    for (std::size_t c = 0; c < slots.size(); ++c)
      local(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          padded(slots[r], slots[c]);
  return local;
}

bool padding_is_clean(const VectorXd& padded, const std::string& site_id,
                      const GlobalLayout& layout) {
  const auto slots = layout.site_slots(site_id);
  std::vector<bool> owned(padded.size(), false);
  for (auto s : slots) owned[static_cast<std::size_t>(s)] = true;
  for (Eigen::Index i = 0; i < padded.size(); ++i)
    if (!owned[static_cast<std::size_t>(i)] && padded[i] != 0.0) return false;
  return true;
}

bool padding_is_clean(const MatrixXd& padded, const std::string& site_id,
                      const GlobalLayout& layout) {
  const auto slots = layout.site_slots(site_id);
  std::vector<bool> owned(padded.rows(), false);
  for (auto s : slots) owned[static_cast<std::size_t>(s)] = true;
  for (Eigen::Index r = 0; r < padded.rows(); ++r)
    for (Eigen::Index c = 0; c < padded.cols(); ++c)
      if ((!owned[static_cast<std::size_t>(r)] ||
           !owned[static_cast<std::size_t>(c)]) &&
          padded(r, c) != 0.0)
        return false;
  return true;
}

}  // namespace fedci
