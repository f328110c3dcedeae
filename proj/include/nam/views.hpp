#ifndef NAM_VIEWS_HPP
#define NAM_VIEWS_HPP

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "nam/core_math.hpp"
#include "nam/errors.hpp"

namespace nam {

enum class ViewKind { cf, multihot, onehot, scalar, dense };

inline std::string view_kind_name(ViewKind k) {
  switch (k) {
    case ViewKind::cf: return "cf";
    case ViewKind::multihot: return "multihot";
    case ViewKind::onehot: return "onehot";
    case ViewKind::scalar: return "scalar";
    case ViewKind::dense: return "dense";
  }
  return "?";
}

inline ViewKind view_kind_from_name(const std::string& s) {
  if (s == "cf") return ViewKind::cf;
  if (s == "multihot") return ViewKind::multihot;
  if (s == "onehot") return ViewKind::onehot;
  if (s == "scalar") return ViewKind::scalar;
  if (s == "dense") return ViewKind::dense;
  throw DomainError("unknown view kind: " + s);
}

struct ViewId {
  std::string name;
  ViewKind kind = ViewKind::dense;
};

// Per-view table of item vectors with presence flags. Items without a row
// are absent from the view; a present zero vector means "consumed, empty".
struct DirectViewTable {
  ViewId view;
  std::size_t dim = 0;
  std::map<std::string, Vec> rows;  // ordered for deterministic serialization

  bool present(const std::string& item) const { return rows.count(item) > 0; }

  const Vec* get(const std::string& item) const {
    auto it = rows.find(item);
    return it == rows.end() ? nullptr : &it->second;
  }

  void put(const std::string& item, Vec v) {
    if (v.size() != dim)
      throw ShapeError("view " + view.name + ": row for '" + item + "' has " +
                       std::to_string(v.size()) + " values, expected " +
                       std::to_string(dim));
    rows[item] = std::move(v);
  }
};

// Sorted item catalog; index order is id order (numeric-aware so that
// "10" sorts after "2").
struct Catalog {
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::uint32_t> index;

  static bool id_less(const std::string& a, const std::string& b) {
    const bool na = !a.empty() && a.find_first_not_of("0123456789") == std::string::npos;
    const bool nb = !b.empty() && b.find_first_not_of("0123456789") == std::string::npos;
    if (na && nb) {
      if (a.size() != b.size()) return a.size() < b.size();
      return a < b;
    }
    if (na != nb) return na;  // numeric ids before symbolic ones
    return a < b;
  }

  void build(const std::set<std::string>& items) {
    ids.assign(items.begin(), items.end());
    std::sort(ids.begin(), ids.end(), id_less);
    index.clear();
    for (std::uint32_t k = 0; k < ids.size(); ++k) index[ids[k]] = k;
  }

  std::size_t size() const { return ids.size(); }

  std::uint32_t at(const std::string& id) const {
    auto it = index.find(id);
    if (it == index.end()) throw LookupError("unknown item id: " + id);
    return it->second;
  }
};

// Ordered view list; the order defines the attention softmax axis.
struct ViewRegistry {
  Catalog catalog;
  std::vector<DirectViewTable> views;

  // baked[h][item_index] -> row pointer or nullptr, built by finalize()
  std::vector<std::vector<const Vec*>> baked;

  std::size_t view_index(const std::string& name) const {
    for (std::size_t h = 0; h < views.size(); ++h)
      if (views[h].view.name == name) return h;
    throw LookupError("unregistered view: " + name);
  }

  void finalize() {
    baked.assign(views.size(), {});
    for (std::size_t h = 0; h < views.size(); ++h) {
      baked[h].assign(catalog.size(), nullptr);
      for (const auto& [id, row] : views[h].rows) {
        auto it = catalog.index.find(id);
        if (it != catalog.index.end()) baked[h][it->second] = &row;
      }
    }
  }

  const Vec* vector(std::size_t view_idx, std::uint32_t item_idx) const {
    return baked[view_idx][item_idx];
  }

  bool present(std::size_t view_idx, std::uint32_t item_idx) const {
    return baked[view_idx][item_idx] != nullptr;
  }
};

inline Vec encode_multihot(const std::vector<std::string>& vocabulary,
                           const std::set<std::string>& labels) {
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t k = 0; k < vocabulary.size(); ++k) pos[vocabulary[k]] = k;
  Vec out(vocabulary.size(), 0.0);
  for (const auto& label : labels) {
    auto it = pos.find(label);
    if (it == pos.end()) throw DomainError("label not in vocabulary: " + label);
    out[it->second] = 1.0;
  }
  return out;
}

inline Vec encode_onehot(const std::vector<std::string>& vocabulary,
                         const std::string& label) {
  Vec out(vocabulary.size(), 0.0);
  for (std::size_t k = 0; k < vocabulary.size(); ++k)
    if (vocabulary[k] == label) {
      out[k] = 1.0;
      return out;
    }
  throw DomainError("label not in vocabulary: " + label);
}

inline Vec encode_year(long year, double mean, double std_dev) {
  if (std_dev <= 0.0) throw DomainError("encode_year: std must be positive");
  return Vec{(static_cast<double>(year) - mean) / std_dev};
}

// Dense view file: one record per line, "item-id<TAB>v1<TAB>...<TAB>v_dim".
// Lines starting with '#' are header/comment lines and are skipped.
inline DirectViewTable load_dense_view(const std::string& path,
                                       std::size_t expected_dim,
                                       const std::string& name = "dense",
                                       ViewKind kind = ViewKind::dense) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dense view file: " + path);
  DirectViewTable table;
  table.view = {name, kind};
  table.dim = expected_dim;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string id;
    if (!std::getline(ss, id, '\t') || id.empty())
      throw ParseError(path, line_no, "missing item id");
    if (table.rows.count(id))
      throw ParseError(path, line_no, "duplicate item id: " + id);
    Vec v;
    std::string field;
    while (std::getline(ss, field, '\t')) {
      try {
        std::size_t used = 0;
        double x = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
        v.push_back(x);
      } catch (const std::exception&) {
        throw ParseError(path, line_no, "malformed value: '" + field + "'");
      }
    }
    if (v.size() != expected_dim)
      throw ParseError(path, line_no,
                       "record has " + std::to_string(v.size()) +
                           " values, expected " + std::to_string(expected_dim));
    table.rows.emplace(id, std::move(v));
  }
  return table;
}

inline void save_dense_view(const DirectViewTable& table,
                            const std::string& path,
                            const std::string& header = "") {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dense view file: " + path);
  if (!header.empty()) out << "# " << header << "\n";
  out.precision(17);
  for (const auto& [id, row] : table.rows) {
    out << id;
    for (double v : row) out << '\t' << v;
    out << '\n';
  }
}

inline std::vector<std::string> load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file: " + path);
  std::vector<std::string> vocab;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) vocab.push_back(line);
  return vocab;
}

inline void save_vocabulary(const std::vector<std::string>& vocab,
                            const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary file: " + path);
  for (const auto& label : vocab) out << label << '\n';
}

// Lookup with absent-marker semantics: nullptr means the view has no data
// for the item (drives cold masking downstream).
inline const Vec* get_view_vector(const ViewRegistry& registry,
                                  const std::string& item,
                                  const std::string& view_name) {
  const auto& table = registry.views[registry.view_index(view_name)];
  return table.get(item);
}

}  // namespace nam

#endif  // NAM_VIEWS_HPP
