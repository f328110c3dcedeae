#ifndef NAM_INGEST_HPP
#define NAM_INGEST_HPP

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nam/errors.hpp"
#include "nam/item2vec.hpp"
#include "nam/views.hpp"

namespace nam {

struct RatingsRecord {
  std::string user;
  std::string item;
  double rating = 0.0;
  std::optional<long long> timestamp;
};

struct SessionRecord {
  std::string session;
  std::vector<std::string> items;
};

struct ParseStats {
  std::size_t parsed = 0;
  std::size_t malformed = 0;
  std::vector<std::string> messages;  // capped
};

namespace detail {

inline std::vector<std::string> split(const std::string& s, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(s);
  while (std::getline(ss, field, delim)) out.push_back(field);
  if (!s.empty() && s.back() == delim) out.push_back("");
  return out;
}

inline void note_malformed(ParseStats& stats, const std::string& path,
                           std::size_t line_no, const std::string& what) {
  ++stats.malformed;
  if (stats.messages.size() < 20)
    stats.messages.push_back(path + ":" + std::to_string(line_no) + ": " + what);
}

}  // namespace detail

// user, item, rating[, timestamp] rows; malformed lines are reported with
// line numbers rather than aborting the parse.
inline std::vector<RatingsRecord> parse_ratings(const std::string& path,
                                                char delimiter, bool has_header,
                                                ParseStats* stats = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open ratings file: " + path);
  std::vector<RatingsRecord> out;
  ParseStats local;
  ParseStats& st = stats ? *stats : local;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 && has_header) continue;
    if (line.empty()) continue;
    auto fields = detail::split(line, delimiter);
    if (fields.size() < 3) {
      detail::note_malformed(st, path, line_no, "expected >= 3 fields");
      continue;
    }
    RatingsRecord rec;
    rec.user = fields[0];
    rec.item = fields[1];
    try {
      rec.rating = std::stod(fields[2]);
      if (fields.size() > 3 && !fields[3].empty())
        rec.timestamp = std::stoll(fields[3]);
    } catch (const std::exception&) {
      detail::note_malformed(st, path, line_no, "malformed numeric field");
      continue;
    }
    ++st.parsed;
    out.push_back(std::move(rec));
  }
  return out;
}

// Keeps records with rating strictly above the threshold, grouped per user.
// Deterministic ordering (users and items sorted).
inline std::map<std::string, std::vector<std::string>> filter_positive(
    const std::vector<RatingsRecord>& records, double threshold = 3.5) {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& rec : records)
    if (rec.rating > threshold) out[rec.user].push_back(rec.item);
  return out;
}

// "session-id<TAB>item1,item2,..." per line.
inline std::vector<SessionRecord> parse_sessions(const std::string& path,
                                                 ParseStats* stats = nullptr) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open sessions file: " + path);
  std::vector<SessionRecord> out;
  ParseStats local;
  ParseStats& st = stats ? *stats : local;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      detail::note_malformed(st, path, line_no, "expected session<TAB>items");
      continue;
    }
    SessionRecord rec;
    rec.session = line.substr(0, tab);
    for (const auto& item : detail::split(line.substr(tab + 1), ','))
      if (!item.empty()) rec.items.push_back(item);
    if (rec.items.empty()) {
      detail::note_malformed(st, path, line_no, "empty item list");
      continue;
    }
    ++st.parsed;
    out.push_back(std::move(rec));
  }
  return out;
}

// -------------------------------------------------------------------------
// Metadata

struct AttributeColumn {
  std::string name;
  ViewKind kind = ViewKind::multihot;  // multihot, onehot or scalar (year)
};

struct MetadataTable {
  std::vector<AttributeColumn> columns;
  // raw cell per (item, column); absent key = missing field
  std::map<std::string, std::map<std::string, std::string>> cells;
};

// Tab-separated file with a header row: item_id, then attribute columns.
// Multihot cells use '|' between labels. The schema maps column names to
// view kinds; in strict mode an unknown column is an error.
inline MetadataTable parse_metadata(const std::string& path,
                                    const std::vector<AttributeColumn>& schema,
                                    bool strict = true) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metadata file: " + path);
  MetadataTable table;
  table.columns = schema;
  std::map<std::string, ViewKind> kinds;
  for (const auto& col : schema) kinds[col.name] = col.kind;

  std::string line;
  if (!std::getline(in, line)) return table;
  std::size_t line_no = 1;
  const auto header = detail::split(line, '\t');
  if (header.empty() || header[0] != "item_id")
    throw ParseError(path, 1, "header must start with item_id");
  for (std::size_t c = 1; c < header.size(); ++c)
    if (strict && !kinds.count(header[c]))
      throw ParseError(path, 1, "unknown column in strict mode: " + header[c]);

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = detail::split(line, '\t');
    if (fields.size() > header.size())
      throw ParseError(path, line_no, "more fields than header columns");
    const std::string& item = fields[0];
    if (item.empty()) throw ParseError(path, line_no, "empty item id");
    auto& row = table.cells[item];
    for (std::size_t c = 1; c < fields.size(); ++c) {
      if (!kinds.count(header[c])) continue;
      row[header[c]] = fields[c];
    }
  }
  return table;
}

// -------------------------------------------------------------------------
// Registry construction

struct RegistryConfig {
  std::size_t min_label_freq = 2;  // multihot vocabulary cutoff
  bool use_cf = true;
  std::string text_view_path;      // optional dense text vectors
  std::size_t text_dim = 0;
};

struct RegistryBuild {
  ViewRegistry registry;
  // vocabularies per multihot/onehot view, for serialization
  std::map<std::string, std::vector<std::string>> vocabularies;
  std::map<std::string, std::pair<double, double>> year_stats;  // mean, std
};

namespace detail {

inline std::set<std::string> multihot_labels(const std::string& cell) {
  std::set<std::string> labels;
  for (const auto& label : split(cell, '|'))
    if (!label.empty()) labels.insert(label);
  return labels;
}

}  // namespace detail

// Assembles the view registry: CF view first (when given), then content
// views in schema order, then the dense text view. Presence is never
// fabricated: a view row exists only when a raw data source supplied it.
inline RegistryBuild build_registry(const Catalog& catalog,
                                    const MetadataTable& metadata,
                                    const DirectViewTable* cf_view,
                                    const RegistryConfig& config) {
  RegistryBuild build;
  build.registry.catalog = catalog;

  if (config.use_cf) {
    if (!cf_view) throw DomainError("build_registry: CF view required but missing");
    build.registry.views.push_back(*cf_view);
  }

  for (const auto& col : metadata.columns) {
    DirectViewTable table;
    table.view = {col.name, col.kind};
    switch (col.kind) {
      case ViewKind::multihot: {
        std::map<std::string, std::size_t> counts;
        for (const auto& [item, row] : metadata.cells) {
          auto it = row.find(col.name);
          if (it == row.end()) continue;
          for (const auto& label : detail::multihot_labels(it->second))
            ++counts[label];
        }
        std::vector<std::string> vocab;
        for (const auto& [label, count] : counts)
          if (count >= config.min_label_freq) vocab.push_back(label);
        if (vocab.empty())
          throw DomainError("view " + col.name + ": empty vocabulary");
        table.dim = vocab.size();
        for (const auto& [item, row] : metadata.cells) {
          auto it = row.find(col.name);
          if (it == row.end()) continue;  // field missing -> view absent
          std::set<std::string> labels;
          for (const auto& label : detail::multihot_labels(it->second))
            if (counts.count(label) && counts[label] >= config.min_label_freq)
              labels.insert(label);  // pruned labels dropped
          table.put(item, encode_multihot(vocab, labels));
        }
        build.vocabularies[col.name] = std::move(vocab);
        break;
      }
      case ViewKind::onehot: {
        std::set<std::string> seen;
        for (const auto& [item, row] : metadata.cells) {
          auto it = row.find(col.name);
          if (it != row.end() && !it->second.empty()) seen.insert(it->second);
        }
        if (seen.empty())
          throw DomainError("view " + col.name + ": empty vocabulary");
        std::vector<std::string> vocab(seen.begin(), seen.end());
        table.dim = vocab.size();
        for (const auto& [item, row] : metadata.cells) {
          auto it = row.find(col.name);
          if (it == row.end() || it->second.empty()) continue;
          table.put(item, encode_onehot(vocab, it->second));
        }
        build.vocabularies[col.name] = std::move(vocab);
        break;
      }
      case ViewKind::scalar: {
        // year-style scalar, normalized by mean/std over items that have it
        std::vector<std::pair<std::string, long>> values;
        for (const auto& [item, row] : metadata.cells) {
          auto it = row.find(col.name);
          if (it == row.end() || it->second.empty()) continue;
          try {
            values.emplace_back(item, std::stol(it->second));
          } catch (const std::exception&) {
            throw DomainError("view " + col.name + ": non-integer value '" +
                              it->second + "' for item " + item);
          }
        }
        if (values.empty())
          throw DomainError("view " + col.name + ": no values");
        double mean = 0.0;
        for (const auto& [item, y] : values) mean += static_cast<double>(y);
        mean /= static_cast<double>(values.size());
        double var = 0.0;
        for (const auto& [item, y] : values)
          var += (y - mean) * (y - mean);
        double std_dev = std::sqrt(var / static_cast<double>(values.size()));
        if (std_dev <= 0.0) std_dev = 1.0;  // all values equal
        table.dim = 1;
        for (const auto& [item, y] : values)
          table.put(item, encode_year(y, mean, std_dev));
        build.year_stats[col.name] = {mean, std_dev};
        break;
      }
      default:
        throw DomainError("view " + col.name + ": unsupported metadata kind");
    }
    build.registry.views.push_back(std::move(table));
  }

  if (!config.text_view_path.empty()) {
    if (config.text_dim == 0)
      throw DomainError("build_registry: text view needs a declared dimension");
    build.registry.views.push_back(load_dense_view(
        config.text_view_path, config.text_dim, "text", ViewKind::dense));
  }

  build.registry.finalize();
  return build;
}

// -------------------------------------------------------------------------
// Catalog / basket artifacts

inline Catalog build_catalog(
    const std::map<std::string, std::vector<std::string>>& histories,
    const MetadataTable& metadata) {
  std::set<std::string> items;
  for (const auto& [user, list] : histories)
    for (const auto& item : list) items.insert(item);
  // metadata-only items stay in the catalog as permanently cold items
  for (const auto& [item, row] : metadata.cells) items.insert(item);
  Catalog catalog;
  catalog.build(items);
  return catalog;
}

inline std::vector<std::vector<std::uint32_t>> index_histories(
    const std::map<std::string, std::vector<std::string>>& histories,
    const Catalog& catalog) {
  std::vector<std::vector<std::uint32_t>> out;
  out.reserve(histories.size());
  for (const auto& [user, items] : histories) {
    std::vector<std::uint32_t> row;
    row.reserve(items.size());
    for (const auto& item : items) row.push_back(catalog.at(item));
    out.push_back(std::move(row));
  }
  return out;
}

inline void save_catalog(const Catalog& catalog, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write catalog: " + path);
  for (const auto& id : catalog.ids) out << id << '\n';
}

inline Catalog load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open catalog: " + path);
  std::set<std::string> items;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) items.insert(line);
  Catalog catalog;
  catalog.build(items);
  return catalog;
}

inline void save_baskets(const BasketDataset& data, const Catalog& catalog,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write baskets: " + path);
  for (const auto& basket : data.baskets) {
    for (std::size_t k = 0; k < basket.size(); ++k)
      out << (k ? "," : "") << catalog.ids[basket[k]];
    out << '\n';
  }
}

inline BasketDataset load_baskets(const std::string& path,
                                  const Catalog& catalog) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open baskets: " + path);
  BasketDataset data;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::uint32_t> basket;
    for (const auto& item : detail::split(line, ','))
      if (!item.empty()) basket.push_back(catalog.at(item));
    if (basket.size() >= 2) data.baskets.push_back(std::move(basket));
  }
  return data;
}

}  // namespace nam

#endif  // NAM_INGEST_HPP
