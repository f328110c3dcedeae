#ifndef NAM_EVALUATION_HPP
#define NAM_EVALUATION_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nam/core_math.hpp"
#include "nam/errors.hpp"
#include "nam/item2vec.hpp"
#include "nam/model.hpp"
#include "nam/views.hpp"

namespace nam {

struct ColdSplit {
  std::vector<char> cold;  // per catalog index
  std::uint64_t seed = 0;

  bool is_cold(std::uint32_t item) const { return cold[item] != 0; }

  std::size_t cold_count() const {
    std::size_t n = 0;
    for (char c : cold) n += c != 0;
    return n;
  }
};

enum class Scenario { warm, cold_both, cold_target, cold_query };

inline std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::warm: return "warm";
    case Scenario::cold_both: return "cold-case-1";
    case Scenario::cold_target: return "cold-case-2";
    case Scenario::cold_query: return "cold-case-3";
  }
  return "?";
}

inline int hit_ratio_at_k(std::size_t rank, std::size_t k) {
  if (rank < 1) throw DomainError("hit_ratio_at_k: rank must be >= 1");
  return rank <= k ? 1 : 0;
}

inline double mrr_at_k(std::size_t rank, std::size_t k) {
  if (rank < 1) throw DomainError("mrr_at_k: rank must be >= 1");
  return rank <= k ? 1.0 / static_cast<double>(rank) : 0.0;
}

// Uniformly samples floor(fraction * catalog) cold items and removes every
// occurrence of them from the training baskets; baskets shrinking below two
// items are dropped.
struct ColdSplitResult {
  ColdSplit split;
  BasketDataset filtered;
};

inline ColdSplitResult make_cold_split(std::size_t n_items, double fraction,
                                       std::uint64_t seed,
                                       const BasketDataset& train_baskets) {
  if (fraction <= 0.0 || fraction >= 1.0)
    throw DomainError("make_cold_split: fraction must be in (0, 1)");
  ColdSplitResult out;
  out.split.seed = seed;
  out.split.cold.assign(n_items, 0);
  const std::size_t n_cold =
      static_cast<std::size_t>(fraction * static_cast<double>(n_items));
  std::vector<std::uint32_t> items(n_items);
  std::iota(items.begin(), items.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(items.begin(), items.end(), rng);
  for (std::size_t k = 0; k < n_cold; ++k) out.split.cold[items[k]] = 1;

  for (const auto& basket : train_baskets.baskets) {
    std::vector<std::uint32_t> kept;
    for (std::uint32_t item : basket)
      if (!out.split.cold[item]) kept.push_back(item);
    if (kept.size() < 2) {
      ++out.filtered.dropped;
      continue;
    }
    out.filtered.baskets.push_back(std::move(kept));
  }
  return out;
}

inline Scenario classify_pair(const ColdSplit& split, std::uint32_t i,
                              std::uint32_t j) {
  if (i >= split.cold.size() || j >= split.cold.size())
    throw LookupError("classify_pair: item outside catalog");
  const bool ci = split.is_cold(i), cj = split.is_cold(j);
  if (!ci && !cj) return Scenario::warm;
  if (ci && cj) return Scenario::cold_both;
  if (!ci) return Scenario::cold_target;  // i warm, j cold
  return Scenario::cold_query;            // i cold, j warm
}

// Candidates sorted by psi descending, ties broken by ascending item index
// (catalog order = id order). Candidates sharing no view with the query are
// ranked last, flagged in `no_view`.
inline std::vector<std::uint32_t> rank_candidates(
    const NamModel& model, const ViewRegistry& registry, std::uint32_t query,
    const std::vector<std::uint32_t>& candidates,
    const Mask* disabled = nullptr, std::size_t* no_view = nullptr) {
  if (candidates.empty()) throw DomainError("rank_candidates: no candidates");
  struct Entry {
    std::uint32_t item;
    double psi;
    bool scored;
  };
  std::vector<Entry> entries;
  entries.reserve(candidates.size());
  std::size_t flagged = 0;
  for (std::uint32_t c : candidates) {
    PairCache cache = try_pair_forward(model, registry, query, c, true, disabled);
    if (cache.ok) {
      entries.push_back({c, cache.psi, true});
    } else {
      entries.push_back({c, 0.0, false});
      ++flagged;
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.scored != b.scored) return a.scored;
    if (a.psi != b.psi) return a.psi > b.psi;
    return a.item < b.item;
  });
  if (no_view) *no_view = flagged;
  std::vector<std::uint32_t> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.item);
  return out;
}

struct EvalCell {
  double hr_sum = 0.0;
  double mrr_sum = 0.0;
  std::size_t n = 0;

  double hit_ratio() const { return n ? hr_sum / static_cast<double>(n) : 0.0; }
  double mrr() const { return n ? mrr_sum / static_cast<double>(n) : 0.0; }
};

struct EvalReport {
  std::vector<std::size_t> k_list;
  // cells[scenario_name][k] ; "cold" aggregates the three cold cases
  std::map<std::string, std::map<std::size_t, EvalCell>> cells;
  std::size_t no_common_view = 0;  // pairs counted as misses

  const EvalCell& cell(const std::string& scenario, std::size_t k) const {
    return cells.at(scenario).at(k);
  }
};

// Ranks each test target among the full catalog minus the query item and
// accumulates HR@K / MRR@K into the pair's scenario cell. Per-pair means.
inline EvalReport evaluate(
    const NamModel& model, const ViewRegistry& registry,
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& test_pairs,
    const ColdSplit* split, const std::vector<std::size_t>& k_list,
    const Mask* disabled = nullptr) {
  EvalReport report;
  report.k_list = k_list;
  const std::size_t n_items = registry.catalog.size();
  const std::size_t k_max =
      k_list.empty() ? 0 : *std::max_element(k_list.begin(), k_list.end());
  (void)k_max;

  auto accumulate = [&](const std::string& scenario, std::size_t rank) {
    for (std::size_t k : k_list) {
      EvalCell& cell = report.cells[scenario][k];
      cell.hr_sum += hit_ratio_at_k(rank, k);
      cell.mrr_sum += mrr_at_k(rank, k);
      cell.n += 1;
    }
  };
  auto accumulate_miss = [&](const std::string& scenario) {
    for (std::size_t k : k_list) {
      EvalCell& cell = report.cells[scenario][k];
      cell.n += 1;
    }
  };

  std::vector<std::uint32_t> candidates;
  candidates.reserve(n_items - 1);
  for (const auto& [query, target] : test_pairs) {
    candidates.clear();
    for (std::uint32_t c = 0; c < n_items; ++c)
      if (c != query) candidates.push_back(c);

    std::vector<std::string> scenarios;
    if (split) {
      const Scenario s = classify_pair(*split, query, target);
      scenarios.push_back(scenario_name(s));
      if (s != Scenario::warm) scenarios.push_back("cold");
    } else {
      scenarios.push_back("warm");
    }

    PairCache probe = try_pair_forward(model, registry, query, target, true, disabled);
    if (!probe.ok) {
      ++report.no_common_view;
      for (const auto& s : scenarios) accumulate_miss(s);
      continue;
    }
    const std::vector<std::uint32_t> ranked =
        rank_candidates(model, registry, query, candidates, disabled);
    std::size_t rank = 0;
    for (std::size_t r = 0; r < ranked.size(); ++r)
      if (ranked[r] == target) {
        rank = r + 1;
        break;
      }
    for (const auto& s : scenarios) accumulate(s, rank);
  }
  return report;
}

inline void save_eval_report(const EvalReport& report, const std::string& path,
                             const std::string& comment = "") {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write eval report: " + path);
  out << "scenario,k,metric,value,n\n";
  if (!comment.empty()) out << "# " << comment << "\n";
  out.precision(17);
  for (const auto& [scenario, by_k] : report.cells)
    for (const auto& [k, cell] : by_k) {
      out << scenario << ',' << k << ",hr," << cell.hit_ratio() << ',' << cell.n
          << '\n';
      out << scenario << ',' << k << ",mrr," << cell.mrr() << ',' << cell.n
          << '\n';
    }
}

inline std::string format_eval_report(const EvalReport& report) {
  std::ostringstream out;
  out << "scenario        K      HR@K       MRR@K      n\n";
  for (const auto& [scenario, by_k] : report.cells)
    for (const auto& [k, cell] : by_k) {
      char line[128];
      std::snprintf(line, sizeof line, "%-14s %4zu  %9.5f  %9.5f  %6zu\n",
                    scenario.c_str(), k, cell.hit_ratio(), cell.mrr(), cell.n);
      out << line;
    }
  if (report.no_common_view)
    out << "(" << report.no_common_view
        << " pairs had no common view and were counted as misses)\n";
  return out.str();
}

// Partition users into `folds` disjoint groups, deterministic under seed.
inline std::vector<std::vector<std::size_t>> fold_partition(std::size_t n_users,
                                                            std::size_t folds,
                                                            std::uint64_t seed) {
  if (folds < 2) throw DomainError("cross-validation needs >= 2 folds");
  if (n_users < folds)
    throw DomainError("fewer users than folds");
  std::vector<std::size_t> order(n_users);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out(folds);
  for (std::size_t k = 0; k < n_users; ++k) out[k % folds].push_back(order[k]);
  return out;
}

// Aggregate over per-fold reports: unweighted mean per cell.
struct CvAggregate {
  std::map<std::string, std::map<std::size_t, std::pair<double, double>>> mean;   // hr, mrr
  std::map<std::string, std::map<std::size_t, std::pair<double, double>>> stddev;
};

inline CvAggregate aggregate_reports(const std::vector<EvalReport>& reports) {
  CvAggregate agg;
  std::map<std::string, std::map<std::size_t, std::vector<std::pair<double, double>>>> acc;
  for (const auto& rep : reports)
    for (const auto& [scenario, by_k] : rep.cells)
      for (const auto& [k, cell] : by_k)
        acc[scenario][k].push_back({cell.hit_ratio(), cell.mrr()});
  for (const auto& [scenario, by_k] : acc)
    for (const auto& [k, samples] : by_k) {
      double hr = 0, mrr = 0;
      for (const auto& [h, m] : samples) { hr += h; mrr += m; }
      const double n = static_cast<double>(samples.size());
      hr /= n; mrr /= n;
      double vh = 0, vm = 0;
      for (const auto& [h, m] : samples) {
        vh += (h - hr) * (h - hr);
        vm += (m - mrr) * (m - mrr);
      }
      agg.mean[scenario][k] = {hr, mrr};
      agg.stddev[scenario][k] = {std::sqrt(vh / n), std::sqrt(vm / n)};
    }
  return agg;
}

}  // namespace nam

#endif  // NAM_EVALUATION_HPP
