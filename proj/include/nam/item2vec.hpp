#ifndef NAM_ITEM2VEC_HPP
#define NAM_ITEM2VEC_HPP

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "nam/core_math.hpp"
#include "nam/errors.hpp"
#include "nam/views.hpp"

namespace nam {

// One basket per user or session: the deduplicated set of co-consumed items.
struct BasketDataset {
  std::vector<std::vector<std::uint32_t>> baskets;
  std::size_t dropped = 0;  // histories that shrank below 2 items
};

inline BasketDataset build_baskets(
    const std::vector<std::vector<std::uint32_t>>& histories) {
  BasketDataset out;
  for (const auto& history : histories) {
    std::vector<std::uint32_t> basket(history);
    std::sort(basket.begin(), basket.end());
    basket.erase(std::unique(basket.begin(), basket.end()), basket.end());
    if (basket.size() < 2) {
      ++out.dropped;
      continue;
    }
    out.baskets.push_back(std::move(basket));
  }
  return out;
}

// Negative-sampling distribution proportional to count^0.75.
struct UnigramTable {
  std::vector<std::uint32_t> items;
  std::vector<double> cumulative;

  static UnigramTable build(const BasketDataset& data, std::size_t n_items) {
    std::vector<std::size_t> counts(n_items, 0);
    for (const auto& basket : data.baskets)
      for (std::uint32_t item : basket) ++counts[item];
    UnigramTable table;
    double acc = 0.0;
    for (std::uint32_t item = 0; item < n_items; ++item) {
      if (counts[item] == 0) continue;
      acc += std::pow(static_cast<double>(counts[item]), 0.75);
      table.items.push_back(item);
      table.cumulative.push_back(acc);
    }
    if (table.items.empty())
      throw TrainingError("unigram table: no items appear in baskets");
    return table;
  }

  std::uint32_t sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unif(0.0, cumulative.back());
    const double u = unif(rng);
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    return items[static_cast<std::size_t>(it - cumulative.begin())];
  }
};

struct I2VModel {
  Mat target_emb;   // K x d, exported as the CF view
  Mat context_emb;  // K x d
  std::size_t dim = 0;
};

struct I2VConfig {
  std::size_t dim = 100;
  int epochs = 10;
  int neg_ratio = 4;
  double lr = 0.025;
  std::uint64_t seed = 1;
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Skip-gram with negative sampling over item baskets. All ordered pairs of
// distinct items within a basket are positives; no window. Plain SGD with a
// linearly decaying learning rate. Deterministic under a fixed seed.
inline I2VModel train_sgns(const BasketDataset& data, std::size_t n_items,
                           const I2VConfig& cfg,
                           std::vector<double>* loss_trace = nullptr) {
  if (data.baskets.empty()) throw TrainingError("train_sgns: empty dataset");
  if (cfg.dim == 0) throw TrainingError("train_sgns: dim must be positive");
  if (cfg.neg_ratio < 1) throw TrainingError("train_sgns: neg_ratio must be >= 1");

  std::mt19937_64 rng(cfg.seed);
  I2VModel model;
  model.dim = cfg.dim;
  model.target_emb = Mat(n_items, cfg.dim);
  model.context_emb = Mat(n_items, cfg.dim);
  const double init = 0.5 / static_cast<double>(cfg.dim);
  std::uniform_real_distribution<double> u_init(-init, init);
  for (double& x : model.target_emb.a) x = u_init(rng);
  for (double& x : model.context_emb.a) x = u_init(rng);

  if (cfg.epochs <= 0) return model;

  const UnigramTable table = UnigramTable::build(data, n_items);

  std::size_t pairs_per_epoch = 0;
  for (const auto& basket : data.baskets)
    pairs_per_epoch += basket.size() * (basket.size() - 1);
  const double total_updates =
      static_cast<double>(pairs_per_epoch) * cfg.epochs;

  std::vector<std::size_t> order(data.baskets.size());
  std::iota(order.begin(), order.end(), 0);

  const std::size_t d = cfg.dim;
  Vec grad_center(d);
  std::size_t update = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_examples = 0;
    for (std::size_t bi : order) {
      const auto& basket = data.baskets[bi];
      std::set<std::uint32_t> in_basket(basket.begin(), basket.end());
      for (std::uint32_t center : basket) {
        double* wc = &model.target_emb(center, 0);
        for (std::uint32_t context : basket) {
          if (context == center) continue;
          const double lr = std::max(
              cfg.lr * (1.0 - static_cast<double>(update) / total_updates),
              cfg.lr * 1e-4);
          ++update;
          std::fill(grad_center.begin(), grad_center.end(), 0.0);
          double loss = 0.0;
          for (int k = 0; k <= cfg.neg_ratio; ++k) {
            std::uint32_t out_item;
            double label;
            if (k == 0) {
              out_item = context;
              label = 1.0;
            } else {
              // resample negatives that land inside the current basket
              do {
                out_item = table.sample(rng);
              } while (in_basket.count(out_item));
              label = 0.0;
            }
            double* wo = &model.context_emb(out_item, 0);
            double score = 0.0;
            for (std::size_t c = 0; c < d; ++c) score += wc[c] * wo[c];
            const double p = sigmoid(score);
            loss += label > 0.5 ? -std::log(std::max(p, 1e-12))
                                : -std::log(std::max(1.0 - p, 1e-12));
            const double g = (p - label) * lr;
            for (std::size_t c = 0; c < d; ++c) {
              grad_center[c] += g * wo[c];
              wo[c] -= g * wc[c];
            }
          }
          for (std::size_t c = 0; c < d; ++c) wc[c] -= grad_center[c];
          epoch_loss += loss;
          ++epoch_examples;
        }
      }
    }
    if (loss_trace)
      loss_trace->push_back(epoch_examples ? epoch_loss / epoch_examples : 0.0);
  }
  return model;
}

// Target embeddings become the CF direct view; items never seen in baskets
// stay absent (cold).
inline DirectViewTable export_cf_view(const I2VModel& model,
                                      const Catalog& catalog,
                                      const BasketDataset& data,
                                      const std::string& name = "cf") {
  std::vector<char> seen(catalog.size(), 0);
  for (const auto& basket : data.baskets)
    for (std::uint32_t item : basket) seen[item] = 1;
  DirectViewTable table;
  table.view = {name, ViewKind::cf};
  table.dim = model.dim;
  for (std::uint32_t idx = 0; idx < catalog.size(); ++idx) {
    if (!seen[idx]) continue;
    Vec row(model.dim);
    for (std::size_t c = 0; c < model.dim; ++c) row[c] = model.target_emb(idx, c);
    table.rows.emplace(catalog.ids[idx], std::move(row));
  }
  return table;
}

}  // namespace nam

#endif  // NAM_ITEM2VEC_HPP
