#ifndef NAM_PIPELINE_HPP
#define NAM_PIPELINE_HPP

#include <cstdint>
#include <vector>

#include "nam/evaluation.hpp"
#include "nam/ingest.hpp"
#include "nam/item2vec.hpp"
#include "nam/model.hpp"
#include "nam/training.hpp"
#include "nam/views.hpp"

namespace nam {

struct PipelineConfig {
  I2VConfig i2v;
  TrainConfig train;
  std::vector<std::size_t> k_list{1, 5, 10, 20};
  bool use_cf = true;
  double cold_fraction = 0.0;    // 0 = no cold split simulation
  std::size_t max_test_pairs = 0;  // 0 = all
};

struct FoldResult {
  EvalReport report;
  NamModel model;
  ViewRegistry registry;
};

// Full pipeline for one train/test split of user histories:
// item2vec -> registry assembly -> phase 1 -> phase 2 -> evaluate.
// Content views are taken as-is; the CF view is retrained per split.
inline FoldResult run_fold(
    const std::vector<std::vector<std::uint32_t>>& train_histories,
    const std::vector<std::vector<std::uint32_t>>& test_histories,
    const Catalog& catalog, const std::vector<DirectViewTable>& content_views,
    const PipelineConfig& cfg) {
  FoldResult result;

  BasketDataset train_baskets = build_baskets(train_histories);
  ColdSplit split;
  split.cold.assign(catalog.size(), 0);
  if (cfg.cold_fraction > 0.0) {
    ColdSplitResult cold = make_cold_split(catalog.size(), cfg.cold_fraction,
                                           cfg.train.seed, train_baskets);
    split = cold.split;
    train_baskets = std::move(cold.filtered);
  }

  result.registry.catalog = catalog;
  if (cfg.use_cf) {
    I2VModel i2v = train_sgns(train_baskets, catalog.size(), cfg.i2v);
    result.registry.views.push_back(
        export_cf_view(i2v, catalog, train_baskets));
  }
  for (const auto& view : content_views) result.registry.views.push_back(view);
  result.registry.finalize();

  result.model = make_model(result.registry, cfg.train.z_t,
                            cfg.train.attention_dim(), cfg.train.seed);
  const auto positives = build_pair_dataset(train_baskets);
  const auto co = CoConsumptionIndex::build(train_baskets, catalog.size());
  train_phase1(result.model, positives, result.registry, co, cfg.train);
  train_phase2(result.model, positives, result.registry, co, cfg.train);

  BasketDataset test_baskets = build_baskets(test_histories);
  auto test_pairs = build_pair_dataset(test_baskets);
  if (cfg.max_test_pairs > 0 && test_pairs.size() > cfg.max_test_pairs) {
    std::mt19937_64 rng(cfg.train.seed ^ 0xeb42ull);
    std::shuffle(test_pairs.begin(), test_pairs.end(), rng);
    test_pairs.resize(cfg.max_test_pairs);
  }
  const ColdSplit* split_ptr = cfg.cold_fraction > 0.0 ? &split : nullptr;
  result.report = evaluate(result.model, result.registry, test_pairs,
                           split_ptr, cfg.k_list);
  return result;
}

struct CrossValidationResult {
  std::vector<EvalReport> fold_reports;
  CvAggregate aggregate;
};

// k-fold cross validation over users/sessions: each fold held out once as
// the test set, full pipeline re-run per fold.
inline CrossValidationResult cross_validate(
    const std::vector<std::vector<std::uint32_t>>& histories,
    const Catalog& catalog, const std::vector<DirectViewTable>& content_views,
    std::size_t folds, const PipelineConfig& cfg, std::uint64_t seed) {
  const auto partition = fold_partition(histories.size(), folds, seed);
  CrossValidationResult result;
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<char> held(histories.size(), 0);
    for (std::size_t u : partition[f]) held[u] = 1;
    std::vector<std::vector<std::uint32_t>> train, test;
    for (std::size_t u = 0; u < histories.size(); ++u)
      (held[u] ? test : train).push_back(histories[u]);
    result.fold_reports.push_back(
        run_fold(train, test, catalog, content_views, cfg).report);
  }
  result.aggregate = aggregate_reports(result.fold_reports);
  return result;
}

}  // namespace nam

#endif  // NAM_PIPELINE_HPP
