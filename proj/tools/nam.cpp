// nam: command-line surface for the multiview recommender pipeline.
#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nam/errors.hpp"
#include "nam/evaluation.hpp"
#include "nam/ingest.hpp"
#include "nam/manifest.hpp"
#include "nam/pipeline.hpp"
#include "nam/training.hpp"

namespace fs = std::filesystem;
using namespace nam;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct GlobalOpts {
  std::string manifest_path;
  std::string out_dir;          // overrides output.dir
  long seed = -1;               // overrides train.seed / i2v seed
  int threads = 1;
  bool strict = true;
  std::string mode = "nam";
  std::string k_spec;           // overrides eval.k
  double fraction = -1.0;       // overrides eval.cold_fraction
};

std::string out_path(const Manifest& m, const GlobalOpts& g,
                     const std::string& name) {
  const std::string dir =
      g.out_dir.empty() ? m.get("output.dir", ".") : g.out_dir;
  fs::create_directories(dir);
  return (fs::path(dir) / name).string();
}

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot hash file: " + path);
  std::uint64_t h = 1469598103934665603ull;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash_string(std::uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TrainConfig effective_train_config(const Manifest& m, const GlobalOpts& g) {
  TrainConfig cfg = train_config_from(m);
  if (g.seed >= 0) cfg.seed = static_cast<std::uint64_t>(g.seed);
  return cfg;
}

I2VConfig effective_i2v_config(const Manifest& m, const GlobalOpts& g) {
  I2VConfig cfg = i2v_config_from(m);
  if (g.seed >= 0) cfg.seed = static_cast<std::uint64_t>(g.seed);
  return cfg;
}

std::vector<std::size_t> effective_k_list(const Manifest& m,
                                          const GlobalOpts& g) {
  const std::string spec =
      !g.k_spec.empty() ? g.k_spec : m.get("eval.k", "1..20");
  return parse_k_list(spec);
}

// -------------------------------------------------------------------------
// Artifact formats private to the CLI

// views.txt: one content view per line, "name<TAB>kind<TAB>dim".
void save_view_index(const ViewRegistry& registry, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write view index: " + path);
  for (const auto& table : registry.views)
    out << table.view.name << '\t' << view_kind_name(table.view.kind) << '\t'
        << table.dim << '\n';
}

struct ViewIndexEntry {
  std::string name;
  ViewKind kind;
  std::size_t dim;
};

std::vector<ViewIndexEntry> load_view_index(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open view index: " + path);
  std::vector<ViewIndexEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ViewIndexEntry e;
    std::string kind;
    if (!std::getline(ss, e.name, '\t') || !std::getline(ss, kind, '\t') ||
        !(ss >> e.dim))
      throw ParseError(path, line_no, "expected name<TAB>kind<TAB>dim");
    e.kind = view_kind_from_name(kind);
    out.push_back(std::move(e));
  }
  return out;
}

// cf.tsv carries its dimension in the header comment so later stages do not
// depend on the i2v manifest section.
DirectViewTable load_cf_view(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open CF view: " + path);
  std::string header;
  std::getline(in, header);
  std::size_t dim = 0;
  const auto pos = header.find("dim=");
  if (header.rfind("# cf", 0) == 0 && pos != std::string::npos)
    dim = static_cast<std::size_t>(std::stoul(header.substr(pos + 4)));
  if (dim == 0) throw ParseError(path, 1, "missing '# cf dim=...' header");
  return load_dense_view(path, dim, "cf", ViewKind::cf);
}

// Assembles the registry from on-disk artifacts; CF first when requested.
ViewRegistry load_registry(const Manifest& m, const GlobalOpts& g,
                           bool need_cf) {
  ViewRegistry registry;
  registry.catalog = load_catalog(out_path(m, g, "catalog.txt"));
  if (need_cf && m.get_bool("registry.use_cf", true)) {
    const std::string cf_path = out_path(m, g, "cf.tsv");
    if (!fs::exists(cf_path))
      throw IoError("CF view artifact missing: " + cf_path +
                    " (run 'nam train-cf' first)");
    registry.views.push_back(load_cf_view(cf_path));
  }
  for (const auto& e : load_view_index(out_path(m, g, "views.txt")))
    registry.views.push_back(load_dense_view(
        out_path(m, g, "view-" + e.name + ".tsv"), e.dim, e.name, e.kind));
  registry.finalize();
  return registry;
}

void save_cold_split(const ColdSplit& split, const Catalog& catalog,
                     double fraction, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write cold split: " + path);
  out << "# seed=" << split.seed << " fraction=" << fraction << "\n";
  for (std::size_t k = 0; k < catalog.size(); ++k)
    if (split.cold[k]) out << catalog.ids[k] << '\n';
}

ColdSplit load_cold_split(const std::string& path, const Catalog& catalog) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open cold split: " + path);
  ColdSplit split;
  split.cold.assign(catalog.size(), 0);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto pos = line.find("seed=");
      if (pos != std::string::npos) split.seed = std::stoull(line.substr(pos + 5));
      continue;
    }
    split.cold[catalog.at(line)] = 1;
  }
  return split;
}

// Baskets used for training; split-cold rewrites this to the warm subset
// under a separate name that the manifest can point at.
std::string train_baskets_path(const Manifest& m, const GlobalOpts& g) {
  return out_path(m, g, m.get("train.baskets", "baskets.txt"));
}

Mask mode_mask(const std::string& mode, const ViewRegistry& registry) {
  Mask disabled(registry.views.size(), false);
  if (mode == "nam") return disabled;
  std::size_t cf_index = registry.views.size();
  for (std::size_t h = 0; h < registry.views.size(); ++h)
    if (registry.views[h].view.kind == ViewKind::cf) cf_index = h;
  if (cf_index == registry.views.size())
    throw DomainError("mode '" + mode + "' needs a CF view in the registry");
  if (mode == "nam-cb") {
    disabled[cf_index] = true;
  } else if (mode == "cf-only") {
    for (std::size_t h = 0; h < disabled.size(); ++h)
      disabled[h] = (h != cf_index);
  } else {
    throw DomainError("unknown mode: " + mode);
  }
  return disabled;
}

// -------------------------------------------------------------------------
// Commands

int cmd_ingest(const GlobalOpts& g) {
  Manifest m = Manifest::load(g.manifest_path);

  std::map<std::string, std::vector<std::string>> histories;
  ParseStats stats;
  if (m.has("data.ratings")) {
    const std::string delim = m.get("data.delimiter", ",");
    auto records = parse_ratings(m.require("data.ratings"),
                                 delim.empty() ? ',' : delim[0],
                                 m.get_bool("data.has_header", true), &stats);
    histories =
        filter_positive(records, m.get_real("data.rating_threshold", 3.5));
  } else if (m.has("data.sessions")) {
    for (auto& rec : parse_sessions(m.require("data.sessions"), &stats))
      histories[rec.session] = std::move(rec.items);
  } else {
    throw DomainError("manifest needs data.ratings or data.sessions");
  }
  for (const auto& msg : stats.messages) std::cerr << "warning: " << msg << "\n";

  MetadataTable metadata;
  if (m.has("data.metadata"))
    metadata = parse_metadata(m.require("data.metadata"),
                              parse_view_schema(m.require("data.view_schema")),
                              g.strict);

  Catalog catalog = build_catalog(histories, metadata);
  auto baskets = build_baskets(index_histories(histories, catalog));

  RegistryConfig rc;
  rc.use_cf = false;  // the CF view is trained later by train-cf
  rc.min_label_freq =
      static_cast<std::size_t>(m.get_int("registry.min_label_freq", 2));
  rc.text_view_path = m.get("data.text_view", "");
  rc.text_dim = static_cast<std::size_t>(m.get_int("data.text_dim", 0));
  RegistryBuild build = build_registry(catalog, metadata, nullptr, rc);

  save_catalog(catalog, out_path(m, g, "catalog.txt"));
  save_baskets(baskets, catalog, out_path(m, g, "baskets.txt"));
  save_view_index(build.registry, out_path(m, g, "views.txt"));
  for (const auto& table : build.registry.views)
    save_dense_view(table, out_path(m, g, "view-" + table.view.name + ".tsv"),
                    table.view.name + " dim=" + std::to_string(table.dim));
  for (const auto& [name, vocab] : build.vocabularies)
    save_vocabulary(vocab, out_path(m, g, "vocab-" + name + ".txt"));

  std::cout << "items " << catalog.size() << "\n"
            << "users " << histories.size() << "\n"
            << "baskets " << baskets.baskets.size() << " (dropped "
            << baskets.dropped << ")\n"
            << "content views " << build.registry.views.size() << "\n"
            << "malformed lines " << stats.malformed << "\n";
  return 0;
}

int cmd_train_cf(const GlobalOpts& g) {
  Manifest m = Manifest::load(g.manifest_path);
  Catalog catalog = load_catalog(out_path(m, g, "catalog.txt"));
  BasketDataset baskets = load_baskets(train_baskets_path(m, g), catalog);
  I2VConfig cfg = effective_i2v_config(m, g);

  std::vector<double> trace;
  I2VModel model = train_sgns(baskets, catalog.size(), cfg, &trace);
  DirectViewTable cf = export_cf_view(model, catalog, baskets);
  save_dense_view(cf, out_path(m, g, "cf.tsv"),
                  "cf dim=" + std::to_string(cf.dim) +
                      " seed=" + std::to_string(cfg.seed));

  std::vector<LossTraceEntry> entries;
  for (std::size_t e = 0; e < trace.size(); ++e)
    entries.push_back({static_cast<int>(e + 1), 0, trace[e]});
  save_loss_trace(entries, out_path(m, g, "cf_loss.csv"),
                  "seed=" + std::to_string(cfg.seed));
  std::cout << "cf view: " << cf.rows.size() << " items, dim " << cf.dim
            << "\n";
  return 0;
}

int run_train_phase(const GlobalOpts& g, int phase) {
  Manifest m = Manifest::load(g.manifest_path);
  ViewRegistry registry = load_registry(m, g, true);
  TrainConfig cfg = effective_train_config(m, g);

  NamModel model;
  if (phase == 1) {
    model = make_model(registry, cfg.z_t, cfg.attention_dim(), cfg.seed);
  } else {
    const std::string prev = out_path(m, g, "phase1.ckpt");
    if (!fs::exists(prev))
      throw IoError("phase-2 training needs the phase-1 checkpoint " + prev +
                    " (run 'nam train-phase1' first)");
    model = load_checkpoint(prev, registry);
  }

  Catalog& catalog = registry.catalog;
  BasketDataset baskets = load_baskets(train_baskets_path(m, g), catalog);
  const auto positives = build_pair_dataset(baskets);
  const auto co = CoConsumptionIndex::build(baskets, catalog.size());
  TrainStats stats = phase == 1
                         ? train_phase1(model, positives, registry, co, cfg)
                         : train_phase2(model, positives, registry, co, cfg);

  const std::string tag = "phase" + std::to_string(phase);
  const std::string ckpt = out_path(m, g, tag + ".ckpt");
  save_checkpoint(model, cfg, ckpt);
  save_loss_trace(stats.trace, out_path(m, g, tag + "_loss.csv"),
                  "seed=" + std::to_string(cfg.seed) +
                      " checkpoint=" + hash_string(fnv1a_file(ckpt)));
  std::cout << tag << ": " << positives.size() << " positives, "
            << stats.trace.size() << " epochs, " << stats.skipped_examples
            << " skipped\n";
  if (!stats.trace.empty())
    std::cout << "final mean loss " << stats.trace.back().mean_loss << "\n";
  return 0;
}

int cmd_split_cold(const GlobalOpts& g) {
  Manifest m = Manifest::load(g.manifest_path);
  Catalog catalog = load_catalog(out_path(m, g, "catalog.txt"));
  BasketDataset baskets =
      load_baskets(out_path(m, g, "baskets.txt"), catalog);
  const double fraction =
      g.fraction > 0.0 ? g.fraction : m.get_real("eval.cold_fraction", 0.10);
  const std::uint64_t seed = g.seed >= 0 ? static_cast<std::uint64_t>(g.seed)
                                         : effective_train_config(m, g).seed;
  ColdSplitResult result = make_cold_split(catalog.size(), fraction, seed, baskets);
  save_cold_split(result.split, catalog, fraction, out_path(m, g, "cold.txt"));
  save_baskets(result.filtered, catalog, out_path(m, g, "baskets-warm.txt"));
  std::cout << "cold items " << result.split.cold_count() << " of "
            << catalog.size() << "\n"
            << "warm baskets " << result.filtered.baskets.size()
            << " (dropped " << result.filtered.dropped << ")\n";
  return 0;
}

int cmd_evaluate(const GlobalOpts& g, const std::string& checkpoint,
                 const std::string& split_path, std::size_t max_pairs) {
  Manifest m = Manifest::load(g.manifest_path);
  ViewRegistry registry = load_registry(m, g, true);
  const std::string ckpt =
      checkpoint.empty() ? out_path(m, g, "phase2.ckpt") : checkpoint;
  NamModel model = load_checkpoint(ckpt, registry);
  const Mask disabled = mode_mask(g.mode, registry);

  const std::string pairs_path = m.has("eval.baskets")
                                     ? m.require("eval.baskets")
                                     : out_path(m, g, "baskets.txt");
  BasketDataset baskets = load_baskets(pairs_path, registry.catalog);
  auto pairs = build_pair_dataset(baskets);
  const std::size_t cap =
      max_pairs ? max_pairs
                : static_cast<std::size_t>(m.get_int("eval.max_pairs", 0));
  const TrainConfig tcfg = effective_train_config(m, g);
  if (cap && pairs.size() > cap) {
    std::mt19937_64 rng(tcfg.seed ^ 0xeb42ull);
    std::shuffle(pairs.begin(), pairs.end(), rng);
    pairs.resize(cap);
  }

  ColdSplit split;
  const ColdSplit* split_ptr = nullptr;
  if (!split_path.empty()) {
    split = load_cold_split(split_path, registry.catalog);
    split_ptr = &split;
  }

  EvalReport report = evaluate(model, registry, pairs, split_ptr,
                               effective_k_list(m, g), &disabled);
  save_eval_report(report, out_path(m, g, "eval.csv"),
                   "seed=" + std::to_string(tcfg.seed) +
                       " checkpoint=" + hash_string(fnv1a_file(ckpt)) +
                       " mode=" + g.mode);
  std::cout << format_eval_report(report);
  return 0;
}

int cmd_recommend(const GlobalOpts& g, const std::string& checkpoint,
                  const std::string& query_id, std::size_t top_k) {
  Manifest m = Manifest::load(g.manifest_path);
  ViewRegistry registry = load_registry(m, g, true);
  const std::string ckpt =
      checkpoint.empty() ? out_path(m, g, "phase2.ckpt") : checkpoint;
  NamModel model = load_checkpoint(ckpt, registry);
  const Mask disabled = mode_mask(g.mode, registry);

  const std::uint32_t query = registry.catalog.at(query_id);
  bool any_view = false;
  for (std::size_t h = 0; h < registry.views.size(); ++h)
    any_view = any_view || (!disabled[h] && registry.present(h, query));
  if (!any_view)
    throw DomainError("query item '" + query_id + "' has no usable view");

  std::vector<std::uint32_t> candidates;
  for (std::uint32_t c = 0; c < registry.catalog.size(); ++c)
    if (c != query) candidates.push_back(c);
  auto ranked = rank_candidates(model, registry, query, candidates, &disabled);
  if (top_k > ranked.size()) top_k = ranked.size();

  std::ofstream csv(out_path(m, g, "recommend.csv"));
  if (!csv) throw IoError("cannot write recommend.csv");
  csv << "rank,item,psi,view,a,mu,s\n";
  csv << "# seed=" << effective_train_config(m, g).seed
      << " checkpoint=" << hash_string(fnv1a_file(ckpt)) << " query="
      << query_id << "\n";
  csv.precision(17);

  std::cout << "rank  item            psi        per-view (a | mu | s)\n";
  for (std::size_t r = 0; r < top_k; ++r) {
    PairCache cache =
        try_pair_forward(model, registry, query, ranked[r], true, &disabled);
    PairScoreBreakdown bd = breakdown(cache);
    char head[64];
    std::snprintf(head, sizeof head, "%4zu  %-14s %9.5f  ", r + 1,
                  registry.catalog.ids[ranked[r]].c_str(),
                  cache.ok ? bd.psi : 0.0);
    std::cout << head;
    for (std::size_t h = 0; h < registry.views.size(); ++h) {
      if (!cache.ok || !bd.mask[h]) continue;
      char cell[96];
      std::snprintf(cell, sizeof cell, "%s: %.4f | %.4f | %.4f  ",
                    registry.views[h].view.name.c_str(), bd.a[h], bd.mu[h],
                    bd.s[h]);
      std::cout << cell;
      csv << (r + 1) << ',' << registry.catalog.ids[ranked[r]] << ',' << bd.psi
          << ',' << registry.views[h].view.name << ',' << bd.a[h] << ','
          << bd.mu[h] << ',' << bd.s[h] << '\n';
    }
    if (!cache.ok) std::cout << "(no common view)";
    std::cout << "\n";
  }
  return 0;
}

int cmd_cross_validate(const GlobalOpts& g, std::size_t folds) {
  Manifest m = Manifest::load(g.manifest_path);
  Catalog catalog = load_catalog(out_path(m, g, "catalog.txt"));
  BasketDataset baskets =
      load_baskets(out_path(m, g, "baskets.txt"), catalog);

  std::vector<DirectViewTable> content_views;
  for (const auto& e : load_view_index(out_path(m, g, "views.txt")))
    content_views.push_back(load_dense_view(
        out_path(m, g, "view-" + e.name + ".tsv"), e.dim, e.name, e.kind));

  PipelineConfig cfg;
  cfg.i2v = effective_i2v_config(m, g);
  cfg.train = effective_train_config(m, g);
  cfg.k_list = effective_k_list(m, g);
  cfg.use_cf = m.get_bool("registry.use_cf", true);
  cfg.cold_fraction =
      g.fraction > 0.0 ? g.fraction : m.get_real("eval.cold_fraction", 0.0);
  cfg.max_test_pairs =
      static_cast<std::size_t>(m.get_int("eval.max_pairs", 0));

  CrossValidationResult result = cross_validate(
      baskets.baskets, catalog, content_views, folds, cfg, cfg.train.seed);

  std::ofstream csv(out_path(m, g, "cv.csv"));
  if (!csv) throw IoError("cannot write cv.csv");
  csv << "scenario,k,metric,mean,stddev\n";
  csv << "# seed=" << cfg.train.seed << " folds=" << folds << "\n";
  csv.precision(17);
  for (const auto& [scenario, by_k] : result.aggregate.mean)
    for (const auto& [k, hr_mrr] : by_k) {
      const auto& sd = result.aggregate.stddev.at(scenario).at(k);
      csv << scenario << ',' << k << ",hr," << hr_mrr.first << ',' << sd.first
          << '\n';
      csv << scenario << ',' << k << ",mrr," << hr_mrr.second << ','
          << sd.second << '\n';
    }
  for (std::size_t f = 0; f < result.fold_reports.size(); ++f) {
    std::cout << "fold " << (f + 1) << "\n"
              << format_eval_report(result.fold_reports[f]);
  }
  std::cout << "aggregate written to cv.csv\n";
  return 0;
}

// -------------------------------------------------------------------------
// selftest: gradient checks + invariant properties on random toy models

ViewRegistry random_registry(std::size_t n_items,
                             const std::vector<std::size_t>& dims,
                             std::mt19937_64& rng) {
  ViewRegistry registry;
  std::set<std::string> ids;
  for (std::size_t k = 0; k < n_items; ++k) ids.insert("i" + std::to_string(k));
  registry.catalog.build(ids);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t h = 0; h < dims.size(); ++h) {
    DirectViewTable table;
    table.view = {"v" + std::to_string(h),
                  h == 0 ? ViewKind::cf : ViewKind::dense};
    table.dim = dims[h];
    for (const auto& id : registry.catalog.ids) {
      Vec row(dims[h]);
      for (double& x : row) x = gauss(rng);
      table.rows.emplace(id, std::move(row));
    }
    registry.views.push_back(std::move(table));
  }
  registry.finalize();
  return registry;
}

double example_margin(const NamModel& model, const ViewRegistry& registry,
                      const PairExample& ex) {
  double margin = 1e9;
  std::vector<std::uint32_t> items{ex.context, ex.target};
  items.insert(items.end(), ex.negatives.begin(), ex.negatives.end());
  for (std::size_t h = 0; h < model.n_views(); ++h) {
    const auto& tower = model.towers[h];
    for (std::uint32_t item : items) {
      const Vec* x = registry.vector(h, item);
      if (!x) continue;
      for (const auto* net : {&tower.f, &tower.g}) {
        NetCache cache;
        net_forward(*net, *x, cache);
        if (net->mlp)
          for (double v : cache.pre)
            margin = std::min(margin, std::fabs(v) / 1e-3 * 5e-2);
        margin = std::min(margin, norm(cache.out));
      }
      margin = std::min(margin, norm(tower.alpha.forward(*x)));
    }
  }
  return margin;
}

int cmd_selftest(bool corrupt) {
  std::mt19937_64 rng(12345);
  const double h_step = 1e-5;
  const double tol = 1e-4;
  double worst[2] = {0.0, 0.0};
  bool ok = true;

  for (int trial = 0; trial < 10; ++trial) {
    ViewRegistry registry;
    NamModel model;
    PairExample ex{0, 1, {2, 3}};
    // resample degenerate configurations: finite differences are invalid
    // across ReLU kinks and near the cosine epsilon guard
    do {
      registry = random_registry(6, {3, 5, 4}, rng);
      model = make_model(registry, 4, 4, rng());
    } while (example_margin(model, registry, ex) <= 5e-2);

    TrainConfig cfg;
    cfg.stop_gradient_psi = false;  // check the full flow
    for (int phase = 1; phase <= 2; ++phase) {
      model.zero_grad();
      pair_loss_backward(model, registry, ex, phase, cfg);
      std::vector<ParamTensor*> params = model.params();
      double max_rel = 0.0;
      for (ParamTensor* p : params)
        for (std::size_t k = 0; k < p->value.size(); ++k) {
          const double saved = p->value.a[k];
          auto loss_at = [&](double v) {
            p->value.a[k] = v;
            const double l =
                phase == 1 ? phase1_pair_loss(model, registry, ex)
                           : phase2_pair_loss(model, registry, ex, cfg.lambda);
            p->value.a[k] = saved;
            return l;
          };
          const double numeric =
              (loss_at(saved + h_step) - loss_at(saved - h_step)) /
              (2.0 * h_step);
          double analytic = p->grad.a[k];
          if (corrupt) analytic += 1e-2;
          const double denom =
              std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
          max_rel = std::max(max_rel, std::fabs(analytic - numeric) / denom);
        }
      worst[phase - 1] = std::max(worst[phase - 1], max_rel);
      if (max_rel > tol) ok = false;
    }
  }
  std::cout << "gradient check phase-1 max rel err " << worst[0]
            << (worst[0] <= tol ? "  ok" : "  FAIL") << "\n";
  std::cout << "gradient check phase-2 max rel err " << worst[1]
            << (worst[1] <= tol ? "  ok" : "  FAIL") << "\n";

  // invariant properties: attention simplex and mask equivalence
  double worst_simplex = 0.0, worst_mask_eq = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    ViewRegistry registry = random_registry(5, {3, 4, 2}, rng);
    NamModel model = make_model(registry, 4, 4, rng());
    PairCache cache = pair_forward(model, registry, 0, 1);
    double sum = 0.0;
    for (std::size_t h = 0; h < cache.a.size(); ++h) {
      if (cache.a[h] < 0.0) worst_simplex = 1.0;
      sum += cache.a[h];
    }
    worst_simplex = std::max(worst_simplex, std::fabs(sum - 1.0));

    Mask disabled(registry.views.size(), false);
    disabled[2] = true;
    const double masked =
        pair_forward(model, registry, 0, 1, true, &disabled).psi;
    ViewRegistry reduced = registry;
    reduced.views.pop_back();
    reduced.finalize();
    NamModel reduced_model;
    reduced_model.z_t = model.z_t;
    reduced_model.z_a = model.z_a;
    for (std::size_t h = 0; h + 1 < registry.views.size(); ++h) {
      reduced_model.view_names.push_back(model.view_names[h]);
      reduced_model.view_kinds.push_back(model.view_kinds[h]);
      reduced_model.view_dims.push_back(model.view_dims[h]);
      reduced_model.towers.push_back(model.towers[h]);
    }
    const double removed = pair_forward(reduced_model, reduced, 0, 1).psi;
    worst_mask_eq = std::max(worst_mask_eq, std::fabs(masked - removed));
  }
  std::cout << "attention simplex max deviation " << worst_simplex
            << (worst_simplex <= 1e-12 ? "  ok" : "  FAIL") << "\n";
  std::cout << "mask-equivalence max deviation " << worst_mask_eq
            << (worst_mask_eq <= 1e-12 ? "  ok" : "  FAIL") << "\n";
  if (worst_simplex > 1e-12 || worst_mask_eq > 1e-12) ok = false;

  std::cout << (ok ? "selftest passed\n" : "selftest FAILED\n");
  return ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nam: multiview recommender pipeline"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--manifest", g.manifest_path, "run manifest path");
  app.add_option("--seed", g.seed, "override the manifest seed");
  app.add_option("--threads", g.threads, "worker cap")
      ->check(CLI::PositiveNumber);
  app.add_flag("--strict,!--no-strict", g.strict,
               "deterministic single-order reductions (default on)");
  app.add_option("--mode", g.mode, "nam, nam-cb or cf-only")
      ->check(CLI::IsMember({"nam", "nam-cb", "cf-only"}));
  app.add_option("--k", g.k_spec, "K list, e.g. 1,5,10 or 1..20");
  app.add_option("--fraction", g.fraction, "cold item fraction");
  app.add_option("--out", g.out_dir, "output directory override");

  std::string checkpoint, split_path, query_id;
  std::size_t top_k = 10, folds = 5, max_pairs = 0;
  bool corrupt = false;

  auto* ingest = app.add_subcommand("ingest", "parse raw data into artifacts");
  auto* train_cf = app.add_subcommand("train-cf", "pretrain the CF view");
  auto* phase1 = app.add_subcommand("train-phase1", "train the per-view towers");
  auto* phase2 = app.add_subcommand("train-phase2", "train the fused model");
  auto* split_cold = app.add_subcommand("split-cold", "simulate cold items");
  auto* evaluate = app.add_subcommand("evaluate", "rank test pairs and report");
  evaluate->add_option("--checkpoint", checkpoint, "model checkpoint");
  evaluate->add_option("--split", split_path, "cold split artifact");
  evaluate->add_option("--max-pairs", max_pairs, "cap on test pairs");
  auto* recommend = app.add_subcommand("recommend", "top-k for one query item");
  recommend->add_option("--checkpoint", checkpoint, "model checkpoint");
  recommend->add_option("--item", query_id, "query item id")->required();
  recommend->add_option("--top-k", top_k, "list length");
  auto* selftest = app.add_subcommand("selftest", "gradient and invariant checks");
  selftest->add_flag("--corrupt", corrupt, "perturb analytic gradients")
      ->group("");  // test hook, hidden from help
  auto* cv = app.add_subcommand("cross-validate", "k-fold pipeline runs");
  cv->add_option("--folds", folds, "fold count")->check(CLI::PositiveNumber);

  // global flags may appear after the subcommand
  for (CLI::App* sub : app.get_subcommands([](const CLI::App*) { return true; }))
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  auto need_manifest = [&]() {
    if (g.manifest_path.empty())
      throw CLI::RequiredError("--manifest");
  };

  try {
    if (*selftest) return cmd_selftest(corrupt);
    need_manifest();
    if (*ingest) return cmd_ingest(g);
    if (*train_cf) return cmd_train_cf(g);
    if (*phase1) return run_train_phase(g, 1);
    if (*phase2) return run_train_phase(g, 2);
    if (*split_cold) return cmd_split_cold(g);
    if (*evaluate) return cmd_evaluate(g, checkpoint, split_path, max_pairs);
    if (*recommend) return cmd_recommend(g, checkpoint, query_id, top_k);
    if (*cv) return cmd_cross_validate(g, folds);
  } catch (const CLI::Error&) {
    std::cerr << "error: --manifest is required for this command\n";
    return kExitUsage;
  } catch (const TrainingError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NoActiveViewError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
