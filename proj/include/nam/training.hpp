#ifndef NAM_TRAINING_HPP
#define NAM_TRAINING_HPP

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "nam/core_math.hpp"
#include "nam/errors.hpp"
#include "nam/item2vec.hpp"
#include "nam/model.hpp"
#include "nam/views.hpp"

namespace nam {

struct PairExample {
  std::uint32_t context = 0;
  std::uint32_t target = 0;
  std::vector<std::uint32_t> negatives;
};

struct TrainConfig {
  int epochs = 60;
  int batch_size = 32;
  int negatives = 4;          // N
  double lambda = 0.1;
  std::size_t z_t = 100;
  std::size_t z_a = 0;        // 0 = tie to z_t
  double lr = 1e-3;
  std::uint64_t seed = 1;
  bool stop_gradient_psi = true;
  bool include_positive_in_partition = false;
  std::size_t pair_cap = 1000000;  // positives per epoch, 0 = unlimited
  int train_only_view = -1;        // restrict updates to one tower (tests)

  std::size_t attention_dim() const { return z_a == 0 ? z_t : z_a; }
};

// Items co-consumed with each item (including the item itself); defines
// negative-sampling eligibility.
struct CoConsumptionIndex {
  std::vector<std::unordered_set<std::uint32_t>> co;

  static CoConsumptionIndex build(const BasketDataset& data, std::size_t n_items) {
    CoConsumptionIndex idx;
    idx.co.resize(n_items);
    for (std::uint32_t k = 0; k < n_items; ++k) idx.co[k].insert(k);
    for (const auto& basket : data.baskets)
      for (std::uint32_t a : basket)
        for (std::uint32_t b : basket)
          if (a != b) idx.co[a].insert(b);
    return idx;
  }

  bool co_consumed(std::uint32_t a, std::uint32_t b) const {
    return a != b && co[a].count(b) > 0;
  }
};

// All ordered pairs of distinct items within each basket, both orientations,
// duplicates across baskets retained.
inline std::vector<std::pair<std::uint32_t, std::uint32_t>> build_pair_dataset(
    const BasketDataset& data) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> positives;
  for (const auto& basket : data.baskets)
    for (std::uint32_t a : basket)
      for (std::uint32_t b : basket)
        if (a != b) positives.emplace_back(a, b);
  return positives;
}

// N items drawn uniformly (with replacement) from the catalog items never
// co-consumed with `context`. Throws on an empty pool.
inline std::vector<std::uint32_t> sample_negatives(
    std::uint32_t context, int n_negatives, const CoConsumptionIndex& index,
    std::size_t n_items, std::mt19937_64& rng) {
  const auto& blocked = index.co[context];
  if (blocked.size() >= n_items)
    throw DomainError("no eligible negatives for context item");
  std::vector<std::uint32_t> out;
  out.reserve(n_negatives);
  if (blocked.size() * 2 > n_items) {
    // small pool: enumerate eligible items explicitly
    std::vector<std::uint32_t> pool;
    for (std::uint32_t item = 0; item < n_items; ++item)
      if (!blocked.count(item)) pool.push_back(item);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int k = 0; k < n_negatives; ++k) out.push_back(pool[pick(rng)]);
  } else {
    std::uniform_int_distribution<std::uint32_t> pick(
        0, static_cast<std::uint32_t>(n_items - 1));
    for (int k = 0; k < n_negatives; ++k) {
      std::uint32_t item;
      do {
        item = pick(rng);
      } while (blocked.count(item));
      out.push_back(item);
    }
  }
  return out;
}

// -------------------------------------------------------------------------
// Per-example loss computation

struct PairLossWork {
  PairCache pos;
  std::vector<PairCache> negs;
};

inline PairLossWork forward_example(const NamModel& model,
                                    const ViewRegistry& registry,
                                    const PairExample& ex, bool need_attention,
                                    const Mask* disabled = nullptr) {
  PairLossWork work;
  work.pos = try_pair_forward(model, registry, ex.context, ex.target,
                              need_attention, disabled);
  work.negs.reserve(ex.negatives.size());
  for (std::uint32_t neg : ex.negatives)
    work.negs.push_back(try_pair_forward(model, registry, ex.context, neg,
                                         need_attention, disabled));
  return work;
}

// Per-view SNS losses averaged over the views available for the positive
// pair. A view contributes only if at least one negative also has it; a
// negative lacking the view drops out of that view's partition.
struct Phase1Term {
  double loss = 0.0;
  std::size_t n_views = 0;                 // views that contributed
  // per-view: negatives included in the partition and their softmax
  std::vector<std::vector<std::size_t>> neg_index;
  std::vector<Vec> neg_softmax;
  Mask used;
};

inline Phase1Term phase1_term(const PairLossWork& work) {
  const std::size_t n = work.pos.views.size();
  Phase1Term term;
  term.neg_index.resize(n);
  term.neg_softmax.resize(n);
  term.used.assign(n, false);
  double total = 0.0;
  for (std::size_t h = 0; h < n; ++h) {
    if (!work.pos.mask[h]) continue;
    Vec s_negs;
    for (std::size_t k = 0; k < work.negs.size(); ++k)
      if (work.negs[k].mask[h]) {
        term.neg_index[h].push_back(k);
        s_negs.push_back(work.negs[k].views[h].s);
      }
    if (s_negs.empty()) {
      term.neg_index[h].clear();
      continue;
    }
    term.used[h] = true;
    total += -work.pos.views[h].s + logsumexp(s_negs);
    term.neg_softmax[h] = softmax(s_negs);
    ++term.n_views;
  }
  if (term.n_views == 0)
    throw NoActiveViewError("phase-1 loss: no view usable for example");
  term.loss = total / static_cast<double>(term.n_views);
  return term;
}

inline double phase1_pair_loss(const NamModel& model,
                               const ViewRegistry& registry,
                               const PairExample& ex,
                               const Mask* disabled = nullptr) {
  PairLossWork work = forward_example(model, registry, ex, false, disabled);
  return phase1_term(work).loss;
}

// Accumulates scale * d(phase-1 loss)/d(params). Only the s path is touched:
// attention parameters and (w, b) receive no gradient.
inline void phase1_backward(NamModel& model, const PairLossWork& work,
                            const Phase1Term& term, double scale) {
  const std::size_t n = work.pos.views.size();
  const double inv_m = scale / static_cast<double>(term.n_views);
  Vec ds_pos(n, 0.0);
  std::vector<Vec> ds_negs(work.negs.size(), Vec(n, 0.0));
  for (std::size_t h = 0; h < n; ++h) {
    if (!term.used[h]) continue;
    ds_pos[h] = -inv_m;
    for (std::size_t t = 0; t < term.neg_index[h].size(); ++t)
      ds_negs[term.neg_index[h][t]][h] = inv_m * term.neg_softmax[h][t];
  }
  pair_backward(model, work.pos, 0.0, &ds_pos, true);
  for (std::size_t k = 0; k < work.negs.size(); ++k)
    pair_backward(model, work.negs[k], 0.0, &ds_negs[k], true);
}

struct Phase2Term {
  double loss = 0.0;       // l_nam + lambda * phase1
  double loss_nam = 0.0;
  Phase1Term phase1;
  double dpsi_pos = 0.0;
  std::vector<double> dpsi_neg;           // aligned with neg_index
  std::vector<std::size_t> neg_index;     // negatives with a usable psi
};

inline Phase2Term phase2_term(const PairLossWork& work, double lambda,
                              bool include_positive) {
  Phase2Term term;
  if (!work.pos.ok)
    throw NoActiveViewError("phase-2 loss: positive pair has no common view");
  Vec psi_negs;
  for (std::size_t k = 0; k < work.negs.size(); ++k)
    if (work.negs[k].ok) {
      term.neg_index.push_back(k);
      psi_negs.push_back(work.negs[k].psi);
    }
  if (psi_negs.empty())
    throw NoActiveViewError("phase-2 loss: no scoreable negative");
  if (include_positive) {
    Vec all(psi_negs);
    all.push_back(work.pos.psi);
    term.loss_nam = -work.pos.psi + logsumexp(all);
    const Vec p = softmax(all);
    term.dpsi_pos = p.back() - 1.0;
    term.dpsi_neg.assign(p.begin(), p.end() - 1);
  } else {
    term.loss_nam = -work.pos.psi + logsumexp(psi_negs);
    term.dpsi_pos = -1.0;
    term.dpsi_neg = softmax(psi_negs);
  }
  term.phase1 = phase1_term(work);
  term.loss = term.loss_nam + lambda * term.phase1.loss;
  return term;
}

inline double phase2_pair_loss(const NamModel& model,
                               const ViewRegistry& registry,
                               const PairExample& ex, double lambda,
                               bool include_positive = false,
                               const Mask* disabled = nullptr) {
  PairLossWork work = forward_example(model, registry, ex, true, disabled);
  return phase2_term(work, lambda, include_positive).loss;
}

inline void phase2_backward(NamModel& model, const PairLossWork& work,
                            const Phase2Term& term, double lambda,
                            bool stop_gradient_psi, double scale) {
  const std::size_t n = work.pos.views.size();
  const double inv_m = lambda * scale / static_cast<double>(term.phase1.n_views);
  Vec ds_pos(n, 0.0);
  for (std::size_t h = 0; h < n; ++h)
    if (term.phase1.used[h]) ds_pos[h] = -inv_m;
  pair_backward(model, work.pos, scale * term.dpsi_pos, &ds_pos, stop_gradient_psi);

  std::vector<double> dpsi(work.negs.size(), 0.0);
  for (std::size_t t = 0; t < term.neg_index.size(); ++t)
    dpsi[term.neg_index[t]] = scale * term.dpsi_neg[t];
  for (std::size_t k = 0; k < work.negs.size(); ++k) {
    Vec ds_neg(n, 0.0);
    for (std::size_t h = 0; h < n; ++h) {
      if (!term.phase1.used[h]) continue;
      const auto& idx = term.phase1.neg_index[h];
      for (std::size_t t = 0; t < idx.size(); ++t)
        if (idx[t] == k) ds_neg[h] = inv_m * term.phase1.neg_softmax[h][t];
    }
    pair_backward(model, work.negs[k], dpsi[k], &ds_neg, stop_gradient_psi);
  }
}

// Convenience for gradient checking: full per-example backward for either
// phase, accumulating into model grads. Returns the loss.
inline double pair_loss_backward(NamModel& model, const ViewRegistry& registry,
                                 const PairExample& ex, int phase,
                                 const TrainConfig& cfg) {
  PairLossWork work = forward_example(model, registry, ex, phase == 2);
  if (phase == 1) {
    Phase1Term term = phase1_term(work);
    phase1_backward(model, work, term, 1.0);
    return term.loss;
  }
  Phase2Term term =
      phase2_term(work, cfg.lambda, cfg.include_positive_in_partition);
  phase2_backward(model, work, term, cfg.lambda, cfg.stop_gradient_psi, 1.0);
  return term.loss;
}

// -------------------------------------------------------------------------
// Optimization driver

struct LossTraceEntry {
  int epoch = 0;
  int phase = 0;
  double mean_loss = 0.0;
};

struct TrainStats {
  std::vector<LossTraceEntry> trace;
  std::size_t skipped_examples = 0;  // no usable view or empty negative pool
};

namespace detail {

class ModelOptimizer {
 public:
  ModelOptimizer(NamModel& model, double lr) : model_(model) {
    for (ParamTensor* p : model.params())
      states_.emplace_back(p->value.rows, p->value.cols, lr);
  }

  void step(int train_only_view) {
    auto params = model_.params();
    std::vector<char> allowed(params.size(), 1);
    if (train_only_view >= 0) {
      std::size_t pos = 0;
      for (std::size_t h = 0; h < model_.n_views(); ++h) {
        const std::size_t count = model_.towers[h].params().size();
        for (std::size_t k = 0; k < count; ++k)
          allowed[pos + k] = (static_cast<int>(h) == train_only_view);
        pos += count;
      }
    }
    for (std::size_t k = 0; k < params.size(); ++k)
      if (allowed[k]) adam_step(*params[k], states_[k]);
  }

 private:
  NamModel& model_;
  std::vector<AdamState> states_;
};

inline TrainStats run_phase(
    NamModel& model, const std::vector<std::pair<std::uint32_t, std::uint32_t>>& positives,
    const ViewRegistry& registry, const CoConsumptionIndex& co,
    const TrainConfig& cfg, int phase) {
  TrainStats stats;
  if (positives.empty()) throw TrainingError("training: no positive pairs");
  std::mt19937_64 rng(cfg.seed + (phase == 2 ? 0x9e3779b97f4a7c15ull : 0));
  detail::ModelOptimizer opt(model, cfg.lr);
  const std::size_t n_items = registry.catalog.size();

  std::vector<std::size_t> order(positives.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t epoch_len = order.size();
    if (cfg.pair_cap > 0) epoch_len = std::min(epoch_len, cfg.pair_cap);
    double epoch_loss = 0.0;
    std::size_t epoch_examples = 0;
    std::size_t in_batch = 0;
    model.zero_grad();
    for (std::size_t t = 0; t < epoch_len; ++t) {
      const auto& [ctx, tgt] = positives[order[t]];
      PairExample ex{ctx, tgt, {}};
      try {
        ex.negatives = sample_negatives(ctx, cfg.negatives, co, n_items, rng);
      } catch (const DomainError&) {
        ++stats.skipped_examples;
        continue;
      }
      double loss;
      try {
        loss = pair_loss_backward(model, registry, ex, phase, cfg);
      } catch (const NoActiveViewError&) {
        ++stats.skipped_examples;
        continue;
      }
      if (!std::isfinite(loss))
        throw TrainingError("training diverged: non-finite loss at epoch " +
                            std::to_string(epoch + 1));
      epoch_loss += loss;
      ++epoch_examples;
      if (++in_batch == static_cast<std::size_t>(cfg.batch_size)) {
        opt.step(cfg.train_only_view);
        model.zero_grad();
        in_batch = 0;
      }
    }
    if (in_batch > 0) {
      opt.step(cfg.train_only_view);
      model.zero_grad();
    }
    stats.trace.push_back(
        {epoch + 1, phase,
         epoch_examples ? epoch_loss / static_cast<double>(epoch_examples) : 0.0});
  }
  return stats;
}

}  // namespace detail

inline TrainStats train_phase1(
    NamModel& model,
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& positives,
    const ViewRegistry& registry, const CoConsumptionIndex& co,
    const TrainConfig& cfg) {
  return detail::run_phase(model, positives, registry, co, cfg, 1);
}

inline TrainStats train_phase2(
    NamModel& model,
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& positives,
    const ViewRegistry& registry, const CoConsumptionIndex& co,
    const TrainConfig& cfg) {
  return detail::run_phase(model, positives, registry, co, cfg, 2);
}

// -------------------------------------------------------------------------
// Checkpointing. Text container; weights in hexfloat so that round-trips
// are bit-exact.

namespace detail {

inline void write_mat(std::ostream& out, const std::string& tag, const Mat& m) {
  out << tag << ' ' << m.rows << ' ' << m.cols;
  out << std::hexfloat;
  for (double v : m.a) out << ' ' << v;
  out << std::defaultfloat << '\n';
}

inline Mat read_mat(std::istream& in, const std::string& expected_tag) {
  std::string tag;
  std::size_t rows, cols;
  if (!(in >> tag >> rows >> cols) || tag != expected_tag)
    throw IoError("checkpoint: expected tensor '" + expected_tag + "'");
  Mat m(rows, cols);
  std::string token;
  for (double& v : m.a) {
    if (!(in >> token))
      throw IoError("checkpoint: truncated tensor " + expected_tag);
    char* end = nullptr;
    v = std::strtod(token.c_str(), &end);  // operator>> rejects hexfloat
    if (end == token.c_str() || *end != '\0')
      throw IoError("checkpoint: malformed value in tensor " + expected_tag);
  }
  return m;
}

}  // namespace detail

inline void save_checkpoint(const NamModel& model, const TrainConfig& cfg,
                            const std::string& path) {
  std::ostringstream out;
  out << "nam-checkpoint v1\n";
  out << "z_t " << model.z_t << "\nz_a " << model.z_a << "\n";
  out << "views " << model.n_views() << "\n";
  out << "config epochs=" << cfg.epochs << " batch_size=" << cfg.batch_size
      << " negatives=" << cfg.negatives << " lambda=" << cfg.lambda
      << " lr=" << cfg.lr << " seed=" << cfg.seed
      << " stop_gradient_psi=" << cfg.stop_gradient_psi
      << " include_positive=" << cfg.include_positive_in_partition << "\n";
  for (std::size_t h = 0; h < model.n_views(); ++h) {
    const ViewTower& tower = model.towers[h];
    out << "view " << model.view_names[h] << ' '
        << view_kind_name(model.view_kinds[h]) << ' ' << model.view_dims[h]
        << ' ' << (tower.f.mlp ? "mlp" : "linear") << "\n";
    detail::write_mat(out, "f.W1", tower.f.l1.W.value);
    detail::write_mat(out, "f.b1", tower.f.l1.b.value);
    if (tower.f.mlp) {
      detail::write_mat(out, "f.W2", tower.f.l2.W.value);
      detail::write_mat(out, "f.b2", tower.f.l2.b.value);
    }
    detail::write_mat(out, "g.W1", tower.g.l1.W.value);
    detail::write_mat(out, "g.b1", tower.g.l1.b.value);
    if (tower.g.mlp) {
      detail::write_mat(out, "g.W2", tower.g.l2.W.value);
      detail::write_mat(out, "g.b2", tower.g.l2.b.value);
    }
    detail::write_mat(out, "alpha.W", tower.alpha.W.value);
    detail::write_mat(out, "alpha.b", tower.alpha.b.value);
    detail::write_mat(out, "w", tower.w.value);
    detail::write_mat(out, "b", tower.b.value);
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write checkpoint: " + path);
  file << out.str();
}

inline NamModel load_checkpoint(const std::string& path,
                                const ViewRegistry& registry) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string word;
  in >> word;
  std::string version;
  in >> version;
  if (word != "nam-checkpoint" || version != "v1")
    throw IoError("checkpoint: bad header in " + path);
  NamModel model;
  std::size_t n_views = 0;
  in >> word >> model.z_t;
  if (word != "z_t") throw IoError("checkpoint: expected z_t");
  in >> word >> model.z_a;
  if (word != "z_a") throw IoError("checkpoint: expected z_a");
  in >> word >> n_views;
  if (word != "views") throw IoError("checkpoint: expected view count");
  std::string config_line;
  std::getline(in, config_line);  // rest of count line
  std::getline(in, config_line);  // config line, informational
  if (n_views != registry.views.size())
    throw IoError("checkpoint: has " + std::to_string(n_views) +
                  " views, registry has " +
                  std::to_string(registry.views.size()));
  for (std::size_t h = 0; h < n_views; ++h) {
    std::string name, kind_name, arch;
    std::size_t z_h;
    if (!(in >> word >> name >> kind_name >> z_h >> arch) || word != "view")
      throw IoError("checkpoint: truncated view header");
    const auto& table = registry.views[h];
    if (name != table.view.name || z_h != table.dim)
      throw IoError("checkpoint: view '" + name + "' (dim " +
                    std::to_string(z_h) + ") does not match registry view '" +
                    table.view.name + "' (dim " + std::to_string(table.dim) + ")");
    model.view_names.push_back(name);
    model.view_kinds.push_back(view_kind_from_name(kind_name));
    model.view_dims.push_back(z_h);
    ViewTower tower;
    const bool mlp = arch == "mlp";
    tower.f.mlp = tower.g.mlp = mlp;
    tower.f.l1.W.value = detail::read_mat(in, "f.W1");
    tower.f.l1.b.value = detail::read_mat(in, "f.b1");
    if (mlp) {
      tower.f.l2.W.value = detail::read_mat(in, "f.W2");
      tower.f.l2.b.value = detail::read_mat(in, "f.b2");
    }
    tower.g.l1.W.value = detail::read_mat(in, "g.W1");
    tower.g.l1.b.value = detail::read_mat(in, "g.b1");
    if (mlp) {
      tower.g.l2.W.value = detail::read_mat(in, "g.W2");
      tower.g.l2.b.value = detail::read_mat(in, "g.b2");
    }
    tower.alpha.W.value = detail::read_mat(in, "alpha.W");
    tower.alpha.b.value = detail::read_mat(in, "alpha.b");
    tower.w.value = detail::read_mat(in, "w");
    tower.b.value = detail::read_mat(in, "b");
    for (ParamTensor* p : tower.params())
      p->grad = Mat(p->value.rows, p->value.cols);
    if (tower.f.l1.W.value.cols != z_h)
      throw IoError("checkpoint: tensor dims inconsistent for view " + name);
    model.towers.push_back(std::move(tower));
  }
  if (!model.towers.empty()) {
    // z_t/z_a consistency against tensors
    if (model.towers[0].f.l1.W.value.rows != model.z_t ||
        model.towers[0].alpha.W.value.rows != model.z_a)
      throw IoError("checkpoint: declared z_t/z_a do not match tensors");
  }
  return model;
}

inline void save_loss_trace(const std::vector<LossTraceEntry>& trace,
                            const std::string& path,
                            const std::string& comment = "") {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write loss trace: " + path);
  out << "epoch,phase,mean_loss\n";
  if (!comment.empty()) out << "# " << comment << "\n";
  out.precision(17);
  for (const auto& e : trace)
    out << e.epoch << ',' << e.phase << ',' << e.mean_loss << '\n';
}

}  // namespace nam

#endif  // NAM_TRAINING_HPP
