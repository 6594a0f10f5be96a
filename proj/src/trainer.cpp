#include "osssl/trainer.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <string>
#include <unordered_map>

#include "osssl/checkpoint.hpp"
#include "osssl/errors.hpp"
#include "osssl/identify.hpp"
#include "osssl/kernels.hpp"

namespace osssl {

using nlohmann::json;

namespace {

// Every consumer of randomness owns a stream, so toggling one component never
// shifts the draws of another.
constexpr const char* kStreams[] = {"labeled_batch", "augment", "raw_draw", "pool_draw",
                                    "pool_replace",  "kmeans",  "labeled_centers"};

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// Keeps the first n lines of a file (resume truncates logs written after the checkpoint).
void truncate_lines(const std::filesystem::path& path, std::size_t n) {
  std::string kept;
  {
    std::ifstream in(path);
    std::string line;
    for (std::size_t i = 0; i < n && std::getline(in, line); ++i) kept += line + '\n';
  }
  std::ofstream out(path, std::ios::trunc);
  out << kept;
}

class JsonLines {
 public:
  JsonLines() = default;
  JsonLines(const std::filesystem::path& path, std::size_t& counter) : out_(path, std::ios::app), counter_(&counter) {
    if (!out_) throw Error(ErrorKind::runtime, "cannot write " + path.string());
  }
  bool enabled() const { return counter_ != nullptr; }
  void write(const json& j) {
    if (!counter_) return;
    out_ << j.dump() << '\n';
    out_.flush();
    ++*counter_;
  }

 private:
  std::ofstream out_;
  std::size_t* counter_ = nullptr;
};

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::id: return "id";
    case Verdict::ood: return "ood";
    case Verdict::ungated: return "ungated";
  }
  return "?";
}

class Trainer {
 public:
  Trainer(TrainerState& state, const OpenSetDataset& data, JsonLines& metrics, JsonLines& events)
      : s_(state), cfg_(state.config), data_(data), metrics_(metrics), events_(events) {
    for (std::size_t i = 0; i < data_.unlabeled.size(); ++i) unlabeled_index_[data_.unlabeled[i].uid] = i;
    for (const auto& e : data_.labeled) {
      labeled_x_.push_back(e.x);
      labeled_y_.push_back(*e.true_class);
    }
    // The unlabeled filter is the one place ground truth shapes the training
    // stream: it builds the Clean and Labeled-Only reference rows.
    std::size_t ids = 0;
    if (cfg_.unlabeled != UnlabeledUse::none) {
      for (const auto& e : data_.unlabeled) {
        if (cfg_.unlabeled == UnlabeledUse::id_only && e.domain != Domain::id) continue;
        raw_uids_.push_back(e.uid);
        if (e.domain == Domain::id) ++ids;
      }
    }
    raw_id_ratio_ = raw_uids_.empty() ? 0.0 : static_cast<double>(ids) / static_cast<double>(raw_uids_.size());
    iters_per_epoch_ = std::max<std::size_t>(1, (data_.unlabeled.size() + cfg_.unlabeled_batch - 1) / cfg_.unlabeled_batch);
  }

  bool finished() const { return s_.epoch >= cfg_.epochs; }

  /// Runs one iteration; returns the epoch's metrics when it completed one.
  std::optional<EpochMetrics> step() {
    if (s_.iteration == 0) begin_epoch();
    iterate();
    ++s_.iteration;
    ++s_.global_iteration;
    if (s_.iteration < iters_per_epoch_) return std::nullopt;
    return end_epoch();
  }

 private:
  Rng& rng(const char* name) { return s_.rngs.at(name); }

  bool prototypes_ready() const { return s_.bank.flagged(); }

  bool warmup_complete() const {
    return std::all_of(s_.warmup.begin(), s_.warmup.end(),
                       [&](const auto& uids) { return uids.size() >= cfg_.cluster.warmup_samples; });
  }

  void begin_epoch() {
    if (cfg_.clustering == ClusteringMode::off) return;
    if (!s_.bank.initialized() && warmup_complete()) try_init_prototypes();
    if (s_.bank.initialized()) refresh_centers();
  }

  // One sweep over the training-visible unlabeled set with the current
  // parameters; every feature, grouped by its predicted class, seeds k-means.
  void try_init_prototypes() {
    std::vector<Vector> xs;
    xs.reserve(raw_uids_.size());
    for (auto uid : raw_uids_) xs.push_back(data_.unlabeled[unlabeled_index_.at(uid)].x);
    const auto traces = kernels::forward_batch(s_.params, xs);
    std::vector<std::vector<Vector>> by_class(data_.num_classes);
    for (const auto& t : traces) {
      by_class[argmax(t.out.probs)].push_back(t.out.feature);
    }
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      if (by_class[c].size() < cfg_.cluster.warmup_samples) {
        events_.write({{"iter", s_.global_iteration}, {"event", "init_deferred"}, {"class", c},
                       {"count", by_class[c].size()}});
        return;
      }
    }
    init_prototypes(s_.bank, by_class, cfg_.cluster, rng("kmeans"));
    s_.prototype_init_epoch = s_.epoch;
    s_.warmup.clear();
    s_.warmup.resize(data_.num_classes);
    events_.write({{"iter", s_.global_iteration}, {"event", "init_prototypes"}, {"epoch", s_.epoch}});
  }

  // q_y and O_s from weak views of the labeled set, then re-flag ID prototypes.
  void refresh_centers() {
    std::vector<Vector> views;
    views.reserve(labeled_x_.size());
    for (const auto& x : labeled_x_) views.push_back(augment(x, Strength::weak, aug_, rng("labeled_centers")));
    const auto traces = kernels::forward_batch(s_.params, views);
    std::vector<std::vector<Vector>> by_class(data_.num_classes);
    for (std::size_t i = 0; i < traces.size(); ++i) by_class[labeled_y_[i]].push_back(traces[i].out.feature);
    s_.class_centers = labeled_class_centers(by_class);
    s_.label_means = labeled_feature_means(by_class);
    flag_id_prototypes(s_.bank, s_.label_means, cfg_.id_prototypes);
    s_.bank.mark_flagged();
  }

  double current_lr() const {
    const std::size_t warm = cfg_.lr_warmup_epochs * iters_per_epoch_;
    if (warm == 0) return cfg_.lr;
    return cfg_.lr * std::min(1.0, static_cast<double>(s_.global_iteration + 1) / static_cast<double>(warm));
  }

  void iterate() {
    const bool ready = cfg_.clustering != ClusteringMode::off && prototypes_ready();
    const std::size_t level = ready && s_.pyramid.pool_levels() > 0 ? s_.pyramid.advance_level() : 0;

    // Batches.
    const auto lab_idx = rng("labeled_batch").sample_without_replacement(labeled_x_.size(), cfg_.labeled_batch);
    std::vector<Vector> lab_x;
    std::vector<std::size_t> lab_y;
    for (auto i : lab_idx) {
      lab_x.push_back(labeled_x_[i]);
      lab_y.push_back(labeled_y_[i]);
    }
    std::vector<std::uint64_t> uids;
    if (!raw_uids_.empty())
      uids = draw_batch(s_.pyramid, level, cfg_.unlabeled_batch, raw_uids_,
                        level == 0 ? rng("raw_draw") : rng("pool_draw"));
    std::vector<Vector> unl_x;
    unl_x.reserve(uids.size());
    for (auto uid : uids) unl_x.push_back(data_.unlabeled[unlabeled_index_.at(uid)].x);

    // Semi-supervised terms.
    const StepViews views = make_views(lab_x, unl_x, aug_, rng("augment"));
    StepGraph graph(s_.params, views.labeled, views.weak, views.strong);
    const SslTerms terms = add_ssl_terms(graph, lab_y, cfg_.ssl_config());

    if (cfg_.clustering != ClusteringMode::off && !s_.bank.initialized()) {
      for (std::size_t i = 0; i < uids.size(); ++i)
        if (terms.records[i].pseudo_gate) s_.warmup[terms.records[i].pseudo_label].insert(uids[i]);
    }

    // Clustering terms, weighted by w_c and summed over the batch.
    ClusterStepTerms ct;
    ct.targets.resize(uids.size());
    if (ready)
      ct = add_cluster_terms(graph, terms.records, lab_y, s_.bank, s_.class_centers, cfg_.cluster,
                             cfg_.clustering == ClusteringMode::on);
    const double cluster_unlabeled = ct.unlabeled;
    const double cluster_labeled = ct.labeled;
    const std::size_t cluster_gate = ct.gate_open;
    const auto& targets = ct.targets;
    const double wc = cfg_.cluster.weight;
    const double cluster = wc * (cluster_unlabeled + cluster_labeled);
    const double total = terms.total + cluster;

    s_.params = sgd_step(std::move(s_.params), graph.backward(), current_lr(), cfg_.weight_decay);
    if (!s_.params.all_finite()) throw Error(ErrorKind::runtime, "parameters diverged to non-finite values");

    if (events_.enabled()) {
      events_.write({{"iter", s_.global_iteration},
                     {"event", "step"},
                     {"level", level},
                     {"supervised", terms.supervised},
                     {"unlabeled", terms.unlabeled},
                     {"cluster_unlabeled", cluster_unlabeled},
                     {"cluster_labeled", cluster_labeled},
                     {"cluster_weight", wc},
                     {"total", total}});
    }

    std::size_t identified_id = 0;
    std::size_t identified_ood = 0;
    if (ready) {
      // Moving-average prototype updates, weak views only, in batch order.
      for (std::size_t i = 0; i < uids.size(); ++i) {
        if (!targets[i]) continue;
        const auto& rec = terms.records[i];
        update_prototype(s_.bank, rec.pseudo_label, *targets[i], rec.weak.feature, cfg_.cluster);
        events_.write({{"iter", s_.global_iteration}, {"event", "prototype_update"}, {"uid", uids[i]},
                       {"class", rec.pseudo_label}, {"proto", *targets[i]}});
      }

      std::vector<IdentificationResult> results;
      results.reserve(uids.size());
      for (std::size_t i = 0; i < uids.size(); ++i) {
        const auto& rec = terms.records[i];
        results.push_back(identify_sample(s_.bank, uids[i], rec.weak, rec.pseudo_label, cfg_.cluster));
        const auto& r = results.back();
        if (r.verdict == Verdict::id) ++identified_id;
        if (r.verdict == Verdict::ood) ++identified_ood;
        if (events_.enabled() && r.verdict != Verdict::ungated)
          events_.write({{"iter", s_.global_iteration}, {"event", "identify"}, {"uid", r.uid},
                         {"class", r.pseudo_class}, {"proto", *r.nearest_prototype},
                         {"verdict", verdict_name(r.verdict)}});
      }

      if (s_.pyramid.pool_levels() > 0) {
        const auto by_class = record_identification(s_.pyramid, level, results);
        const auto updates =
            feed_next_level(s_.pyramid, level, by_class, rng("pool_replace"), cfg_.replacement_rule());
        if (events_.enabled()) log_pool_updates(level + 1, updates);
      }
    }

    auto& a = s_.accum;
    ++a.iterations;
    a.supervised += terms.supervised;
    a.unlabeled += terms.unlabeled;
    a.cluster += cluster;
    a.total += total;
    a.gate_open_pseudo += terms.gate_open;
    a.gate_open_cluster += cluster_gate;
    a.identified_id += identified_id;
    a.identified_ood += identified_ood;
  }

  void log_pool_updates(std::size_t level, const std::vector<PoolUpdate>& updates) {
    for (std::size_t c = 0; c < updates.size(); ++c) {
      const auto& u = updates[c];
      for (auto uid : u.appended)
        events_.write({{"iter", s_.global_iteration}, {"event", "pool_append"}, {"level", level}, {"class", c},
                       {"uid", uid}});
      for (const auto& r : u.replaced)
        events_.write({{"iter", s_.global_iteration}, {"event", "pool_replace"}, {"level", level}, {"class", c},
                       {"evicted", r.evicted}, {"inserted", r.inserted}});
      for (auto uid : u.discarded)
        events_.write({{"iter", s_.global_iteration}, {"event", "pool_discard"}, {"level", level}, {"class", c},
                       {"uid", uid}});
    }
  }

  EpochMetrics end_epoch() {
    const EvalMetrics ev = evaluate_state(s_.params, s_.bank, s_.pyramid, data_);
    const auto& a = s_.accum;
    const double n = static_cast<double>(std::max<std::size_t>(1, a.iterations));
    EpochMetrics m;
    m.epoch = s_.epoch + 1;
    m.test_acc = ev.test_acc;
    m.auroc_baseline = ev.auroc_baseline;
    m.auroc_prototype = ev.auroc_prototype;
    m.id_density_level1 = ev.id_density_level1;
    m.id_density_level2 = ev.id_density_level2;
    m.raw_id_ratio = raw_id_ratio_;
    m.loss_supervised = a.supervised / n;
    m.loss_unlabeled = a.unlabeled / n;
    m.loss_cluster = a.cluster / n;
    m.loss_total = a.total / n;
    m.gate_open_pseudo = a.gate_open_pseudo;
    m.gate_open_cluster = a.gate_open_cluster;
    m.identified_id = a.identified_id;
    m.identified_ood = a.identified_ood;
    m.prototypes_ready = prototypes_ready();

    s_.accuracy_history.push_back(m.test_acc);
    s_.accum = {};
    s_.iteration = 0;
    ++s_.epoch;
    metrics_.write(to_json(m));
    return m;
  }

  TrainerState& s_;
  const TrainConfig& cfg_;
  const OpenSetDataset& data_;
  JsonLines& metrics_;
  JsonLines& events_;
  AugmentConfig aug_ = cfg_.augment_config();
  std::unordered_map<std::uint64_t, std::size_t> unlabeled_index_;
  std::vector<Vector> labeled_x_;
  std::vector<std::size_t> labeled_y_;
  std::vector<std::uint64_t> raw_uids_;
  double raw_id_ratio_ = 0.0;
  std::size_t iters_per_epoch_ = 1;
};

TrainerState fresh_state(const TrainConfig& cfg, const OpenSetDataset& data) {
  TrainerState s;
  s.config = cfg;
  const ModelDims dims{data.input_dim(), cfg.hidden_dim, cfg.feature_dim, data.num_classes};
  Rng init = Rng::stream(cfg.seed, "model_init");
  s.params = init_params(dims, init);
  s.bank = PrototypeBank(data.num_classes, cfg.cluster.prototypes_per_class, cfg.feature_dim);
  s.pyramid = PoolPyramid(data.num_classes, cfg.effective_pool_levels(), cfg.pool_capacity);
  s.warmup.resize(data.num_classes);
  for (const char* name : kStreams) s.rngs.emplace(name, Rng::stream(cfg.seed, name));
  return s;
}

void write_summary(const std::filesystem::path& path, const TrainerState& s) {
  json j;
  j["epochs"] = s.epoch;
  j["final_accuracy"] = final_accuracy(s.accuracy_history);
  j["accuracy_history"] = s.accuracy_history;
  j["prototype_init_epoch"] = s.prototype_init_epoch ? json(*s.prototype_init_epoch) : json(nullptr);
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

}  // namespace

json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"test_acc", m.test_acc},
          {"auroc_baseline", optional_number(m.auroc_baseline)},
          {"auroc_prototype", optional_number(m.auroc_prototype)},
          {"id_density_level1", optional_number(m.id_density_level1)},
          {"id_density_level2", optional_number(m.id_density_level2)},
          {"raw_id_ratio", m.raw_id_ratio},
          {"loss_supervised", m.loss_supervised},
          {"loss_unlabeled", m.loss_unlabeled},
          {"loss_cluster", m.loss_cluster},
          {"loss_total", m.loss_total},
          {"gate_open_pseudo", m.gate_open_pseudo},
          {"gate_open_cluster", m.gate_open_cluster},
          {"identified_id", m.identified_id},
          {"identified_ood", m.identified_ood},
          {"prototypes_ready", m.prototypes_ready}};
}

json to_json(const EvalMetrics& m) {
  return {{"test_acc", m.test_acc},
          {"auroc_baseline", optional_number(m.auroc_baseline)},
          {"auroc_prototype", optional_number(m.auroc_prototype)},
          {"id_density_level1", optional_number(m.id_density_level1)},
          {"id_density_level2", optional_number(m.id_density_level2)}};
}

EvalMetrics evaluate_state(const ModelParams& params, const PrototypeBank& bank, const PoolPyramid& pyramid,
                           const OpenSetDataset& data) {
  EvalMetrics m;
  m.test_acc = accuracy(params, data.test);

  std::vector<Vector> xs;
  xs.reserve(data.unlabeled.size());
  bool has_id = false;
  bool has_ood = false;
  for (const auto& e : data.unlabeled) {
    xs.push_back(e.x);
    (e.domain == Domain::id ? has_id : has_ood) = true;
  }
  if (has_id && has_ood) {
    const auto traces = kernels::forward_batch(params, xs);
    std::vector<ScoredSample> msp;
    std::vector<ScoredSample> proto;
    msp.reserve(xs.size());
    for (std::size_t i = 0; i < traces.size(); ++i) {
      const auto& e = data.unlabeled[i];
      const auto& r = traces[i].out;
      const std::size_t cls = argmax(r.probs);
      msp.push_back({e.uid, r.probs[cls], e.domain});
      if (bank.flagged()) proto.push_back({e.uid, ood_score_prototype(bank, r.feature, cls), e.domain});
    }
    m.auroc_baseline = auroc(msp);
    if (bank.flagged()) m.auroc_prototype = auroc(proto);
  }

  if (pyramid.pool_levels() >= 1) {
    const DomainIndex truth(data);
    const auto d1 = level_id_density(pyramid, 1, truth);
    if (!d1.empty) m.id_density_level1 = d1.value;
    if (pyramid.pool_levels() >= 2) {
      const auto d2 = level_id_density(pyramid, 2, truth);
      if (!d2.empty) m.id_density_level2 = d2.value;
    }
  }
  return m;
}

double final_accuracy(const std::vector<double>& history) {
  if (history.empty()) return 0.0;
  const std::size_t n = std::min<std::size_t>(10, history.size());
  double sum = 0.0;
  for (std::size_t i = history.size() - n; i < history.size(); ++i) sum += history[i];
  return sum / static_cast<double>(n);
}

bool debug_logging_enabled() {
  const char* v = std::getenv("OSSSL_LOG");
  return v != nullptr && std::string(v) == "debug";
}

RunResult train(const TrainConfig& cfg_in, const RunOptions& opts) {
  const bool files = !opts.out_dir.empty();
  const std::filesystem::path checkpoint_path = opts.out_dir / "checkpoint.json";

  TrainerState state;
  if (opts.resume) {
    if (!files) throw ConfigError("resume needs an output directory");
    state = load_checkpoint(checkpoint_path);
    if (to_json(state.config) != to_json(cfg_in))
      throw ConfigError("config differs from the one recorded in " + checkpoint_path.string());
  } else {
    cfg_in.validate();
  }
  const TrainConfig& cfg = opts.resume ? state.config : cfg_in;

  std::optional<OpenSetDataset> owned;
  if (!opts.data) owned = materialize_dataset(cfg);
  const OpenSetDataset& data = opts.data ? *opts.data : *owned;
  data.validate();

  if (!opts.resume) state = fresh_state(cfg, data);
  if (state.params.dims() != ModelDims{data.input_dim(), cfg.hidden_dim, cfg.feature_dim, data.num_classes})
    throw DimensionMismatch("dataset shape differs from the model");

  const bool event_log = files && (opts.event_log || debug_logging_enabled());
  JsonLines metrics;
  JsonLines events;
  if (files) {
    std::filesystem::create_directories(opts.out_dir);
    const auto metrics_path = opts.out_dir / "metrics.jsonl";
    const auto events_path = opts.out_dir / "events.jsonl";
    if (opts.resume) {
      truncate_lines(metrics_path, state.metrics_lines);
      if (event_log) truncate_lines(events_path, state.event_lines);
    } else {
      std::ofstream(opts.out_dir / "config.json") << to_json(cfg).dump(2) << '\n';
      std::ofstream(metrics_path, std::ios::trunc);
      if (event_log) std::ofstream(events_path, std::ios::trunc);
    }
    metrics = JsonLines(metrics_path, state.metrics_lines);
    if (event_log) events = JsonLines(events_path, state.event_lines);
  }

  RunResult result;
  Trainer trainer(state, data, metrics, events);
  while (!trainer.finished()) {
    const bool stop = (opts.stop_flag && opts.stop_flag->load()) ||
                      (opts.stop_after_iterations && state.global_iteration >= *opts.stop_after_iterations);
    if (stop) {
      result.interrupted = true;
      break;
    }
    if (auto m = trainer.step()) {
      result.epochs.push_back(*m);
      if (files) save_checkpoint(state, checkpoint_path);
    }
  }
  if (files && result.interrupted) save_checkpoint(state, checkpoint_path);
  if (files && !result.interrupted) write_summary(opts.out_dir / "summary.json", state);

  result.accuracy_history = state.accuracy_history;
  result.final_accuracy = final_accuracy(state.accuracy_history);
  result.prototype_init_epoch = state.prototype_init_epoch;
  result.state = std::move(state);
  return result;
}

}  // namespace osssl
