#include "osssl/config.hpp"

#include <fstream>
#include <set>

#include "osssl/errors.hpp"

namespace osssl {

using nlohmann::json;

const char* to_string(ClusteringMode m) {
  switch (m) {
    case ClusteringMode::off: return "off";
    case ClusteringMode::weak_only: return "weak_only";
    case ClusteringMode::on: return "on";
  }
  return "?";
}

const char* to_string(RefinementMode m) {
  switch (m) {
    case RefinementMode::off: return "off";
    case RefinementMode::random: return "random";
    case RefinementMode::importance: return "importance";
    case RefinementMode::cascading: return "cascading";
  }
  return "?";
}

const char* to_string(UnlabeledUse u) {
  switch (u) {
    case UnlabeledUse::all: return "all";
    case UnlabeledUse::id_only: return "id_only";
    case UnlabeledUse::none: return "none";
  }
  return "?";
}

namespace {

/// Reads known members of one JSON object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(context_ + " must be a JSON object");
  }

  template <typename T>
  void read(const char* name, T& out) {
    seen_.insert(name);
    if (!j_.contains(name)) return;
    try {
      out = j_.at(name).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(context_ + "." + name + ": " + e.what());
    }
  }

  template <typename T>
  void read(const char* name, std::optional<T>& out) {
    seen_.insert(name);
    if (!j_.contains(name) || j_.at(name).is_null()) return;
    T v{};
    read(name, v);
    out = v;
  }

  template <typename E>
  void read_enum(const char* name, E& out, std::initializer_list<E> values) {
    seen_.insert(name);
    if (!j_.contains(name)) return;
    if (!j_.at(name).is_string()) throw ConfigError(context_ + "." + name + " must be a string");
    const auto s = j_.at(name).get<std::string>();
    for (E v : values) {
      if (s == to_string(v)) {
        out = v;
        return;
      }
    }
    throw ConfigError(context_ + "." + name + ": unknown value '" + s + "'");
  }

  bool has(const char* name) {
    seen_.insert(name);
    return j_.contains(name);
  }
  const json& at(const char* name) const { return j_.at(name); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.contains(it.key())) throw ConfigError("unknown field " + context_ + "." + it.key());
  }

 private:
  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace

void TrainConfig::validate() const {
  if (dataset.has_value() == dataset_csv.has_value()) throw ConfigError("set exactly one of dataset, dataset_csv");
  if (dataset) {
    try {
      dataset->validate();
    } catch (const InfeasibleSpec& e) {
      throw ConfigError(e.what());
    }
  }
  if (hidden_dim == 0 || feature_dim < 2) throw ConfigError("model dims: hidden_dim >= 1, feature_dim >= 2");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (labeled_batch == 0 || unlabeled_batch == 0) throw ConfigError("batch sizes must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(lambda_u >= 0.0)) throw ConfigError("lambda_u must be >= 0");
  if (!(pseudo_threshold > 0.0 && pseudo_threshold < 1.0)) throw ConfigError("pseudo_threshold must lie in (0, 1)");
  if (!(augment.weak_sigma >= 0.0 && augment.strong_sigma >= augment.weak_sigma))
    throw ConfigError("augmentation needs 0 <= weak_sigma <= strong_sigma");
  if (!(augment.drop_prob >= 0.0 && augment.drop_prob <= 1.0)) throw ConfigError("drop_prob must lie in [0, 1]");
  if (augment_unit && !(*augment_unit > 0.0)) throw ConfigError("augment unit must be positive");
  cluster.validate();
  if (id_prototypes < 1 || id_prototypes > cluster.prototypes_per_class)
    throw ConfigError("id_prototypes must lie in [1, prototypes_per_class]");
  if (refinement != RefinementMode::off && clustering == ClusteringMode::off)
    throw ConfigError("refinement relies on prototype identification; enable clustering");
  if (refinement == RefinementMode::cascading && pool_levels < 1) throw ConfigError("cascading needs pool_levels >= 1");
  if (refinement != RefinementMode::off) {
    const std::size_t top = refinement == RefinementMode::cascading ? pool_levels : 1;
    if ((pool_capacity >> (top - 1)) == 0) throw ConfigError("pool_capacity too small for the pool levels");
  }
}

AugmentConfig TrainConfig::augment_config() const {
  const double unit = augment_unit.value_or(dataset ? dataset->stddev : 1.0);
  return {augment.weak_sigma * unit, augment.strong_sigma * unit, augment.drop_prob};
}

std::size_t TrainConfig::effective_pool_levels() const {
  switch (refinement) {
    case RefinementMode::off: return 0;
    case RefinementMode::random:
    case RefinementMode::importance: return 1;
    case RefinementMode::cascading: return pool_levels;
  }
  return 0;
}

ReplacementRule TrainConfig::replacement_rule() const {
  return refinement == RefinementMode::random ? ReplacementRule::random : ReplacementRule::importance;
}

TrainConfig desk_scale_config() {
  TrainConfig c;
  c.dataset = DatasetSpec{};
  // At 0.05 the pseudo-label gate barely opens before mid-run, leaving the
  // clustering stage too few epochs.
  c.lr = 0.2;
  return c;
}

DatasetSpec dataset_spec_from_json(const json& j) {
  DatasetSpec s;
  ObjectReader r(j, "dataset");
  r.read("num_classes", s.num_classes);
  r.read("ood_clusters", s.ood_clusters);
  r.read("input_dim", s.input_dim);
  r.read("labeled_per_class", s.labeled_per_class);
  r.read("unlabeled_per_class", s.unlabeled_per_class);
  r.read("ood_count", s.ood_count);
  r.read("test_per_class", s.test_per_class);
  r.read("separation", s.separation);
  r.read("stddev", s.stddev);
  r.read("seed", s.seed);
  r.finish();
  return s;
}

json to_json(const DatasetSpec& s) {
  return {{"num_classes", s.num_classes},
          {"ood_clusters", s.ood_clusters},
          {"input_dim", s.input_dim},
          {"labeled_per_class", s.labeled_per_class},
          {"unlabeled_per_class", s.unlabeled_per_class},
          {"ood_count", s.ood_count},
          {"test_per_class", s.test_per_class},
          {"separation", s.separation},
          {"stddev", s.stddev},
          {"seed", s.seed}};
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  ObjectReader top(j, "config");
  top.read("seed", c.seed);
  if (top.has("dataset")) {
    try {
      c.dataset = dataset_spec_from_json(top.at("dataset"));
    } catch (const InfeasibleSpec& e) {
      throw ConfigError(e.what());
    }
  }
  top.read("dataset_csv", c.dataset_csv);

  if (top.has("model")) {
    ObjectReader r(top.at("model"), "model");
    r.read("hidden_dim", c.hidden_dim);
    r.read("feature_dim", c.feature_dim);
    r.finish();
  }
  if (top.has("training")) {
    ObjectReader r(top.at("training"), "training");
    r.read("epochs", c.epochs);
    r.read("labeled_batch", c.labeled_batch);
    r.read("unlabeled_batch", c.unlabeled_batch);
    r.read("lr", c.lr);
    r.read("lr_warmup_epochs", c.lr_warmup_epochs);
    r.read("weight_decay", c.weight_decay);
    r.read("lambda_u", c.lambda_u);
    r.read("pseudo_threshold", c.pseudo_threshold);
    r.read_enum("unlabeled", c.unlabeled, {UnlabeledUse::all, UnlabeledUse::id_only, UnlabeledUse::none});
    r.finish();
  }
  if (top.has("augment")) {
    ObjectReader r(top.at("augment"), "augment");
    r.read("weak_sigma", c.augment.weak_sigma);
    r.read("strong_sigma", c.augment.strong_sigma);
    r.read("drop_prob", c.augment.drop_prob);
    r.read("unit", c.augment_unit);
    r.finish();
  }
  if (top.has("clustering")) {
    ObjectReader r(top.at("clustering"), "clustering");
    r.read_enum("mode", c.clustering, {ClusteringMode::off, ClusteringMode::weak_only, ClusteringMode::on});
    r.read("prototypes_per_class", c.cluster.prototypes_per_class);
    r.read("temperature", c.cluster.temperature);
    r.read("confidence_threshold", c.cluster.confidence_threshold);
    r.read("alpha", c.cluster.alpha);
    r.read("beta", c.cluster.beta);
    r.read("weight", c.cluster.weight);
    r.read("warmup_samples", c.cluster.warmup_samples);
    r.read("kmeans_iters", c.cluster.kmeans_iters);
    r.read("id_prototypes", c.id_prototypes);
    r.finish();
  }
  if (top.has("refinement")) {
    ObjectReader r(top.at("refinement"), "refinement");
    r.read_enum("mode", c.refinement,
                {RefinementMode::off, RefinementMode::random, RefinementMode::importance, RefinementMode::cascading});
    r.read("pool_levels", c.pool_levels);
    r.read("pool_capacity", c.pool_capacity);
    r.finish();
  }
  top.finish();
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  json j;
  j["seed"] = c.seed;
  if (c.dataset) j["dataset"] = to_json(*c.dataset);
  if (c.dataset_csv) j["dataset_csv"] = *c.dataset_csv;
  j["model"] = {{"hidden_dim", c.hidden_dim}, {"feature_dim", c.feature_dim}};
  j["training"] = {{"epochs", c.epochs},
                   {"labeled_batch", c.labeled_batch},
                   {"unlabeled_batch", c.unlabeled_batch},
                   {"lr", c.lr},
                   {"lr_warmup_epochs", c.lr_warmup_epochs},
                   {"weight_decay", c.weight_decay},
                   {"lambda_u", c.lambda_u},
                   {"pseudo_threshold", c.pseudo_threshold},
                   {"unlabeled", to_string(c.unlabeled)}};
  j["augment"] = {{"weak_sigma", c.augment.weak_sigma},
                  {"strong_sigma", c.augment.strong_sigma},
                  {"drop_prob", c.augment.drop_prob}};
  if (c.augment_unit) j["augment"]["unit"] = *c.augment_unit;
  j["clustering"] = {{"mode", to_string(c.clustering)},
                     {"prototypes_per_class", c.cluster.prototypes_per_class},
                     {"temperature", c.cluster.temperature},
                     {"confidence_threshold", c.cluster.confidence_threshold},
                     {"alpha", c.cluster.alpha},
                     {"beta", c.cluster.beta},
                     {"weight", c.cluster.weight},
                     {"warmup_samples", c.cluster.warmup_samples},
                     {"kmeans_iters", c.cluster.kmeans_iters},
                     {"id_prototypes", c.id_prototypes}};
  j["refinement"] = {{"mode", to_string(c.refinement)},
                     {"pool_levels", c.pool_levels},
                     {"pool_capacity", c.pool_capacity}};
  return j;
}

namespace {

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace

TrainConfig load_config(const std::filesystem::path& path) { return config_from_json(read_json_file(path)); }

DatasetSpec load_dataset_spec(const std::filesystem::path& path) {
  try {
    DatasetSpec s = dataset_spec_from_json(read_json_file(path));
    s.validate();
    return s;
  } catch (const InfeasibleSpec& e) {
    throw ConfigError(e.what());
  }
}

OpenSetDataset materialize_dataset(const TrainConfig& cfg) {
  if (cfg.dataset) return generate_open_set(*cfg.dataset);
  return load_csv(*cfg.dataset_csv);
}

}  // namespace osssl
