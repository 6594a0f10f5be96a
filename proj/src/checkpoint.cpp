#include "osssl/checkpoint.hpp"

#include <fstream>

#include "osssl/errors.hpp"

namespace osssl {

using nlohmann::json;

namespace {

json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.flat().begin(), m.flat().end())}};
}

Matrix matrix_from(const json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  const auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != m.size()) throw CorruptCheckpoint("matrix data has the wrong length");
  std::copy(data.begin(), data.end(), m.flat().begin());
  return m;
}

json params_json(const ModelParams& p) {
  return {{"w1", matrix_json(p.w1)}, {"b1", p.b1}, {"w2", matrix_json(p.w2)},
          {"b2", p.b2},              {"wc", matrix_json(p.wc)}, {"bc", p.bc}};
}

ModelParams params_from(const json& j) {
  ModelParams p;
  p.w1 = matrix_from(j.at("w1"));
  p.b1 = j.at("b1").get<Vector>();
  p.w2 = matrix_from(j.at("w2"));
  p.b2 = j.at("b2").get<Vector>();
  p.wc = matrix_from(j.at("wc"));
  p.bc = j.at("bc").get<Vector>();
  const auto d = p.dims();
  if (p.b1.size() != d.hidden || p.w2.rows() != d.hidden || p.b2.size() != d.feature || p.wc.rows() != d.feature ||
      p.bc.size() != d.classes)
    throw CorruptCheckpoint("inconsistent parameter shapes");
  if (!p.all_finite()) throw CorruptCheckpoint("non-finite parameters");
  return p;
}

json bank_json(const PrototypeBank& b) {
  json protos = json::array();
  json flags = json::array();
  for (std::size_t s = 0; s < b.classes(); ++s) {
    for (std::size_t j = 0; j < b.per_class(); ++j) {
      protos.push_back(b.prototype(s, j));
      flags.push_back(b.is_id(s, j));
    }
  }
  return {{"classes", b.classes()},         {"per_class", b.per_class()}, {"dim", b.dim()},
          {"initialized", b.initialized()}, {"flagged", b.flagged()},     {"prototypes", protos},
          {"is_id", flags}};
}

PrototypeBank bank_from(const json& j) {
  PrototypeBank b(j.at("classes").get<std::size_t>(), j.at("per_class").get<std::size_t>(),
                  j.at("dim").get<std::size_t>());
  const auto& protos = j.at("prototypes");
  const auto& flags = j.at("is_id");
  if (protos.size() != b.classes() * b.per_class() || flags.size() != protos.size())
    throw CorruptCheckpoint("prototype bank has the wrong size");
  for (std::size_t s = 0; s < b.classes(); ++s) {
    std::vector<bool> f(b.per_class());
    for (std::size_t k = 0; k < b.per_class(); ++k) {
      auto p = protos.at(s * b.per_class() + k).get<Vector>();
      if (p.size() != b.dim()) throw CorruptCheckpoint("prototype has the wrong dimension");
      b.set_prototype(s, k, std::move(p));
      f[k] = flags.at(s * b.per_class() + k).get<bool>();
    }
    b.set_id_flags(s, f);
  }
  if (j.at("initialized").get<bool>()) b.mark_initialized();
  if (j.at("flagged").get<bool>()) b.mark_flagged();
  return b;
}

json pyramid_json(const PoolPyramid& p) {
  json pools = json::array();
  for (std::size_t level = 1; level <= p.pool_levels(); ++level) {
    for (std::size_t s = 0; s < p.classes(); ++s) {
      json entries = json::array();
      for (const auto& e : p.pool(level, s).entries) entries.push_back({e.uid, e.id_count});
      pools.push_back(entries);
    }
  }
  json counts = json::array();
  for (const auto& [uid, n] : p.id_counts()) counts.push_back({uid, n});
  return {{"classes", p.classes()}, {"pool_levels", p.pool_levels()}, {"base_capacity", p.base_capacity()},
          {"cursor", p.cursor()},   {"rotation", p.rotation()},       {"pools", pools},
          {"id_counts", counts}};
}

PoolPyramid pyramid_from(const json& j) {
  PoolPyramid p(j.at("classes").get<std::size_t>(), j.at("pool_levels").get<std::size_t>(),
                j.at("base_capacity").get<std::size_t>());
  const auto& pools = j.at("pools");
  if (pools.size() != p.pool_levels() * p.classes()) throw CorruptCheckpoint("pool count mismatch");
  std::size_t k = 0;
  for (std::size_t level = 1; level <= p.pool_levels(); ++level) {
    for (std::size_t s = 0; s < p.classes(); ++s) {
      auto& pool = p.pool(level, s);
      for (const auto& e : pools.at(k++)) pool.entries.push_back({e.at(0).get<std::uint64_t>(), e.at(1).get<std::uint64_t>()});
      if (pool.entries.size() > pool.capacity) throw CorruptCheckpoint("pool exceeds its capacity");
    }
  }
  std::map<std::uint64_t, std::uint64_t> counts;
  for (const auto& e : j.at("id_counts")) counts[e.at(0).get<std::uint64_t>()] = e.at(1).get<std::uint64_t>();
  const auto cursor = j.at("cursor").get<std::size_t>();
  if (cursor > p.pool_levels()) throw CorruptCheckpoint("pool cursor out of range");
  p.restore_state(cursor, j.at("rotation").get<std::size_t>(), std::move(counts));
  return p;
}

json accum_json(const EpochAccumulator& a) {
  return {{"iterations", a.iterations},
          {"supervised", a.supervised},
          {"unlabeled", a.unlabeled},
          {"cluster", a.cluster},
          {"total", a.total},
          {"gate_open_pseudo", a.gate_open_pseudo},
          {"gate_open_cluster", a.gate_open_cluster},
          {"identified_id", a.identified_id},
          {"identified_ood", a.identified_ood}};
}

EpochAccumulator accum_from(const json& j) {
  EpochAccumulator a;
  a.iterations = j.at("iterations").get<std::size_t>();
  a.supervised = j.at("supervised").get<double>();
  a.unlabeled = j.at("unlabeled").get<double>();
  a.cluster = j.at("cluster").get<double>();
  a.total = j.at("total").get<double>();
  a.gate_open_pseudo = j.at("gate_open_pseudo").get<std::size_t>();
  a.gate_open_cluster = j.at("gate_open_cluster").get<std::size_t>();
  a.identified_id = j.at("identified_id").get<std::size_t>();
  a.identified_ood = j.at("identified_ood").get<std::size_t>();
  return a;
}

}  // namespace

json checkpoint_to_json(const TrainerState& s) {
  json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["config"] = to_json(s.config);
  j["params"] = params_json(s.params);
  j["bank"] = bank_json(s.bank);
  j["pyramid"] = pyramid_json(s.pyramid);
  json warm = json::array();
  for (const auto& uids : s.warmup) warm.push_back(std::vector<std::uint64_t>(uids.begin(), uids.end()));
  j["warmup"] = warm;
  j["class_centers"] = s.class_centers;
  j["label_means"] = s.label_means;
  json rngs = json::object();
  for (const auto& [name, rng] : s.rngs) rngs[name] = rng.serialize();
  j["rngs"] = rngs;
  j["epoch"] = s.epoch;
  j["iteration"] = s.iteration;
  j["global_iteration"] = s.global_iteration;
  j["prototype_init_epoch"] = s.prototype_init_epoch ? json(*s.prototype_init_epoch) : json(nullptr);
  j["accum"] = accum_json(s.accum);
  j["accuracy_history"] = s.accuracy_history;
  j["metrics_lines"] = s.metrics_lines;
  j["event_lines"] = s.event_lines;
  return j;
}

TrainerState checkpoint_from_json(const json& j) {
  if (!j.is_object() || !j.contains("format_version")) throw CorruptCheckpoint("missing format_version");
  if (!j.at("format_version").is_number_integer()) throw CorruptCheckpoint("format_version is not an integer");
  const int version = j.at("format_version").get<int>();
  if (version != kCheckpointFormatVersion)
    throw VersionMismatch("checkpoint format " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointFormatVersion));
  try {
    TrainerState s;
    try {
      s.config = config_from_json(j.at("config"));
    } catch (const ConfigError& e) {
      throw CorruptCheckpoint(std::string("config echo: ") + e.what());
    }
    s.params = params_from(j.at("params"));
    s.bank = bank_from(j.at("bank"));
    s.pyramid = pyramid_from(j.at("pyramid"));
    for (const auto& uids : j.at("warmup")) {
      const auto v = uids.get<std::vector<std::uint64_t>>();
      s.warmup.emplace_back(v.begin(), v.end());
    }
    s.class_centers = j.at("class_centers").get<std::vector<Vector>>();
    s.label_means = j.at("label_means").get<std::vector<Vector>>();
    for (const auto& [name, state] : j.at("rngs").items()) s.rngs.emplace(name, Rng::deserialize(state.get<std::string>()));
    s.epoch = j.at("epoch").get<std::size_t>();
    s.iteration = j.at("iteration").get<std::size_t>();
    s.global_iteration = j.at("global_iteration").get<std::size_t>();
    if (!j.at("prototype_init_epoch").is_null()) s.prototype_init_epoch = j.at("prototype_init_epoch").get<std::size_t>();
    s.accum = accum_from(j.at("accum"));
    s.accuracy_history = j.at("accuracy_history").get<std::vector<double>>();
    s.metrics_lines = j.at("metrics_lines").get<std::size_t>();
    s.event_lines = j.at("event_lines").get<std::size_t>();
    return s;
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(e.what());
  }
}

void save_checkpoint(const TrainerState& state, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorKind::runtime, "cannot write " + tmp.string());
    out << checkpoint_to_json(state).dump() << '\n';
    if (!out) throw Error(ErrorKind::runtime, "failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TrainerState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CorruptCheckpoint("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw CorruptCheckpoint(path.string() + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace osssl
