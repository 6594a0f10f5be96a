#include "osssl/synthdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "osssl/errors.hpp"

namespace osssl {

namespace {

constexpr std::size_t kMaxCenterAttempts = 100000;

struct Centers {
  std::vector<Vector> id;
  std::vector<Vector> ood;
};

Vector draw_center(std::size_t dim, double scale, Rng& rng) {
  Vector c(dim);
  for (double& v : c) v = rng.normal(0.0, scale);
  return c;
}

Centers make_centers(const DatasetSpec& spec) {
  Rng rng = Rng::stream(spec.seed, "centers");
  // Pairwise distance of two such draws concentrates near sqrt(2) * separation.
  const double scale = spec.separation / std::sqrt(static_cast<double>(spec.input_dim));
  Centers c;
  std::size_t attempts = 0;
  while (c.id.size() < spec.num_classes) {
    if (++attempts > kMaxCenterAttempts) {
      throw InfeasibleSpec("could not place " + std::to_string(spec.num_classes) + " ID centers " +
                           std::to_string(spec.separation) + " apart");
    }
    Vector cand = draw_center(spec.input_dim, scale, rng);
    const bool ok = std::all_of(c.id.begin(), c.id.end(), [&](const Vector& other) {
      return std::sqrt(squared_distance(cand, other)) >= spec.separation;
    });
    if (ok) c.id.push_back(std::move(cand));
  }
  attempts = 0;
  while (c.ood.size() < spec.ood_clusters) {
    if (++attempts > kMaxCenterAttempts) throw InfeasibleSpec("could not place OOD centers away from ID centers");
    Vector cand = draw_center(spec.input_dim, scale, rng);
    const bool ok = std::all_of(c.id.begin(), c.id.end(), [&](const Vector& other) {
      return std::sqrt(squared_distance(cand, other)) >= spec.separation / 2.0;
    });
    if (ok) c.ood.push_back(std::move(cand));
  }
  return c;
}

Vector draw_point(const Vector& center, double stddev, Rng& rng) {
  Vector x(center.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = center[i] + rng.normal(0.0, stddev);
  return x;
}

}  // namespace

std::size_t OpenSetDataset::input_dim() const {
  for (const auto* split : {&labeled, &unlabeled, &test})
    if (!split->empty()) return split->front().x.size();
  return 0;
}

void OpenSetDataset::validate() const {
  if (num_classes == 0) throw InvariantViolation("dataset has no classes");
  const std::size_t d = input_dim();
  std::set<std::uint64_t> uids;
  std::vector<std::size_t> labeled_per_class(num_classes, 0);
  auto check_row = [&](const Example& e, const char* split) {
    if (e.x.size() != d) throw InvariantViolation(std::string(split) + " uid " + std::to_string(e.uid) + " has wrong dimension");
    if (!uids.insert(e.uid).second) throw InvariantViolation("duplicate uid " + std::to_string(e.uid));
    if (e.domain == Domain::ood && e.true_class) throw InvariantViolation("OOD uid " + std::to_string(e.uid) + " carries a label");
    if (e.true_class && *e.true_class >= num_classes) throw InvariantViolation("label out of range for uid " + std::to_string(e.uid));
  };
  for (const auto& e : labeled) {
    check_row(e, "labeled");
    if (e.domain != Domain::id) throw InvariantViolation("OOD uid " + std::to_string(e.uid) + " in labeled split");
    if (!e.true_class) throw InvariantViolation("labeled uid " + std::to_string(e.uid) + " has no label");
    ++labeled_per_class[*e.true_class];
  }
  for (const auto& e : unlabeled) check_row(e, "unlabeled");
  for (const auto& e : test) {
    check_row(e, "test");
    if (e.domain != Domain::id || !e.true_class) throw InvariantViolation("test uid " + std::to_string(e.uid) + " is not a labeled ID example");
  }
  for (std::size_t s = 0; s < num_classes; ++s)
    if (labeled_per_class[s] == 0) throw InvariantViolation("class " + std::to_string(s) + " has no labeled example");
}

void DatasetSpec::validate() const {
  if (num_classes == 0) throw InfeasibleSpec("num_classes must be positive");
  if (input_dim == 0) throw InfeasibleSpec("input_dim must be positive");
  if (labeled_per_class == 0) throw InfeasibleSpec("every class needs a labeled example");
  if (ood_count > 0 && ood_clusters == 0) throw InfeasibleSpec("ood_count > 0 needs at least one OOD cluster");
  if (!(separation > 0.0)) throw InfeasibleSpec("separation must be positive");
  if (!(stddev > 0.0)) throw InfeasibleSpec("stddev must be positive");
}

OpenSetDataset generate_open_set(const DatasetSpec& spec) {
  spec.validate();
  const Centers centers = make_centers(spec);

  OpenSetDataset data;
  data.num_classes = spec.num_classes;
  std::uint64_t next_uid = 0;

  std::vector<std::vector<Vector>> class_points(spec.num_classes);
  for (std::size_t s = 0; s < spec.num_classes; ++s) {
    Rng rng = Rng::stream(spec.seed, "class", s);
    for (std::size_t i = 0; i < spec.labeled_per_class + spec.unlabeled_per_class; ++i)
      class_points[s].push_back(draw_point(centers.id[s], spec.stddev, rng));
  }
  for (std::size_t s = 0; s < spec.num_classes; ++s)
    for (std::size_t i = 0; i < spec.labeled_per_class; ++i)
      data.labeled.push_back({next_uid++, class_points[s][i], s, Domain::id});
  for (std::size_t s = 0; s < spec.num_classes; ++s)
    for (std::size_t i = spec.labeled_per_class; i < class_points[s].size(); ++i)
      data.unlabeled.push_back({next_uid++, class_points[s][i], s, Domain::id});

  for (std::size_t c = 0; c < spec.ood_clusters; ++c) {
    const std::size_t n = spec.ood_count / spec.ood_clusters + (c < spec.ood_count % spec.ood_clusters ? 1 : 0);
    Rng rng = Rng::stream(spec.seed, "ood", c);
    for (std::size_t i = 0; i < n; ++i)
      data.unlabeled.push_back({next_uid++, draw_point(centers.ood[c], spec.stddev, rng), std::nullopt, Domain::ood});
  }

  for (std::size_t s = 0; s < spec.num_classes; ++s) {
    Rng rng = Rng::stream(spec.seed, "test", s);
    for (std::size_t i = 0; i < spec.test_per_class; ++i)
      data.test.push_back({next_uid++, draw_point(centers.id[s], spec.stddev, rng), s, Domain::id});
  }
  return data;
}

std::vector<Vector> generated_id_centers(const DatasetSpec& spec) { return make_centers(spec).id; }
std::vector<Vector> generated_ood_centers(const DatasetSpec& spec) { return make_centers(spec).ood; }

Vector augment(std::span<const double> x, Strength strength, const AugmentConfig& cfg, Rng& rng) {
  Vector out(x.begin(), x.end());
  if (strength == Strength::weak) {
    for (double& v : out) v += rng.normal(0.0, cfg.weak_sigma);
    return out;
  }
  for (double& v : out) v += rng.normal(0.0, cfg.strong_sigma);
  for (double& v : out)
    if (rng.bernoulli(cfg.drop_prob)) v = 0.0;
  return out;
}

// --- CSV -------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v))
    throw ParseError("line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& s, std::size_t line) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty())
    throw ParseError("line " + std::to_string(line) + ": bad integer '" + s + "'");
  return v;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

OpenSetDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty file, header required");

  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  std::vector<std::string> missing;
  for (const char* name : {"uid", "split", "domain", "label", "f0"})
    if (!col.contains(name)) missing.emplace_back(name);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw SchemaError("missing columns: " + list);
  }
  std::vector<std::size_t> feature_cols;
  while (col.contains("f" + std::to_string(feature_cols.size())))
    feature_cols.push_back(col["f" + std::to_string(feature_cols.size())]);

  OpenSetDataset data;
  std::size_t max_label = 0;
  bool any_label = false;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " fields, got " + std::to_string(cells.size()));
    Example e;
    e.uid = parse_uint(cells[col["uid"]], line_no);
    const std::string& dom = cells[col["domain"]];
    if (dom == "ID")
      e.domain = Domain::id;
    else if (dom == "OOD")
      e.domain = Domain::ood;
    else
      throw ParseError("line " + std::to_string(line_no) + ": domain must be ID or OOD, got '" + dom + "'");
    const std::string& label = cells[col["label"]];
    if (!label.empty()) {
      e.true_class = static_cast<std::size_t>(parse_uint(label, line_no));
      max_label = std::max(max_label, *e.true_class);
      any_label = true;
    }
    e.x.reserve(feature_cols.size());
    for (std::size_t c : feature_cols) e.x.push_back(parse_double(cells[c], line_no));

    const std::string& split = cells[col["split"]];
    if (split == "labeled") {
      if (e.domain == Domain::ood) throw InvariantViolation("line " + std::to_string(line_no) + ": OOD row marked labeled");
      data.labeled.push_back(std::move(e));
    } else if (split == "unlabeled") {
      data.unlabeled.push_back(std::move(e));
    } else if (split == "test") {
      data.test.push_back(std::move(e));
    } else {
      throw ParseError("line " + std::to_string(line_no) + ": unknown split '" + split + "'");
    }
  }
  data.num_classes = any_label ? max_label + 1 : 0;
  data.validate();
  return data;
}

void save_csv(const OpenSetDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  out << "uid,split,domain,label";
  for (std::size_t i = 0; i < data.input_dim(); ++i) out << ",f" << i;
  out << '\n';
  auto write = [&](const Example& e, const char* split, bool with_label) {
    out << e.uid << ',' << split << ',' << (e.domain == Domain::id ? "ID" : "OOD") << ',';
    if (with_label && e.true_class) out << *e.true_class;
    for (double v : e.x) out << ',' << format_double(v);
    out << '\n';
  };
  for (const auto& e : data.labeled) write(e, "labeled", true);
  for (const auto& e : data.unlabeled) write(e, "unlabeled", false);
  for (const auto& e : data.test) write(e, "test", true);
}

DomainIndex::DomainIndex(const OpenSetDataset& data) {
  std::size_t ids = 0;
  for (const auto& e : data.unlabeled) {
    sorted_.emplace_back(e.uid, e.domain);
    if (e.domain == Domain::id) ++ids;
  }
  std::sort(sorted_.begin(), sorted_.end());
  id_ratio_ = data.unlabeled.empty() ? 0.0 : static_cast<double>(ids) / static_cast<double>(data.unlabeled.size());
}

Domain DomainIndex::domain(std::uint64_t uid) const {
  auto it = std::lower_bound(sorted_.begin(), sorted_.end(), std::make_pair(uid, Domain::id));
  if (it == sorted_.end() || it->first != uid) throw InvariantViolation("uid " + std::to_string(uid) + " is not an unlabeled example");
  return it->second;
}

}  // namespace osssl
