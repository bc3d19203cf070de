#pragma once

// JSON mapping for TrainConfig and the experiment description. Unknown keys
// and wrongly typed values are rejected with the offending field path.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "lrw/datagen.hpp"
#include "lrw/errors.hpp"
#include "lrw/trainer.hpp"

namespace lrw {

using json = nlohmann::json;

class FieldError : public std::invalid_argument {
 public:
  FieldError(const std::string& field, const std::string& msg) : std::invalid_argument(field + ": " + msg) {}
};

namespace detail {

inline void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> known) {
  if (!j.is_object()) throw FieldError(where.empty() ? "<root>" : where, "expected an object");
  std::set<std::string> k(known.begin(), known.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!k.count(it.key())) throw FieldError(where.empty() ? it.key() : where + "." + it.key(), "unknown field");
}

inline bool non_negative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
}

inline std::string path_of(const std::string& where, const char* key) { return where.empty() ? key : where + "." + key; }

template <class T>
void read_field(const json& j, const std::string& where, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  const auto p = path_of(where, key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) throw FieldError(p, "expected true or false");
    out = it->template get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw FieldError(p, "expected a string");
    out = it->template get<std::string>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!it->is_number()) throw FieldError(p, "expected a number");
    out = it->template get<T>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!non_negative_integer(*it))
      throw FieldError(p, "expected a non-negative integer");
    out = it->template get<T>();
  } else {
    if (!it->is_array()) throw FieldError(p, "expected an array of non-negative integers");
    T v;
    for (const auto& e : *it) {
      if (!non_negative_integer(e)) throw FieldError(p, "expected an array of non-negative integers");
      v.push_back(e.template get<typename T::value_type>());
    }
    out = std::move(v);
  }
}

}  // namespace detail

inline json to_json(const TrainConfig& c) {
  return json{
      {"delta", c.delta},
      {"inner_steps", c.inner_steps},
      {"lr_splitter", c.lr_splitter},
      {"lr_meta", c.lr_meta},
      {"lr_classifier", c.lr_classifier},
      {"momentum", c.momentum},
      {"reg_ratio_weight", c.reg_ratio_weight},
      {"reg_label_weight", c.reg_label_weight},
      {"batch_train", c.batch_train},
      {"batch_val", c.batch_val},
      {"max_epochs", c.max_epochs},
      {"warm_start_epochs", c.warm_start_epochs},
      {"early_stop", c.early_stop == EarlyStop::Gap ? "gap" : "off"},
      {"seed", c.seed},
      {"classifier_hidden", c.classifier_hidden},
      {"meta_hidden", c.meta_hidden},
      {"splitter_hidden", c.splitter_hidden},
      {"activation", to_string(c.activation)},
      {"dropout", c.dropout},
      {"lr_decay_every", c.lr_decay_every},
      {"lr_decay_factor", c.lr_decay_factor},
      {"margin_epochs", c.margin_epochs},
      {"meta_uses_label", c.meta_uses_label},
      {"shared_features", c.shared_features},
      {"uniform_weights", c.uniform_weights},
      {"class_guard", c.class_guard},
  };
}

// Fields absent from `j` keep the values already in `c`.
inline void merge_json(TrainConfig& c, const json& j, const std::string& where = "train") {
  detail::reject_unknown(j, where,
                         {"delta", "inner_steps", "lr_splitter", "lr_meta", "lr_classifier", "momentum",
                          "reg_ratio_weight", "reg_label_weight", "batch_train", "batch_val", "max_epochs",
                          "warm_start_epochs", "early_stop", "seed", "classifier_hidden", "meta_hidden",
                          "splitter_hidden", "activation", "dropout", "lr_decay_every", "lr_decay_factor",
                          "margin_epochs", "meta_uses_label", "shared_features", "uniform_weights", "class_guard"});
  using detail::read_field;
  read_field(j, where, "delta", c.delta);
  read_field(j, where, "inner_steps", c.inner_steps);
  read_field(j, where, "lr_splitter", c.lr_splitter);
  read_field(j, where, "lr_meta", c.lr_meta);
  read_field(j, where, "lr_classifier", c.lr_classifier);
  read_field(j, where, "momentum", c.momentum);
  read_field(j, where, "reg_ratio_weight", c.reg_ratio_weight);
  read_field(j, where, "reg_label_weight", c.reg_label_weight);
  read_field(j, where, "batch_train", c.batch_train);
  read_field(j, where, "batch_val", c.batch_val);
  read_field(j, where, "max_epochs", c.max_epochs);
  read_field(j, where, "warm_start_epochs", c.warm_start_epochs);
  std::string es = c.early_stop == EarlyStop::Gap ? "gap" : "off";
  read_field(j, where, "early_stop", es);
  if (es != "off" && es != "gap") throw FieldError(where + ".early_stop", "expected 'off' or 'gap'");
  c.early_stop = es == "gap" ? EarlyStop::Gap : EarlyStop::Off;
  read_field(j, where, "seed", c.seed);
  read_field(j, where, "classifier_hidden", c.classifier_hidden);
  read_field(j, where, "meta_hidden", c.meta_hidden);
  read_field(j, where, "splitter_hidden", c.splitter_hidden);
  std::string act = to_string(c.activation);
  read_field(j, where, "activation", act);
  try {
    c.activation = activation_from_string(act);
  } catch (const std::invalid_argument& e) {
    throw FieldError(where + ".activation", e.what());
  }
  read_field(j, where, "dropout", c.dropout);
  read_field(j, where, "lr_decay_every", c.lr_decay_every);
  read_field(j, where, "lr_decay_factor", c.lr_decay_factor);
  read_field(j, where, "margin_epochs", c.margin_epochs);
  read_field(j, where, "meta_uses_label", c.meta_uses_label);
  read_field(j, where, "shared_features", c.shared_features);
  read_field(j, where, "uniform_weights", c.uniform_weights);
  read_field(j, where, "class_guard", c.class_guard);
}

inline TrainConfig train_config_from_json(const json& j, const std::string& where = "train") {
  TrainConfig c;
  merge_json(c, j, where);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw FieldError(where, e.what());
  }
  return c;
}

// ---- dataset recipe ------------------------------------------------------

struct DatasetRecipe {
  std::string generator = "gaussian";  // gaussian | moons | file
  std::size_t n_per_class = 1000;      // gaussian
  std::size_t n = 2000;                // moons
  std::size_t classes = 2;
  std::size_t dim = 10;
  double separation = 2.0;
  double noise_std = 0.2;  // moons coordinate noise
  std::string path;        // file
  std::string test_path;   // file
  std::uint64_t seed = 0;
  std::optional<NoiseSpec> label_noise;
  std::string noise_scope = "all";  // all | train_split
  std::optional<SkewSpec> skew;
  std::size_t test_n_per_class = 1000;  // gaussian test set
  std::size_t test_n = 2000;            // moons test set
  bool skew_test = false;
  bool vary_with_seed = true;  // mix the run seed into every data seed

  void validate() const {
    if (generator != "gaussian" && generator != "moons" && generator != "file")
      throw FieldError("dataset.generator", "expected 'gaussian', 'moons' or 'file'");
    if (generator == "file") {
      if (path.empty()) throw FieldError("dataset.path", "required when generator is 'file'");
      if (test_path.empty()) throw FieldError("dataset.test_path", "required when generator is 'file'");
    }
    if (generator == "gaussian") {
      if (classes < 2) throw FieldError("dataset.classes", "must be >= 2");
      if (n_per_class < 1) throw FieldError("dataset.n_per_class", "must be >= 1");
      if (test_n_per_class < 1) throw FieldError("dataset.test_n_per_class", "must be >= 1");
      if (dim < 1) throw FieldError("dataset.dim", "must be >= 1");
      if (!(separation >= 0.0)) throw FieldError("dataset.separation", "must be >= 0");
    }
    if (generator == "moons" && (n < 2 || test_n < 2)) throw FieldError("dataset.n", "must be >= 2");
    if (label_noise && (!(label_noise->rate >= 0.0) || label_noise->rate > 0.5))
      throw FieldError("dataset.noise.rate", "must lie in [0, 0.5]");
    if (noise_scope != "all" && noise_scope != "train_split")
      throw FieldError("dataset.noise_scope", "expected 'all' or 'train_split'");
    if (skew && !(skew->ratio >= 1.0)) throw FieldError("dataset.skew.ratio", "must be >= 1");
  }
};

inline json to_json(const DatasetRecipe& r) {
  json j{{"generator", r.generator}, {"seed", r.seed}, {"noise_scope", r.noise_scope}, {"vary_with_seed", r.vary_with_seed}};
  if (r.generator == "gaussian") {
    j["n_per_class"] = r.n_per_class;
    j["classes"] = r.classes;
    j["dim"] = r.dim;
    j["separation"] = r.separation;
    j["test_n_per_class"] = r.test_n_per_class;
  } else if (r.generator == "moons") {
    j["n"] = r.n;
    j["noise_std"] = r.noise_std;
    j["test_n"] = r.test_n;
  } else {
    j["path"] = r.path;
    j["test_path"] = r.test_path;
  }
  j["noise"] = r.label_noise ? json{{"kind", to_string(r.label_noise->kind)}, {"rate", r.label_noise->rate},
                                    {"seed", r.label_noise->seed}}
                             : json(nullptr);
  j["skew"] = r.skew ? json{{"ratio", r.skew->ratio}, {"seed", r.skew->seed}} : json(nullptr);
  j["skew_test"] = r.skew_test;
  return j;
}

inline DatasetRecipe dataset_recipe_from_json(const json& j) {
  const std::string w = "dataset";
  detail::reject_unknown(j, w,
                         {"generator", "n_per_class", "n", "classes", "dim", "separation", "noise_std", "path",
                          "test_path", "seed", "noise", "noise_scope", "skew", "test_n_per_class", "test_n",
                          "skew_test", "vary_with_seed"});
  DatasetRecipe r;
  using detail::read_field;
  read_field(j, w, "generator", r.generator);
  read_field(j, w, "n_per_class", r.n_per_class);
  read_field(j, w, "n", r.n);
  read_field(j, w, "classes", r.classes);
  read_field(j, w, "dim", r.dim);
  read_field(j, w, "separation", r.separation);
  read_field(j, w, "noise_std", r.noise_std);
  read_field(j, w, "path", r.path);
  read_field(j, w, "test_path", r.test_path);
  read_field(j, w, "seed", r.seed);
  read_field(j, w, "noise_scope", r.noise_scope);
  read_field(j, w, "test_n_per_class", r.test_n_per_class);
  read_field(j, w, "test_n", r.test_n);
  read_field(j, w, "skew_test", r.skew_test);
  read_field(j, w, "vary_with_seed", r.vary_with_seed);
  if (auto it = j.find("noise"); it != j.end() && !it->is_null()) {
    detail::reject_unknown(*it, "dataset.noise", {"kind", "rate", "seed"});
    NoiseSpec ns;
    std::string kind = to_string(ns.kind);
    read_field(*it, "dataset.noise", "kind", kind);
    try {
      ns.kind = noise_kind_from_string(kind);
    } catch (const std::invalid_argument& e) {
      throw FieldError("dataset.noise.kind", e.what());
    }
    read_field(*it, "dataset.noise", "rate", ns.rate);
    read_field(*it, "dataset.noise", "seed", ns.seed);
    r.label_noise = ns;
  }
  if (auto it = j.find("skew"); it != j.end() && !it->is_null()) {
    detail::reject_unknown(*it, "dataset.skew", {"ratio", "seed"});
    SkewSpec ss;
    read_field(*it, "dataset.skew", "ratio", ss.ratio);
    read_field(*it, "dataset.skew", "seed", ss.seed);
    r.skew = ss;
  }
  r.validate();
  return r;
}

// ---- experiment ----------------------------------------------------------

enum class Variant { Erm, LrwHard, LrwEasy, LrwRandom, LrwOpt, Oracle };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::Erm: return "erm";
    case Variant::LrwHard: return "lrw_hard";
    case Variant::LrwEasy: return "lrw_easy";
    case Variant::LrwRandom: return "lrw_random";
    case Variant::LrwOpt: return "lrwopt";
    case Variant::Oracle: return "oracle";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  for (auto v : {Variant::Erm, Variant::LrwHard, Variant::LrwEasy, Variant::LrwRandom, Variant::LrwOpt, Variant::Oracle})
    if (to_string(v) == s) return v;
  throw FieldError("variant", "unknown variant '" + s + "' (expected erm, lrw_hard, lrw_easy, lrw_random, lrwopt, oracle)");
}

struct OracleSpec {
  std::string instance_path;
  std::vector<std::int64_t> grid{0, 1, 2, 4};
};

struct ExperimentSpec {
  DatasetRecipe dataset;
  Variant variant = Variant::Erm;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "out";
  std::size_t jobs = 1;
  OracleSpec oracle;

  void validate() const {
    if (variant == Variant::Oracle) {
      if (oracle.instance_path.empty()) throw FieldError("oracle.instance", "required for variant 'oracle'");
      if (oracle.grid.empty()) throw FieldError("oracle.grid", "must not be empty");
      for (auto w : oracle.grid)
        if (w < 0) throw FieldError("oracle.grid", "weights must be >= 0");
    } else {
      dataset.validate();
      try {
        train.validate();
      } catch (const std::invalid_argument& e) {
        throw FieldError("train", e.what());
      }
      if (seeds.empty()) throw FieldError("seeds", "at least one seed is required");
      std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
      if (uniq.size() != seeds.size()) throw FieldError("seeds", "duplicate seed");
    }
    if (output_dir.empty()) throw FieldError("output_dir", "must not be empty");
    if (jobs < 1) throw FieldError("jobs", "must be >= 1");
  }
};

inline json to_json(const ExperimentSpec& s) {
  json j{{"variant", to_string(s.variant)}, {"output_dir", s.output_dir}, {"jobs", s.jobs}};
  if (s.variant == Variant::Oracle) {
    j["oracle"] = json{{"instance", s.oracle.instance_path}, {"grid", s.oracle.grid}};
  } else {
    j["dataset"] = to_json(s.dataset);
    j["train"] = to_json(s.train);
    j["seeds"] = s.seeds;
  }
  return j;
}

inline ExperimentSpec experiment_from_json(const json& j) {
  detail::reject_unknown(j, "", {"dataset", "variant", "train", "seeds", "output_dir", "jobs", "oracle"});
  ExperimentSpec s;
  std::string variant = "erm";
  detail::read_field(j, "", "variant", variant);
  s.variant = variant_from_string(variant);
  if (auto it = j.find("dataset"); it != j.end()) s.dataset = dataset_recipe_from_json(*it);
  if (auto it = j.find("train"); it != j.end()) merge_json(s.train, *it);
  if (auto it = j.find("seeds"); it != j.end()) {
    if (!it->is_array()) throw FieldError("seeds", "expected an array of non-negative integers");
    s.seeds.clear();
    for (const auto& e : *it) {
      if (!detail::non_negative_integer(e)) throw FieldError("seeds", "expected an array of non-negative integers");
      s.seeds.push_back(e.get<std::uint64_t>());
    }
  }
  detail::read_field(j, "", "output_dir", s.output_dir);
  detail::read_field(j, "", "jobs", s.jobs);
  if (auto it = j.find("oracle"); it != j.end()) {
    detail::reject_unknown(*it, "oracle", {"instance", "grid"});
    detail::read_field(*it, "oracle", "instance", s.oracle.instance_path);
    if (auto g = it->find("grid"); g != it->end()) {
      if (!g->is_array()) throw FieldError("oracle.grid", "expected an array of integers");
      s.oracle.grid.clear();
      for (const auto& e : *g) {
        if (!e.is_number_integer()) throw FieldError("oracle.grid", "expected an array of integers");
        s.oracle.grid.push_back(e.get<std::int64_t>());
      }
    }
  }
  s.validate();
  return s;
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  try {
    return json::parse(is);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << content;
  if (!os) throw IoError("write failed for '" + path + "'");
}

}  // namespace lrw
