#pragma once

// Experiment orchestration: realise a dataset recipe for a seed, train the
// requested variant next to an ERM baseline, evaluate, and write artifacts.
//
// Layout: <output_dir>/<variant>/<seed>/{config.json, train_log.csv,
// classifier.params, meta.params, splitter.params, split.csv, margins.csv,
// erm_margins.csv, histogram.csv, buckets.csv, report.json} plus
// <output_dir>/<variant>/{report.json, histogram.csv, buckets.csv}.
// Files contain no timestamps; reruns are byte-identical.

#include <algorithm>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lrw/config.hpp"
#include "lrw/dro_oracle.hpp"
#include "lrw/hardness.hpp"
#include "lrw/metrics.hpp"
#include "lrw/trainer.hpp"

namespace lrw {

// ---- data ----------------------------------------------------------------

enum DataStream : std::uint64_t { kDataTrain = 101, kDataTest, kDataNoise, kDataSkew, kDataTestSkew };

inline std::uint64_t data_seed(const DatasetRecipe& r, std::uint64_t base, std::uint64_t run_seed, std::uint64_t stream) {
  return r.vary_with_seed ? derive_seed(derive_seed(base, run_seed), stream) : derive_seed(base, stream);
}

inline NoiseSpec noise_for(const DatasetRecipe& r, std::uint64_t run_seed) {
  NoiseSpec n = *r.label_noise;
  n.seed = data_seed(r, r.label_noise->seed, run_seed, kDataNoise);
  return n;
}

struct RealizedData {
  Dataset train;  // skew applied; label noise applied unless deferred
  Dataset test;   // clean labels
  std::vector<std::size_t> clean_labels;
  bool noise_deferred = false;
};

inline RealizedData realize(const DatasetRecipe& r, std::uint64_t run_seed) {
  r.validate();
  RealizedData out;
  if (r.generator == "file") {
    out.train = load_csv(r.path);
    out.test = load_csv(r.test_path, out.train.n_classes);
    out.train.n_classes = std::max(out.train.n_classes, out.test.n_classes);
    if (out.train.dim() != out.test.dim()) throw std::invalid_argument("dataset.test_path: feature dimension differs");
  } else if (r.generator == "gaussian") {
    out.train = make_gaussian_mixture(r.n_per_class, r.classes, r.dim, r.separation,
                                      data_seed(r, r.seed, run_seed, kDataTrain));
    out.test = make_gaussian_mixture(r.test_n_per_class, r.classes, r.dim, r.separation,
                                     data_seed(r, r.seed, run_seed, kDataTest));
  } else {
    out.train = make_two_moons(r.n, r.noise_std, data_seed(r, r.seed, run_seed, kDataTrain));
    out.test = make_two_moons(r.test_n, r.noise_std, data_seed(r, r.seed, run_seed, kDataTest));
  }
  if (r.skew) {
    out.train = apply_skew(out.train, {r.skew->ratio, data_seed(r, r.skew->seed, run_seed, kDataSkew)});
    if (r.skew_test) out.test = apply_skew(out.test, {r.skew->ratio, data_seed(r, r.skew->seed, run_seed, kDataTestSkew)});
  }
  out.clean_labels = out.train.labels;
  if (r.label_noise) {
    if (r.noise_scope == "train_split")
      out.noise_deferred = true;
    else
      out.train = inject_noise(out.train, noise_for(r, run_seed));
  }
  return out;
}


// Label noise restricted to the training side of a split.
inline Dataset noise_on_train_side(const Dataset& d, const SplitAssignment& split, const NoiseSpec& spec) {
  Dataset side = inject_noise(d.subset(split.train_indices), spec);
  Dataset out = d;
  for (std::size_t k = 0; k < split.train_indices.size(); ++k) out.labels[split.train_indices[k]] = side.labels[k];
  out.provenance = side.provenance;
  return out;
}

// ---- one seed ------------------------------------------------------------

struct SplitStats {
  double val_fraction = 0.0;
  double val_mean_margin = 0.0;    // final classifier, discovered validation points
  double train_mean_margin = 0.0;  // final classifier, discovered training points
};

struct WeightStats {
  double flipped_mean = 0.0;
  double clean_mean = 0.0;
  std::size_t flipped = 0;
  std::size_t clean = 0;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  Variant variant = Variant::Erm;
  TrainConfig config;
  Mlp classifier;
  std::optional<MetaNet> meta;
  std::optional<SplitterNet> splitter;
  Mlp erm_classifier;
  Evaluation eval;
  Evaluation erm_eval;
  std::optional<SplitAssignment> split;
  std::vector<double> split_margins;
  std::vector<LossBreakdown> log;
  std::optional<SplitStats> split_stats;
  std::optional<WeightStats> weight_stats;
  MetricsReport report;
  std::vector<BucketStat> buckets;
};

inline std::vector<LossBreakdown> erm_log(const std::vector<double>& step_losses, std::size_t epochs) {
  std::vector<LossBreakdown> log;
  if (epochs == 0) return log;
  const std::size_t per = step_losses.size() / epochs;
  for (std::size_t e = 0; e < epochs; ++e) {
    LossBreakdown lb;
    lb.epoch = e;
    for (std::size_t k = 0; k < per; ++k) lb.weighted_train_loss += step_losses[e * per + k];
    lb.weighted_train_loss /= static_cast<double>(std::max<std::size_t>(per, 1));
    log.push_back(lb);
  }
  return log;
}

inline SplitStats split_stats(const Mlp& clf, const Dataset& d, const SplitAssignment& s) {
  const auto m = probabilistic_margin(clf, d);
  SplitStats st;
  st.val_fraction = s.delta_realized;
  for (auto i : s.val_indices) st.val_mean_margin += m[i].margin;
  for (auto i : s.train_indices) st.train_mean_margin += m[i].margin;
  if (!s.val_indices.empty()) st.val_mean_margin /= static_cast<double>(s.val_indices.size());
  if (!s.train_indices.empty()) st.train_mean_margin /= static_cast<double>(s.train_indices.size());
  return st;
}

// Mean meta weight (renormalised over the training side) of instances whose
// label differs from the clean label versus those that kept it.
inline std::optional<WeightStats> weight_stats(const TrainConfig& cfg, const Mlp& clf, const MetaNet& meta,
                                               const Dataset& d, const std::vector<std::size_t>& clean_labels,
                                               const SplitAssignment& s) {
  if (s.train_indices.empty()) return std::nullopt;
  const Tensor x = d.rows(s.train_indices);
  const auto y = d.labels_at(s.train_indices);
  const auto w = meta_weights(meta, meta_input(cfg, clf, x, y, d.n_classes));
  WeightStats ws;
  for (std::size_t k = 0; k < w.size(); ++k) {
    const auto i = s.train_indices[k];
    if (d.labels[i] != clean_labels[i]) {
      ws.flipped_mean += w[k];
      ++ws.flipped;
    } else {
      ws.clean_mean += w[k];
      ++ws.clean;
    }
  }
  if (ws.flipped == 0) return std::nullopt;
  ws.flipped_mean /= static_cast<double>(ws.flipped);
  if (ws.clean) ws.clean_mean /= static_cast<double>(ws.clean);
  return ws;
}

inline SeedOutcome run_seed(const ExperimentSpec& spec, std::uint64_t seed) {
  if (spec.variant == Variant::Oracle) throw std::invalid_argument("run_seed: the oracle variant has no seeds");
  SeedOutcome o;
  o.seed = seed;
  o.variant = spec.variant;
  o.config = spec.train;
  o.config.seed = seed;
  const TrainConfig& cfg = o.config;
  RealizedData data = realize(spec.dataset, seed);
  const bool is_lrw = spec.variant == Variant::LrwHard || spec.variant == Variant::LrwEasy ||
                      spec.variant == Variant::LrwRandom;
  if (data.noise_deferred && !is_lrw)
    throw FieldError("dataset.noise_scope", "'train_split' applies to the lrw_* variants only");

  Dataset train = data.train;
  if (is_lrw) {
    const auto margin_pass = train_erm(data.train, cfg, {}, cfg.margin_budget());
    const auto margins = probabilistic_margin(margin_pass.classifier, data.train);
    const SplitVariant sv = spec.variant == Variant::LrwHard   ? SplitVariant::Hard
                            : spec.variant == Variant::LrwEasy ? SplitVariant::Easy
                                                               : SplitVariant::Random;
    SplitAssignment split = carve_split(margins, sv, cfg.delta, derive_seed(seed, kWarmSplit));
    if (cfg.class_guard) split = stratified_guard(split, data.train, margins);
    if (data.noise_deferred) train = noise_on_train_side(data.train, split, noise_for(spec.dataset, seed));
    auto r = train_lrw(train, split, cfg);
    o.classifier = std::move(r.classifier);
    o.meta = std::move(r.meta);
    o.log = std::move(r.log);
    o.split_margins.resize(margins.size());
    for (std::size_t i = 0; i < margins.size(); ++i) o.split_margins[i] = margins[i].margin;
    o.split_stats = split_stats(o.classifier, train, split);
    o.weight_stats = weight_stats(cfg, o.classifier, *o.meta, train, data.clean_labels, split);
    o.split = std::move(split);
  } else if (spec.variant == Variant::LrwOpt) {
    auto r = train_lrwopt(train, cfg);
    o.classifier = std::move(r.classifier);
    o.meta = std::move(r.meta);
    o.splitter = std::move(r.splitter);
    o.log = std::move(r.log);
    const auto m = probabilistic_margin(o.classifier, train);
    for (const auto& rec : m) o.split_margins.push_back(rec.margin);
    o.split_stats = split_stats(o.classifier, train, r.split);
    o.weight_stats = weight_stats(cfg, o.classifier, *o.meta, train, data.clean_labels, r.split);
    o.split = std::move(r.split);
  }

  auto erm = train_erm(train, cfg);
  o.erm_classifier = std::move(erm.classifier);
  if (spec.variant == Variant::Erm) {
    o.classifier = o.erm_classifier;
    o.log = erm_log(erm.step_losses, cfg.max_epochs);
  }
  o.eval = evaluate(o.classifier, data.test);
  o.erm_eval = evaluate(o.erm_classifier, data.test);
  o.report = make_report(to_string(spec.variant), o.eval, o.erm_eval);
  o.buckets = margin_gain_by_bucket(o.eval.margins, o.erm_eval.margins);
  return o;
}

// ---- serialisation -------------------------------------------------------

inline json histogram_json(const Histogram& h) {
  return json{{"lo", h.lo}, {"width", h.width}, {"counts", h.counts}};
}

inline json buckets_json(const std::vector<BucketStat>& b) {
  json a = json::array();
  for (const auto& s : b)
    a.push_back(json{{"lo", s.lo}, {"hi", s.hi}, {"count", s.count}, {"mean", s.mean},
                     {"sem", s.sem ? json(*s.sem) : json(nullptr)}});
  return a;
}

inline json seed_report_json(const SeedOutcome& o) {
  json j{{"variant", to_string(o.variant)},
         {"seed", o.seed},
         {"test_accuracy", o.eval.accuracy},
         {"erm_test_accuracy", o.erm_eval.accuracy},
         {"gain_over_erm", o.eval.accuracy - o.erm_eval.accuracy},
         {"mean_margin", o.report.mean_margin},
         {"delta_mean", o.report.delta_mean},
         {"delta_median", o.report.delta_median},
         {"n_test", o.eval.margins.size()},
         {"histogram", histogram_json(o.report.paired_margin_deltas)}};
  if (o.split_stats)
    j["split"] = json{{"val_fraction", o.split_stats->val_fraction},
                      {"val_mean_margin", o.split_stats->val_mean_margin},
                      {"train_mean_margin", o.split_stats->train_mean_margin}};
  if (o.weight_stats)
    j["weights"] = json{{"flipped_mean", o.weight_stats->flipped_mean},
                        {"clean_mean", o.weight_stats->clean_mean},
                        {"flipped", o.weight_stats->flipped},
                        {"clean", o.weight_stats->clean}};
  return j;
}

inline std::string log_csv(const std::vector<LossBreakdown>& log) {
  std::ostringstream os;
  os << "epoch,weighted_train_loss,val_loss,split_loss,omega_ratio,omega_label,val_fraction\n";
  for (const auto& l : log)
    os << l.epoch << ',' << detail::fmt_double(l.weighted_train_loss) << ',' << detail::fmt_double(l.val_loss) << ','
       << detail::fmt_double(l.split_loss) << ',' << detail::fmt_double(l.omega_ratio) << ','
       << detail::fmt_double(l.omega_label) << ',' << detail::fmt_double(l.val_fraction) << '\n';
  return os.str();
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline ExperimentSpec seed_echo(const ExperimentSpec& spec, std::uint64_t seed) {
  ExperimentSpec e = spec;
  e.seeds = {seed};
  e.train.seed = seed;
  return e;
}

inline void write_seed_artifacts(const ExperimentSpec& spec, const SeedOutcome& o, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_text_file((dir / "train_log.csv").string(), log_csv(o.log));
  save_mlp(o.classifier, (dir / "classifier.params").string());
  if (o.meta) save_mlp(o.meta->net, (dir / "meta.params").string());
  if (o.splitter) save_mlp(o.splitter->net, (dir / "splitter.params").string());
  if (o.split) save_split_csv(*o.split, o.split_margins, (dir / "split.csv").string());
  std::ostringstream m, em, h, b;
  write_margins_csv(m, o.eval.margins);
  write_margins_csv(em, o.erm_eval.margins);
  write_histogram_csv(h, o.report.paired_margin_deltas);
  write_buckets_csv(b, o.buckets);
  write_text_file((dir / "margins.csv").string(), m.str());
  write_text_file((dir / "erm_margins.csv").string(), em.str());
  write_text_file((dir / "histogram.csv").string(), h.str());
  write_text_file((dir / "buckets.csv").string(), b.str());
  write_text_file((dir / "report.json").string(), dump(seed_report_json(o)));
  (void)spec;
}

// ---- aggregate -----------------------------------------------------------

struct ExperimentOutcome {
  std::vector<SeedOutcome> seeds;
  json aggregate;
};

inline json aggregate_report(const ExperimentSpec& spec, const std::vector<SeedOutcome>& outs) {
  json per = json::array();
  std::vector<double> acc, erm_acc, gains, all_deltas;
  std::vector<MarginRecord> target, base;
  Histogram pooled(-2.0, 2.0, 0.2);
  double margin_sum = 0.0;
  std::size_t margin_n = 0;
  for (const auto& o : outs) {
    per.push_back(json{{"seed", o.seed},
                       {"test_accuracy", o.eval.accuracy},
                       {"erm_test_accuracy", o.erm_eval.accuracy},
                       {"gain_over_erm", o.eval.accuracy - o.erm_eval.accuracy},
                       {"delta_mean", o.report.delta_mean},
                       {"delta_median", o.report.delta_median}});
    if (o.split_stats) {
      per.back()["val_fraction"] = o.split_stats->val_fraction;
      per.back()["val_mean_margin"] = o.split_stats->val_mean_margin;
      per.back()["train_mean_margin"] = o.split_stats->train_mean_margin;
    }
    if (o.weight_stats) {
      per.back()["flipped_weight_mean"] = o.weight_stats->flipped_mean;
      per.back()["clean_weight_mean"] = o.weight_stats->clean_mean;
    }
    acc.push_back(o.eval.accuracy);
    erm_acc.push_back(o.erm_eval.accuracy);
    gains.push_back(o.eval.accuracy - o.erm_eval.accuracy);
    const auto pd = paired_margin_delta(o.eval.margins, o.erm_eval.margins);
    for (std::size_t k = 0; k < pd.histogram.bins(); ++k) pooled.counts[k] += pd.histogram.counts[k];
    all_deltas.insert(all_deltas.end(), pd.deltas.begin(), pd.deltas.end());
    target.insert(target.end(), o.eval.margins.begin(), o.eval.margins.end());
    base.insert(base.end(), o.erm_eval.margins.begin(), o.erm_eval.margins.end());
    for (const auto& r : o.eval.margins) margin_sum += r.margin;
    margin_n += o.eval.margins.size();
  }
  auto train = to_json(spec.train);
  train.erase("seed");
  const auto sem = standard_error(acc);
  const auto gsem = standard_error(gains);
  return json{{"variant", to_string(spec.variant)},
              {"dataset", to_json(spec.dataset)},
              {"train", train},
              {"seeds", spec.seeds},
              {"per_seed", per},
              {"aggregate",
               json{{"model_tag", to_string(spec.variant)},
                    {"test_accuracy", mean_of(acc)},
                    {"test_accuracy_sem", sem ? json(*sem) : json(nullptr)},
                    {"erm_test_accuracy", mean_of(erm_acc)},
                    {"gain_over_erm", mean_of(gains)},
                    {"gain_over_erm_sem", gsem ? json(*gsem) : json(nullptr)},
                    {"mean_margin", margin_n ? margin_sum / static_cast<double>(margin_n) : 0.0},
                    {"delta_mean", mean_of(all_deltas)},
                    {"delta_median", median(all_deltas)},
                    {"paired_margin_deltas", histogram_json(pooled)},
                    {"seeds_aggregated", outs.size()}}},
              {"buckets", buckets_json(margin_gain_by_bucket(target, base))}};
}

inline json oracle_report(const oracle::FiniteInstance& inst, const std::vector<std::int64_t>& grid,
                          const oracle::OracleResult& r, std::int64_t dro) {
  return json{{"points", inst.points.size()},
              {"hypotheses", inst.hypotheses.size()},
              {"delta", inst.delta},
              {"subset_size", inst.subset_size()},
              {"grid", grid},
              {"dual_dro_value", r.dual_dro_value},
              {"trilevel_value", r.trilevel_value},
              {"dro_value", dro},
              {"argmax_subset", oracle::subset_indices(r.argmax_subset)},
              {"trilevel_equals_dual", r.trilevel_value == r.dual_dro_value},
              {"weak_duality_holds", dro >= r.dual_dro_value}};
}

inline json run_oracle_experiment(const ExperimentSpec& spec) {
  namespace fs = std::filesystem;
  const auto inst = oracle::load_instance(spec.oracle.instance_path);
  const auto r = oracle::run_oracle(inst, spec.oracle.grid);
  const auto dro = oracle::dro_exhaustive(inst);
  const fs::path dir = fs::path(spec.output_dir) / "oracle";
  fs::create_directories(dir);
  std::ostringstream table;
  oracle::write_subset_table(table, r);
  write_text_file((dir / "subsets.csv").string(), table.str());
  auto rep = oracle_report(inst, spec.oracle.grid, r, dro);
  write_text_file((dir / "config.json").string(), dump(to_json(spec)));
  write_text_file((dir / "report.json").string(), dump(rep));
  return rep;
}

// Runs every seed, writing per-seed artifacts as each finishes so that an
// abort leaves the completed seeds on disk. jobs > 1 runs seeds concurrently;
// each seed owns its random streams, so results do not depend on `jobs`.
inline ExperimentOutcome run_experiment(const ExperimentSpec& spec) {
  namespace fs = std::filesystem;
  spec.validate();
  ExperimentOutcome out;
  if (spec.variant == Variant::Oracle) {
    out.aggregate = run_oracle_experiment(spec);
    return out;
  }
  const fs::path vdir = fs::path(spec.output_dir) / to_string(spec.variant);
  fs::create_directories(vdir);
  auto seed_dir = [&](std::uint64_t s) { return vdir / std::to_string(s); };
  for (auto s : spec.seeds) {
    fs::create_directories(seed_dir(s));
    write_text_file((seed_dir(s) / "config.json").string(), dump(to_json(seed_echo(spec, s))));
  }
  out.seeds.resize(spec.seeds.size());
  for (std::size_t start = 0; start < spec.seeds.size(); start += spec.jobs) {
    const std::size_t end = std::min(spec.seeds.size(), start + spec.jobs);
    std::vector<std::future<SeedOutcome>> futs;
    for (std::size_t k = start; k < end; ++k)
      futs.push_back(std::async(spec.jobs > 1 ? std::launch::async : std::launch::deferred,
                                [&spec, k] { return run_seed(spec, spec.seeds[k]); }));
    std::exception_ptr first_error;
    for (std::size_t k = start; k < end; ++k) {
      try {
        out.seeds[k] = futs[k - start].get();
        write_seed_artifacts(spec, out.seeds[k], seed_dir(spec.seeds[k]));
      } catch (...) {
        if (!first_error) first_error = std::current_exception();
      }
    }
    if (first_error) std::rethrow_exception(first_error);
  }
  out.aggregate = aggregate_report(spec, out.seeds);
  write_text_file((vdir / "report.json").string(), dump(out.aggregate));
  Histogram h;
  h.lo = out.aggregate["aggregate"]["paired_margin_deltas"]["lo"].get<double>();
  h.width = out.aggregate["aggregate"]["paired_margin_deltas"]["width"].get<double>();
  h.counts = out.aggregate["aggregate"]["paired_margin_deltas"]["counts"].get<std::vector<std::size_t>>();
  std::ostringstream hs, bs;
  write_histogram_csv(hs, h);
  std::vector<MarginRecord> t, b;
  for (const auto& o : out.seeds) {
    t.insert(t.end(), o.eval.margins.begin(), o.eval.margins.end());
    b.insert(b.end(), o.erm_eval.margins.begin(), o.erm_eval.margins.end());
  }
  write_buckets_csv(bs, margin_gain_by_bucket(t, b));
  write_text_file((vdir / "histogram.csv").string(), hs.str());
  write_text_file((vdir / "buckets.csv").string(), bs.str());
  return out;
}

// ---- compare -------------------------------------------------------------

inline int variant_rank(const std::string& v) {
  static const std::vector<std::string> order{"erm", "lrw_easy", "lrw_random", "lrw_hard", "lrwopt"};
  auto it = std::find(order.begin(), order.end(), v);
  return it == order.end() ? static_cast<int>(order.size()) : static_cast<int>(it - order.begin());
}

struct ComparisonRow {
  std::string variant;
  double mean_accuracy = 0.0;
  double mean_gain = 0.0;
  std::optional<double> gain_sem;
  std::vector<double> gains;  // per seed, in seed order
};

struct Comparison {
  std::vector<ComparisonRow> rows;
  std::optional<OrderingVerdict> ordering;
  json combined;
};

// Accuracy gain over ERM per variant. The ERM accuracy comes from an `erm`
// report when one is supplied, otherwise from the baseline stored in each
// report. Reports must share the dataset recipe and seed list; identical
// duplicates are merged, conflicting reports for one variant are rejected.
inline Comparison compare_reports(const std::vector<json>& reports) {
  if (reports.empty()) throw std::invalid_argument("compare: no reports");
  for (std::size_t k = 0; k < reports.size(); ++k)
    for (const char* key : {"variant", "dataset", "seeds", "per_seed", "buckets"})
      if (!reports[k].contains(key))
        throw std::invalid_argument("compare: report " + std::to_string(k + 1) + " lacks '" + key + "'");
  const json& ds = reports[0]["dataset"];
  const json& seeds = reports[0]["seeds"];
  std::map<std::string, json> by_variant;
  for (std::size_t k = 0; k < reports.size(); ++k) {
    const auto& r = reports[k];
    if (r["dataset"] != ds) throw std::invalid_argument("compare: report " + std::to_string(k + 1) + " uses a different dataset recipe");
    if (r["seeds"] != seeds) throw std::invalid_argument("compare: report " + std::to_string(k + 1) + " uses a different seed list");
    const auto v = r["variant"].get<std::string>();
    auto [it, fresh] = by_variant.emplace(v, r);
    if (!fresh && it->second != r) throw std::invalid_argument("compare: conflicting reports for variant '" + v + "'");
  }
  std::vector<std::string> variants;
  for (const auto& [v, r] : by_variant) variants.push_back(v);
  std::sort(variants.begin(), variants.end(), [](const std::string& a, const std::string& b) {
    return variant_rank(a) != variant_rank(b) ? variant_rank(a) < variant_rank(b) : a < b;
  });
  auto seed_acc = [](const json& r, const char* key) {
    std::map<std::uint64_t, double> m;
    for (const auto& p : r["per_seed"]) m[p["seed"].get<std::uint64_t>()] = p[key].get<double>();
    return m;
  };
  std::optional<std::map<std::uint64_t, double>> erm_ref;
  if (by_variant.count("erm")) erm_ref = seed_acc(by_variant["erm"], "test_accuracy");

  Comparison c;
  json rows = json::array();
  for (const auto& v : variants) {
    const auto& r = by_variant[v];
    const auto acc = seed_acc(r, "test_accuracy");
    const auto base = erm_ref ? *erm_ref : seed_acc(r, "erm_test_accuracy");
    ComparisonRow row;
    row.variant = v;
    std::vector<double> accs;
    for (const auto& [s, a] : acc) {
      accs.push_back(a);
      row.gains.push_back(a - base.at(s));
    }
    row.mean_accuracy = mean_of(accs);
    row.mean_gain = mean_of(row.gains);
    row.gain_sem = standard_error(row.gains);
    rows.push_back(json{{"variant", v},
                        {"mean_accuracy", row.mean_accuracy},
                        {"mean_gain_over_erm", row.mean_gain},
                        {"gain_sem", row.gain_sem ? json(*row.gain_sem) : json(nullptr)},
                        {"gains", row.gains}});
    c.rows.push_back(std::move(row));
  }
  c.combined = json{{"dataset", ds}, {"seeds", seeds}, {"gains", rows}};
  if (by_variant.count("lrw_easy") && by_variant.count("lrw_random") && by_variant.count("lrw_hard")) {
    std::vector<SeedScores> sc{{"easy", seed_acc(by_variant["lrw_easy"], "test_accuracy")},
                               {"random", seed_acc(by_variant["lrw_random"], "test_accuracy")},
                               {"hard", seed_acc(by_variant["lrw_hard"], "test_accuracy")}};
    c.ordering = ordering_check(sc);
    json summ = json::array();
    for (const auto& s : c.ordering->summaries)
      summ.push_back(json{{"role", s.role}, {"mean", s.mean}, {"sem", s.sem ? json(*s.sem) : json(nullptr)}});
    c.combined["ordering"] = json{{"holds", c.ordering->holds},
                                  {"tie", c.ordering->tie},
                                  {"summaries", summ},
                                  {"hard_beats_random", c.ordering->hard_beats_random},
                                  {"random_beats_easy", c.ordering->random_beats_easy},
                                  {"hard_beats_easy", c.ordering->hard_beats_easy}};
  }
  json buckets = json::array();
  const auto& ref_buckets = by_variant[variants.front()]["buckets"];
  for (std::size_t b = 0; b < ref_buckets.size(); ++b) {
    json row{{"lo", ref_buckets[b]["lo"]}, {"hi", ref_buckets[b]["hi"]}};
    for (const auto& v : variants) {
      const auto& bk = by_variant[v]["buckets"];
      if (b < bk.size()) row[v] = json{{"count", bk[b]["count"]}, {"mean", bk[b]["mean"]}, {"sem", bk[b]["sem"]}};
    }
    buckets.push_back(row);
  }
  c.combined["buckets"] = buckets;
  return c;
}

inline std::string comparison_table(const Comparison& c) {
  std::ostringstream os;
  os << "variant,mean_accuracy,mean_gain_over_erm,gain_sem\n";
  for (const auto& r : c.rows)
    os << r.variant << ',' << detail::fmt_double(r.mean_accuracy) << ',' << detail::fmt_double(r.mean_gain) << ','
       << (r.gain_sem ? detail::fmt_double(*r.gain_sem) : "") << '\n';
  if (c.ordering)
    os << "ordering easy<random<hard: " << (c.ordering->holds ? "holds" : c.ordering->tie ? "tie" : "fails") << '\n';
  return os.str();
}

}  // namespace lrw
