// lrw_cli: dataset generation, experiment runs, report comparison and the
// exhaustive finite-instance oracle.
//
// Exit codes: 0 success, 1 invalid input, 2 training aborted, 3 I/O failure.

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lrw/experiment.hpp"

namespace {

using lrw::json;

enum class Kind { Number, Integer, String, Bool, IntList };

struct Override {
  const char* flag;
  const char* pointer;
  Kind kind;
  const char* help;
};

const std::vector<Override> kDatasetFlags{
    {"--generator", "/dataset/generator", Kind::String, "gaussian, moons or file"},
    {"--n-per-class", "/dataset/n_per_class", Kind::Integer, "gaussian: instances per class"},
    {"--n", "/dataset/n", Kind::Integer, "moons: number of instances"},
    {"--classes", "/dataset/classes", Kind::Integer, "gaussian: number of classes"},
    {"--dim", "/dataset/dim", Kind::Integer, "gaussian: feature dimension"},
    {"--separation", "/dataset/separation", Kind::Number, "gaussian: distance between class means"},
    {"--noise-std", "/dataset/noise_std", Kind::Number, "moons: coordinate noise"},
    {"--dataset-path", "/dataset/path", Kind::String, "file: training CSV"},
    {"--test-path", "/dataset/test_path", Kind::String, "file: test CSV"},
    {"--data-seed", "/dataset/seed", Kind::Integer, "base seed of the generator"},
    {"--noise-kind", "/dataset/noise/kind", Kind::String, "uniform_flip or instance_dependent"},
    {"--noise-rate", "/dataset/noise/rate", Kind::Number, "label noise rate in [0, 0.5]"},
    {"--noise-seed", "/dataset/noise/seed", Kind::Integer, "base seed of the label noise"},
    {"--noise-scope", "/dataset/noise_scope", Kind::String, "all or train_split"},
    {"--skew-ratio", "/dataset/skew/ratio", Kind::Number, "majority/minority ratio (>= 1)"},
    {"--skew-seed", "/dataset/skew/seed", Kind::Integer, "base seed of the subsampling"},
    {"--test-n-per-class", "/dataset/test_n_per_class", Kind::Integer, "gaussian: test instances per class"},
    {"--test-n", "/dataset/test_n", Kind::Integer, "moons: test instances"},
};

const std::vector<Override> kRunFlags{
    {"--variant", "/variant", Kind::String, "erm, lrw_hard, lrw_easy, lrw_random, lrwopt or oracle"},
    {"--seeds", "/seeds", Kind::IntList, "comma separated run seeds"},
    {"--output-dir", "/output_dir", Kind::String, "artifact directory"},
    {"--jobs", "/jobs", Kind::Integer, "seeds run concurrently"},
    {"--delta", "/train/delta", Kind::Number, "validation fraction"},
    {"--inner-steps", "/train/inner_steps", Kind::Integer, "classifier steps per outer step"},
    {"--lr-splitter", "/train/lr_splitter", Kind::Number, "splitter learning rate"},
    {"--lr-meta", "/train/lr_meta", Kind::Number, "meta-network learning rate"},
    {"--lr-classifier", "/train/lr_classifier", Kind::Number, "classifier learning rate"},
    {"--momentum", "/train/momentum", Kind::Number, "SGD momentum"},
    {"--reg-ratio-weight", "/train/reg_ratio_weight", Kind::Number, "weight of the split-ratio regulariser"},
    {"--reg-label-weight", "/train/reg_label_weight", Kind::Number, "weight of the label-balance regulariser"},
    {"--batch-train", "/train/batch_train", Kind::Integer, "training batch size"},
    {"--batch-val", "/train/batch_val", Kind::Integer, "validation batch size"},
    {"--max-epochs", "/train/max_epochs", Kind::Integer, "epoch budget (includes warm start)"},
    {"--warm-start-epochs", "/train/warm_start_epochs", Kind::Integer, "ERM epochs before the splitter starts"},
    {"--early-stop", "/train/early_stop", Kind::String, "off or gap"},
    {"--margin-epochs", "/train/margin_epochs", Kind::Integer, "ERM epochs of the margin pass (0: max_epochs)"},
    {"--activation", "/train/activation", Kind::String, "relu or tanh"},
    {"--meta-uses-label", "/train/meta_uses_label", Kind::Bool, "feed the label to the meta-network"},
    {"--shared-features", "/train/shared_features", Kind::Bool, "meta/splitter read classifier features"},
    {"--oracle-instance", "/oracle/instance", Kind::String, "oracle: instance file"},
    {"--oracle-grid", "/oracle/grid", Kind::IntList, "oracle: weight grid"},
};

json parse_value(const Override& o, const std::string& raw) {
  auto bad = [&](const std::string& what) { return lrw::FieldError(o.flag, "expected " + what + ", got '" + raw + "'"); };
  switch (o.kind) {
    case Kind::String:
      return raw;
    case Kind::Bool:
      if (raw == "true" || raw == "1") return true;
      if (raw == "false" || raw == "0") return false;
      throw bad("true or false");
    case Kind::Number:
    case Kind::Integer: {
      json v;
      try {
        v = json::parse(raw);
      } catch (const json::exception&) {
        throw bad("a number");
      }
      if (o.kind == Kind::Integer && !v.is_number_unsigned()) throw bad("a non-negative integer");
      if (!v.is_number()) throw bad("a number");
      return v;
    }
    case Kind::IntList: {
      json a = json::array();
      std::stringstream ss(raw);
      for (std::string tok; std::getline(ss, tok, ',');) {
        json v;
        try {
          v = json::parse(tok);
        } catch (const json::exception&) {
          throw bad("comma separated integers");
        }
        if (!v.is_number_integer()) throw bad("comma separated integers");
        a.push_back(v);
      }
      return a;
    }
  }
  return nullptr;
}

struct FlagSet {
  std::map<std::string, std::string> values;

  void add(CLI::App* app, const std::vector<Override>& table) {
    for (const auto& o : table) app->add_option(o.flag, values[o.flag], o.help);
  }

  void apply(CLI::App* app, const std::vector<Override>& table, json& doc) const {
    for (const auto& o : table) {
      if (app->count(o.flag) == 0) continue;
      doc[json::json_pointer(o.pointer)] = parse_value(o, values.at(o.flag));
    }
  }
};

json load_base(const std::string& path) { return path.empty() ? json::object() : lrw::read_json_file(path); }

int cmd_gen_data(CLI::App* app, const FlagSet& flags, const std::string& config, const std::string& out,
                 const std::string& test_out, std::uint64_t seed) {
  json doc = load_base(config);
  if (!doc.contains("dataset")) doc = json{{"dataset", doc}};
  flags.apply(app, kDatasetFlags, doc);
  auto recipe = lrw::dataset_recipe_from_json(doc["dataset"]);
  if (recipe.generator == "file") throw lrw::FieldError("dataset.generator", "gen-data needs a generator");
  if (recipe.noise_scope != "all") throw lrw::FieldError("dataset.noise_scope", "gen-data applies noise to all rows");
  const auto data = lrw::realize(recipe, seed);
  lrw::save_csv(data.train, out);
  if (!test_out.empty()) lrw::save_csv(data.test, test_out);
  std::cout << "wrote " << data.train.size() << " rows to " << out << '\n';
  return 0;
}

int cmd_run(CLI::App* app, const FlagSet& flags, const std::string& config) {
  json doc = load_base(config);
  flags.apply(app, kDatasetFlags, doc);
  flags.apply(app, kRunFlags, doc);
  const auto spec = lrw::experiment_from_json(doc);
  const auto out = lrw::run_experiment(spec);
  if (spec.variant == lrw::Variant::Oracle) {
    std::cout << "dual_dro_value " << out.aggregate["dual_dro_value"] << "\ntrilevel_value "
              << out.aggregate["trilevel_value"] << "\ndro_value " << out.aggregate["dro_value"]
              << "\ntrilevel_equals_dual " << out.aggregate["trilevel_equals_dual"] << '\n';
    return 0;
  }
  const auto& a = out.aggregate["aggregate"];
  std::cout << "variant " << lrw::to_string(spec.variant) << " seeds " << spec.seeds.size() << "\ntest_accuracy "
            << lrw::detail::fmt_double(a["test_accuracy"].get<double>()) << "\nerm_test_accuracy "
            << lrw::detail::fmt_double(a["erm_test_accuracy"].get<double>()) << "\nreport "
            << (std::filesystem::path(spec.output_dir) / lrw::to_string(spec.variant) / "report.json").string() << '\n';
  return 0;
}

int cmd_compare(const std::vector<std::string>& paths, const std::string& out) {
  std::vector<json> reports;
  for (const auto& p : paths) reports.push_back(lrw::read_json_file(p));
  const auto c = lrw::compare_reports(reports);
  std::cout << lrw::comparison_table(c);
  if (!out.empty()) lrw::write_text_file(out, lrw::dump(c.combined));
  return 0;
}

std::vector<std::int64_t> parse_grid(const std::string& raw) {
  const Override o{"--grid", "", Kind::IntList, ""};
  std::vector<std::int64_t> g;
  for (const auto& v : parse_value(o, raw)) g.push_back(v.get<std::int64_t>());
  return g;
}

int cmd_oracle(const std::string& instance, const std::string& grid_raw, const std::string& out_dir,
               std::size_t random_count, double delta, std::uint64_t seed, const std::string& family) {
  const auto grid = parse_grid(grid_raw);
  if (!instance.empty()) {
    const auto inst = lrw::oracle::load_instance(instance);
    const auto r = lrw::oracle::run_oracle(inst, grid);
    const auto dro = lrw::oracle::dro_exhaustive(inst);
    const auto rep = lrw::oracle_report(inst, grid, r, dro);
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      std::ostringstream table;
      lrw::oracle::write_subset_table(table, r);
      lrw::write_text_file((std::filesystem::path(out_dir) / "subsets.csv").string(), table.str());
      lrw::write_text_file((std::filesystem::path(out_dir) / "report.json").string(), lrw::dump(rep));
    } else {
      lrw::oracle::write_subset_table(std::cout, r);
    }
    std::cout << "dual_dro_value " << r.dual_dro_value << "\ntrilevel_value " << r.trilevel_value << "\ndro_value "
              << dro << "\ntrilevel_equals_dual " << (r.trilevel_value == r.dual_dro_value ? "true" : "false") << '\n';
    return 0;
  }
  if (random_count == 0) throw std::invalid_argument("oracle: give --instance or --random");
  if (family != "covered" && family != "unconstrained")
    throw lrw::FieldError("--family", "expected covered or unconstrained");
  std::mt19937_64 rng(seed);
  std::size_t equal = 0, weak = 0;
  std::map<std::int64_t, std::size_t> gaps, tri_gaps;
  for (std::size_t k = 0; k < random_count; ++k) {
    const auto inst = family == "covered" ? lrw::oracle::covered_instance(rng, delta) : lrw::oracle::random_instance(rng, delta);
    const auto r = lrw::oracle::run_oracle(inst, grid);
    const auto dro = lrw::oracle::dro_exhaustive(inst);
    equal += r.trilevel_value == r.dual_dro_value;
    weak += dro >= r.dual_dro_value;
    ++gaps[dro - r.dual_dro_value];
    ++tri_gaps[r.trilevel_value - r.dual_dro_value];
  }
  std::cout << "instances " << random_count << "\ntrilevel_equals_dual " << equal << "\nweak_duality_holds " << weak
            << "\nduality_gap_histogram";
  for (const auto& [g, c] : gaps) std::cout << ' ' << g << ':' << c;
  std::cout << "\ntrilevel_minus_dual_histogram";
  for (const auto& [g, c] : tri_gaps) std::cout << ' ' << g << ':' << c;
  std::cout << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned reweighting experiments"};
  app.require_subcommand(1);

  FlagSet gen_flags, run_flags;
  std::string gen_config, gen_out, gen_test_out, run_config, compare_out, oracle_instance, oracle_out;
  std::string oracle_grid = "0,1,2,4", oracle_family = "covered";
  std::uint64_t gen_seed = 0, oracle_seed = 0;
  std::size_t oracle_random = 0;
  double oracle_delta = 0.5;
  std::vector<std::string> compare_paths;

  auto* gen = app.add_subcommand("gen-data", "Generate a dataset as CSV");
  gen->add_option("--config", gen_config, "JSON file with a dataset recipe");
  gen->add_option("--out", gen_out, "training CSV path")->required();
  gen->add_option("--test-out", gen_test_out, "clean test CSV path");
  gen->add_option("--seed", gen_seed, "run seed mixed into the recipe seeds");
  gen_flags.add(gen, kDatasetFlags);

  auto* run = app.add_subcommand("run", "Train a variant over a list of seeds and write reports");
  run->add_option("--config", run_config, "JSON experiment file; flags override it");
  run_flags.add(run, kDatasetFlags);
  run_flags.add(run, kRunFlags);

  auto* cmp = app.add_subcommand("compare", "Combine aggregate reports into gains over ERM");
  cmp->add_option("reports", compare_paths, "aggregate report.json files")->required();
  cmp->add_option("--out", compare_out, "write the combined JSON here");

  auto* orc = app.add_subcommand("oracle", "Exhaustive finite-instance objectives");
  orc->add_option("--instance", oracle_instance, "instance file");
  orc->add_option("--grid", oracle_grid, "weight grid, comma separated");
  orc->add_option("--output-dir", oracle_out, "write subsets.csv and report.json here");
  orc->add_option("--random", oracle_random, "evaluate this many random instances instead");
  orc->add_option("--delta", oracle_delta, "random instances: validation fraction");
  orc->add_option("--seed", oracle_seed, "random instances: generator seed");
  orc->add_option("--family", oracle_family, "random instances: covered or unconstrained");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(gen, gen_flags, gen_config, gen_out, gen_test_out, gen_seed);
    if (*run) return cmd_run(run, run_flags, run_config);
    if (*cmp) return cmd_compare(compare_paths, compare_out);
    if (*orc) return cmd_oracle(oracle_instance, oracle_grid, oracle_out, oracle_random, oracle_delta, oracle_seed,
                                oracle_family);
  } catch (const lrw::TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return 2;
  } catch (const lrw::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
