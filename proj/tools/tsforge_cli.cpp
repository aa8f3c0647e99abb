// tsforge command line: design-space utilities, experiment pool, meta-learning.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsforge/design/space.hpp"
#include "tsforge/error.hpp"
#include "tsforge/harness/data.hpp"
#include "tsforge/harness/pool.hpp"
#include "tsforge/harness/report.hpp"
#include "tsforge/meta/features.hpp"
#include "tsforge/meta/predictor.hpp"
#include "tsforge/meta/rank.hpp"

namespace fs = std::filesystem;
using namespace tsforge;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kPartial = 3 };

struct Globals {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out_dir = ".";
};

struct DataArgs {
  bool synthetic = false;
  std::size_t synthetic_length = harness::kSyntheticLength;
  std::vector<std::string> files;  // id=path[,periodicity]
  std::string delimiter = ",";
};

void add_data_options(CLI::App* cmd, DataArgs& d) {
  cmd->add_flag("--synthetic", d.synthetic, "Use the six synthetic families (seeded by --seed)");
  cmd->add_option("--synthetic-length", d.synthetic_length, "Rows per synthetic dataset");
  cmd->add_option("--data", d.files, "Dataset file as id=path[,periodicity]")->take_all();
}

std::vector<harness::DatasetSpec> dataset_specs(const DataArgs& d, std::uint64_t seed) {
  std::vector<harness::DatasetSpec> specs;
  if (d.synthetic) specs = harness::synthetic_suite(seed, d.synthetic_length);
  for (const auto& item : d.files) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--data", "expected id=path, got '" + item + "'");
    harness::DatasetSpec s;
    s.id = item.substr(0, eq);
    std::string path = item.substr(eq + 1);
    if (const auto comma = path.rfind(','); comma != std::string::npos) {
      s.periodicity = std::stoul(path.substr(comma + 1));
      path.resize(comma);
    }
    s.path = path;
    specs.push_back(std::move(s));
  }
  if (specs.empty()) throw CLI::ValidationError("data", "give --synthetic or at least one --data");
  return specs;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::ofstream open_out(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  const auto path = fs::path(g.out_dir) / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

// One configuration per non-blank, non-comment line in the compact form.
std::vector<design::PipelineConfig> read_configs(const std::string& path) {
  const auto& space = design::DesignSpace::standard();
  std::vector<design::PipelineConfig> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    try {
      out.push_back(design::parse_config(space, line));
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(no) + ": " + e.what());
    }
  }
  if (out.empty()) throw DataError(path + ": no configurations");
  return out;
}

void write_configs(std::ostream& out, const std::vector<design::PipelineConfig>& configs) {
  const auto& space = design::DesignSpace::standard();
  for (const auto& c : configs) out << design::compact_text(space, c) << '\n';
}

std::vector<std::size_t> parse_horizons(const std::string& text) {
  std::vector<std::size_t> out;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos || std::stoul(item) == 0)
      throw CLI::ValidationError("--horizons", "bad horizon '" + item + "'");
    out.push_back(std::stoul(item));
  }
  if (out.empty()) throw CLI::ValidationError("--horizons", "empty list");
  return out;
}

// Mean normalized rank of each configuration over the ledger's rows.
std::vector<design::Trial> history_from_ledger(const std::string& path) {
  const auto ranks = meta::rank_normalize(harness::performance_matrix(harness::read_ledger(path)));
  const auto& space = design::DesignSpace::standard();
  std::vector<design::Trial> trials;
  for (std::size_t j = 0; j < ranks.configs.size(); ++j) {
    double s = 0.0;
    for (const auto& row : ranks.rank) s += row[j];
    trials.push_back({design::parse_config(space, ranks.config_text[j]), s / static_cast<double>(ranks.rank.size())});
  }
  return trials;
}

int cmd_enumerate(const Globals& g, bool count_only, std::size_t limit) {
  const auto& space = design::DesignSpace::standard();
  const auto& rules = design::default_rules();
  if (count_only) {
    std::cout << design::count_valid(space, rules) << '\n';
    return kOk;
  }
  auto out = open_out(g, "enumeration.txt");
  design::ConfigEnumerator it(space, rules);
  std::size_t n = 0;
  while (auto c = it.next()) {
    out << design::hash_hex(design::config_hash(space, *c)) << '\t' << design::compact_text(space, *c) << '\n';
    if (++n == limit) break;
  }
  std::cerr << n << " configurations written to " << (fs::path(g.out_dir) / "enumeration.txt").string() << '\n';
  return kOk;
}

int cmd_validate(const std::string& file) {
  const auto& space = design::DesignSpace::standard();
  const auto config = design::parse_config(space, read_file(file));
  const auto bad = design::violations(space, design::default_rules(), config);
  if (bad.empty()) {
    std::cout << "valid " << design::hash_hex(design::config_hash(space, config)) << '\n';
    return kOk;
  }
  for (const auto& reason : bad) std::cout << "invalid: " << reason << '\n';
  return kData;
}

int cmd_sample(const Globals& g, bool guided, std::size_t n, const std::string& history) {
  const auto& space = design::DesignSpace::standard();
  const auto& rules = design::default_rules();
  std::vector<design::PipelineConfig> configs;
  if (guided) {
    const auto trials = history.empty() ? std::vector<design::Trial>{} : history_from_ledger(history);
    configs = design::sample_guided(space, rules, trials, n, g.seed);
  } else {
    std::vector<design::PipelineConfig> exclude;
    if (!history.empty())
      for (const auto& t : history_from_ledger(history)) exclude.push_back(t.config);
    configs = design::sample_random(space, rules, n, g.seed, exclude);
  }
  auto out = open_out(g, "configs.txt");
  write_configs(out, configs);
  std::cerr << configs.size() << " configurations written\n";
  return kOk;
}

int cmd_run(const Globals& g, const DataArgs& d, const std::string& configs_file, const std::string& horizons,
            const std::string& budget_name, bool denormalize) {
  harness::PoolOptions opt;
  opt.jobs = std::max<std::size_t>(1, g.jobs);
  opt.seed = g.seed;
  if (budget_name == "desk") {
    opt.budget = harness::Budget::desk();
  } else if (budget_name != "full") {
    throw CLI::ValidationError("--budget", "expected desk or full");
  }
  opt.budget.denormalize = denormalize;
  fs::create_directories(g.out_dir);
  opt.ledger_path = (fs::path(g.out_dir) / "ledger.tsv").string();
  opt.on_commit = [](const harness::ExperimentRecord& r) {
    std::cerr << r.key.dataset_id << ' ' << design::hash_hex(r.key.config_hash) << " h=" << r.key.horizon << ' '
              << (r.status == harness::Status::ok ? "ok" : "failed: " + r.error) << '\n';
  };
  const auto configs = read_configs(configs_file);
  const auto result = harness::run_pool(dataset_specs(d, g.seed), configs, parse_horizons(horizons), opt);

  const auto records = harness::read_ledger(opt.ledger_path);
  auto ranks = open_out(g, "ranks.tsv");
  meta::write_rank_table(ranks, records);
  std::cerr << "ran " << result.ran << ", skipped " << result.skipped << ", failed " << result.failed << '\n';
  return result.failed > 0 ? kPartial : kOk;
}

int cmd_meta_extract(const Globals& g, const DataArgs& d) {
  std::vector<std::pair<std::string, meta::MetaFeatureVector>> rows;
  for (const auto& spec : dataset_specs(d, g.seed)) rows.emplace_back(spec.id, meta::dataset_features(harness::ingest(spec)));
  auto out = open_out(g, "features.tsv");
  meta::write_features(out, rows);
  std::cerr << rows.size() << " feature rows written\n";
  return kOk;
}

std::map<std::string, meta::MetaFeatureVector> load_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::map<std::string, meta::MetaFeatureVector> out;
  for (auto& [id, f] : meta::read_features(in)) out.emplace(id, std::move(f));
  return out;
}

int cmd_meta_train(const Globals& g, const std::string& ledger, const std::string& features, std::size_t horizon,
                   bool resample, bool all_pl) {
  const auto feats = load_features(features);
  const auto ranks = meta::rank_normalize(harness::performance_matrix(harness::read_ledger(ledger)));
  const auto samples = meta::build_samples(ranks, feats, horizon, all_pl);
  if (samples.empty()) throw DataError("no ledger rows match the features and horizon");
  meta::MetaOptions opt;
  opt.resample = resample;
  opt.all_horizons = all_pl;
  opt.seed = g.seed;
  meta::MetaPredictor model(feats.begin()->second.values.size(), opt);
  const auto r = meta::train_meta(model, samples);
  auto out = open_out(g, "meta.json");
  out << model.to_json() << '\n';
  std::cerr << samples.size() << " samples, " << r.epochs << " epochs, best epoch " << r.best_epoch
            << ", val loss " << r.best_val_loss << ", train corr " << r.train_correlation << '\n';
  return kOk;
}

int cmd_recommend(const Globals& g, const DataArgs& d, const std::string& model_path, const std::string& features,
                  const std::string& dataset, const std::string& candidates, std::size_t n_random, std::size_t horizon,
                  std::size_t k) {
  const auto model = meta::MetaPredictor::from_json(read_file(model_path));
  std::vector<double> f;
  std::string id;
  if (!features.empty()) {
    const auto feats = load_features(features);
    if (feats.empty()) throw DataError(features + ": no rows");
    const auto it = dataset.empty() ? feats.begin() : feats.find(dataset);
    if (it == feats.end()) throw DataError("dataset '" + dataset + "' not in " + features);
    id = it->first;
    f = it->second.values;
  } else {
    const auto specs = dataset_specs(d, g.seed);
    auto it = std::find_if(specs.begin(), specs.end(), [&](const auto& s) { return dataset.empty() || s.id == dataset; });
    if (it == specs.end()) throw DataError("dataset '" + dataset + "' not given");
    id = it->id;
    f = meta::dataset_features(harness::ingest(*it)).values;
  }
  const auto pool = candidates.empty()
                        ? design::sample_random(design::DesignSpace::standard(), design::default_rules(), n_random, g.seed)
                        : read_configs(candidates);
  const auto recs = meta::recommend(*model, f, horizon, pool, k);
  auto out = open_out(g, "recommendations.tsv");
  out << "rank\tconfig_hash\tscore\tconfig\n";
  const auto& space = design::DesignSpace::standard();
  for (std::size_t i = 0; i < recs.size(); ++i) {
    std::ostringstream line;
    line << i + 1 << '\t' << design::hash_hex(recs[i].hash) << '\t' << recs[i].score << '\t'
         << design::compact_text(space, recs[i].config) << '\n';
    out << line.str();
    std::cout << line.str();
  }
  std::cerr << "dataset " << id << ": " << recs.size() << " of " << pool.size() << " candidates\n";
  return kOk;
}

int cmd_report(const Globals& g, const std::string& ledger, const std::string& group) {
  const auto report = harness::build_report(harness::read_ledger(ledger), harness::parse_grouping(group));
  auto out = open_out(g, "report.tsv");
  harness::write_report(out, report);
  for (const auto& n : report.notices) std::cerr << n << '\n';
  std::cerr << report.rows.size() << " rows written\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tsforge: forecasting pipeline design space, experiment pool and meta-learned recommendation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Global seed")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads for the pool")->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "Directory for output files")->capture_default_str();

  bool count_only = false;
  std::size_t limit = 0;
  auto* enumerate = app.add_subcommand("enumerate", "List valid configurations (hash and compact text)");
  enumerate->add_flag("--count", count_only, "Print only the number of valid configurations");
  enumerate->add_option("--limit", limit, "Stop after this many (0 = all)");

  std::string file;
  auto* validate = app.add_subcommand("validate", "Check a key=value configuration file");
  validate->add_option("file", file)->required();

  bool random = false, guided = false;
  std::size_t n = 10;
  std::string history;
  auto* sample = app.add_subcommand("sample", "Sample configurations into configs.txt");
  auto* r_flag = sample->add_flag("--random", random, "Uniform over valid configurations");
  sample->add_flag("--guided", guided, "Tree-structured Parzen proposals from --history")->excludes(r_flag);
  sample->add_option("-n", n, "Number of configurations")->capture_default_str();
  sample->add_option("--history", history, "Ledger whose mean ranks guide (or are excluded from) sampling");

  DataArgs run_data;
  std::string configs, horizons = "12,24", budget = "desk";
  bool denormalize = false;
  auto* run = app.add_subcommand("run", "Train every (dataset, config, horizon) cell into ledger.tsv");
  run->add_option("--configs", configs, "File with one configuration per line")->required();
  add_data_options(run, run_data);
  run->add_option("--horizons", horizons, "Comma-separated horizons")->capture_default_str();
  run->add_option("--budget", budget, "desk or full")->capture_default_str();
  run->add_flag("--denormalized", denormalize, "Score on the original data scale");

  auto* meta_cmd = app.add_subcommand("meta", "Meta-learning");
  meta_cmd->require_subcommand(1);
  DataArgs extract_data;
  auto* extract = meta_cmd->add_subcommand("extract", "Write meta-features of each dataset's train split");
  add_data_options(extract, extract_data);
  std::string ledger, features;
  std::size_t horizon = 24;
  bool resample = false, all_pl = false;
  auto* mtrain = meta_cmd->add_subcommand("train", "Fit the rank predictor into meta.json");
  mtrain->add_option("--ledger", ledger)->required();
  mtrain->add_option("--features", features)->required();
  mtrain->add_option("--horizon", horizon)->capture_default_str();
  mtrain->add_flag("--resample", resample, "Equalize samples per dataset");
  mtrain->add_flag("--all-pl", all_pl, "Pool every horizon, horizon as an input");

  DataArgs rec_data;
  std::string model, candidates, rec_features, dataset;
  std::size_t n_random = 256, k = 5, rec_horizon = 24;
  auto* recommend = app.add_subcommand("recommend", "Rank candidate configurations for a dataset");
  recommend->add_option("--model", model)->required();
  recommend->add_option("--candidates", candidates, "Candidate file (default: random sample of --pool)");
  recommend->add_option("--pool", n_random, "Random candidates when no file is given")->capture_default_str();
  recommend->add_option("--features", rec_features, "Precomputed features.tsv");
  recommend->add_option("--dataset", dataset, "Dataset id to recommend for");
  add_data_options(recommend, rec_data);
  recommend->add_option("--horizon", rec_horizon)->capture_default_str();
  recommend->add_option("-k", k, "Number of recommendations")->capture_default_str();

  std::string rep_ledger, group = "dataset_horizon";
  auto* report = app.add_subcommand("report", "Per-choice MSE statistics into report.tsv");
  report->add_option("--ledger", rep_ledger)->required();
  report->add_option("--group", group, "dataset_horizon, dataset or all")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*enumerate) return cmd_enumerate(g, count_only, limit);
    if (*validate) return cmd_validate(file);
    if (*sample) {
      if (!random && !guided) throw CLI::ValidationError("sample", "give --random or --guided");
      return cmd_sample(g, guided, n, history);
    }
    if (*run) return cmd_run(g, run_data, configs, horizons, budget, denormalize);
    if (*extract) return cmd_meta_extract(g, extract_data);
    if (*mtrain) return cmd_meta_train(g, ledger, features, horizon, resample, all_pl);
    if (*recommend) return cmd_recommend(g, rec_data, model, rec_features, dataset, candidates, n_random, rec_horizon, k);
    if (*report) return cmd_report(g, rep_ledger, group);
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const tsforge::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
