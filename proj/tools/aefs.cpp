// aefs: synthetic data, vocabulary preparation, training, method comparison
// and parameter accounting for adaptive early feature selection.
//
// Exit codes: 0 ok, 1 configuration/usage, 2 data, 3 numeric abort.

#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "aefs/commands.hpp"

namespace {

// Config keys that take a value, exposed as --key-with-dashes.
const std::vector<std::string> kValueKeys{
    "method",     "mode",     "batch_size", "r",          "d1",         "d2",
    "max_epochs", "lr",       "seed",       "split_seed", "pretrain_epochs",
    "enable_eal", "enable_pal", "enable_topk_reweight", "backbone_main", "backbone_aux",
    "hidden_dims", "n_cross_layers", "min_freq", "data", "schema", "format", "informative"};

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

struct ConfigFlags {
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> values;
  std::vector<std::string> sets;  // --set key=value
  bool no_eal = false;
  bool no_pal = false;
  bool no_reweight = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key=value config file");
    values.reserve(kValueKeys.size());
    for (const auto& k : kValueKeys) values.emplace_back(k, "");
    for (auto& [k, v] : values) app->add_option("--" + dashed(k), v, "override config key " + k);
    app->add_option("--set", sets, "override any config key (key=value)");
    app->add_flag("--no-eal", no_eal, "disable the embedding alignment loss");
    app->add_flag("--no-pal", no_pal, "disable the prediction alignment loss");
    app->add_flag("--no-topk-reweight", no_reweight, "scale by raw scores instead of renormalized weights");
  }

  // File first, then flags; flags win.
  aefs::RunConfig resolve() const {
    aefs::RunConfig c;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw aefs::ConfigError("cannot read config '" + config_path + "'");
      aefs::parse_config(in, c);
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw aefs::ConfigError("--set expects key=value, got '" + s + "'");
      aefs::apply_setting(c, aefs::Schema::trim(s.substr(0, eq)), aefs::Schema::trim(s.substr(eq + 1)));
    }
    for (const auto& [k, v] : values) {
      if (!v.empty()) aefs::apply_setting(c, k, v);
    }
    if (no_eal) c.train.enable_eal = false;
    if (no_pal) c.train.enable_pal = false;
    if (no_reweight) c.train.enable_topk_reweight = false;
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive early feature selection for CTR models"};
  app.require_subcommand(1);

  aefs::SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a planted-signal synthetic dataset");
  synth_cmd->add_option("--out", synth.out, "output directory");
  synth_cmd->add_option("--seed", synth.spec.teacher_seed, "teacher and sampling seed");
  synth_cmd->add_option("--fields", synth.spec.n_fields, "number of fields");
  synth_cmd->add_option("--informative", synth.spec.n_informative, "number of label-bearing fields");
  synth_cmd->add_option("--records", synth.spec.n_records, "number of records");
  synth_cmd->add_option("--vocab", synth.spec.default_vocab, "categories per field");
  synth_cmd->add_option("--teacher-scale", synth.spec.teacher_scale, "standard deviation of the teacher logit");

  aefs::PrepareOptions prepare;
  ConfigFlags prepare_flags;
  auto* prepare_cmd = app.add_subcommand("prepare", "split the dataset and build the vocabulary");
  prepare_flags.attach(prepare_cmd);
  prepare_cmd->add_option("--out", prepare.out, "output root (default $AEFS_OUT_ROOT or ./runs)");

  aefs::TrainOptions train;
  ConfigFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train and evaluate one method");
  train_flags.attach(train_cmd);
  train_cmd->add_option("--out", train.out, "output root (default $AEFS_OUT_ROOT or ./runs)");
  train_cmd->add_flag("--force", train.force, "replace an existing run directory");
  train_cmd->add_flag("--dump-selections", train.dump_selections, "write per-instance test selections");
  train_cmd->add_flag("-v,--verbose", train.verbose, "log every epoch");

  aefs::CompareOptions compare;
  ConfigFlags compare_flags;
  std::vector<std::string> methods{"none", "adafs", "aefs"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  auto* compare_cmd = app.add_subcommand("compare", "train several methods over several seeds");
  compare_flags.attach(compare_cmd);
  compare_cmd->add_option("--methods", methods, "methods, optionally with a variant (aefs:no-align)")->delimiter(',');
  compare_cmd->add_option("--seeds", seeds, "training seeds")->delimiter(',');
  compare_cmd->add_option("--out", compare.out, "output root (default $AEFS_OUT_ROOT or ./runs)");
  compare_cmd->add_flag("--force", compare.force, "replace an existing report directory");
  compare_cmd->add_flag("-v,--verbose", compare.verbose, "log every epoch");

  aefs::ParamsOptions params;
  std::string params_r = "1/2";
  auto* params_cmd = app.add_subcommand("params", "print embedding parameter accounting");
  params_cmd->add_option("--vocab", params.vocab, "vocabulary sizes file");
  params_cmd->add_option("--total-ids", params.total_ids, "total feature ids, instead of --vocab");
  params_cmd->add_option("--d1", params.d1, "main embedding size");
  params_cmd->add_option("--d2", params.d2, "auxiliary embedding size");
  params_cmd->add_option("--r", params_r, "keep fraction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : aefs::kExitConfig;
  }

  try {
    if (*synth_cmd) return aefs::cmd_synth(synth, std::cout);
    if (*prepare_cmd) {
      prepare.config = prepare_flags.resolve();
      return aefs::cmd_prepare(prepare, std::cout);
    }
    if (*train_cmd) {
      train.config = train_flags.resolve();
      return aefs::cmd_train(train, std::cout);
    }
    if (*compare_cmd) {
      compare.config = compare_flags.resolve();
      compare.methods = methods;
      compare.seeds = seeds;
      return aefs::cmd_compare(compare, std::cout);
    }
    if (*params_cmd) {
      try {
        params.r = aefs::Rational::parse(params_r);
      } catch (const aefs::Error& e) {
        throw aefs::ConfigError(std::string("--r: ") + e.what());
      }
      return aefs::cmd_params(params, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "aefs: " << e.what() << '\n';
    return aefs::exit_code_for(e);
  }
  return aefs::kExitConfig;
}
