#include <CLI11.hpp>

#include <iostream>

#include "pidcon/commands.hpp"

namespace {

std::vector<std::size_t> parse_layers(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t comma = s.find(',', pos);
    const std::string item = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw pidcon::ValidationError("--layers: expected a comma-separated list of integers, got '" + s + "'");
    }
    out.push_back(std::stoul(item));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-informed compositional operator networks"};
  app.require_subcommand(1);

  pidcon::CommandOptions o;
  o.log = &std::cerr;
  std::string config, mode, out, data, references, checkpoint, resume, layers;
  std::uint64_t seed = 0;
  std::size_t n = 0;

  auto common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config, "Run configuration (JSON)");
    cmd->add_option("--seed", seed, "Master seed");
    cmd->add_option("--out", out, "Output file or directory");
    cmd->add_option("--mode", mode, "Training mode")->check(CLI::IsMember({"physics", "data"}));
    cmd->add_flag("--quiet", o.quiet, "Suppress progress output");
  };

  auto* gen = app.add_subcommand("generate", "Sample boundary-condition realizations");
  common(gen);
  gen->add_option("--n", n, "Number of realizations");

  auto* orc = app.add_subcommand("oracle", "Finite-difference reference solutions");
  common(orc);
  orc->add_option("--data", data, "Realization file")->required();

  auto* trn = app.add_subcommand("train", "Train an operator network");
  common(trn);
  trn->add_option("--data", data, "Realization file")->required();
  trn->add_option("--references", references, "Reference fields (validation; data mode)");
  trn->add_option("--resume", resume, "Checkpoint to resume from");

  auto* evl = app.add_subcommand("evaluate", "Relative L2 errors of a trained model");
  common(evl);
  evl->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  evl->add_option("--data", data, "Realization file")->required();
  evl->add_option("--references", references, "Reference fields")->required();
  evl->add_option("--split", o.split, "all, train, val or test")->check(CLI::IsMember({"all", "train", "val", "test"}));

  auto* grd = app.add_subcommand("gridsearch", "Grid search over learning rate and sampling ratio");
  common(grd);
  grd->add_option("--data", data, "Realization file")->required();
  grd->add_option("--references", references, "Reference fields for validation");

  auto* abl = app.add_subcommand("ablate", "Operator-layer count study");
  common(abl);
  abl->add_option("--data", data, "Realization file")->required();
  abl->add_option("--references", references, "Reference fields")->required();
  abl->add_option("--layers", layers, "Comma-separated layer counts, e.g. 1,2,3,4");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    auto given = [&](const char* flag) {
      for (auto* sub : app.get_subcommands()) {
        const auto* opt = sub->get_option_no_throw(flag);
        if (opt && opt->count() > 0) return true;
      }
      return false;
    };
    if (!config.empty()) o.config = config;
    if (given("--seed")) o.seed = seed;
    if (given("--n")) o.n = n;
    if (!mode.empty()) o.mode = pidcon::parse_mode(mode);
    o.out = out;
    o.data = data;
    o.references = references;
    o.checkpoint = checkpoint;
    o.resume = resume;
    if (!layers.empty()) o.layers = parse_layers(layers);

    if (gen->parsed()) pidcon::cmd_generate(o);
    else if (orc->parsed()) pidcon::cmd_oracle(o);
    else if (trn->parsed()) pidcon::cmd_train(o);
    else if (evl->parsed()) pidcon::cmd_evaluate(o);
    else if (grd->parsed()) pidcon::cmd_gridsearch(o);
    else if (abl->parsed()) pidcon::cmd_ablate(o);
    return 0;
  } catch (const pidcon::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const pidcon::IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
