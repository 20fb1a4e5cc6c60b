// pyrofocus command-line entry point.
//
//   pyrofocus train    --spec exp.json [overrides]   run one experiment
//   pyrofocus compare  --spec exp.json [overrides]   run all arms, compare
//   pyrofocus diagnose TRACE.csv [--t F] [--out DIR] recompute summaries
//
// Exit codes: 0 success, 1 configuration error, 2 training divergence.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pyrofocus/pyrofocus.hpp"

namespace {

struct CommonArgs {
  std::string spec_path;
  pyrofocus::CliOverrides overrides;
  std::optional<std::uint64_t> seed_flag;
  std::optional<int> iters;
  std::optional<double> lr, w, delta, gamma, alpha, t;
  std::optional<std::string> mode, loss, out;
};

void add_common_flags(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--spec", args.spec_path, "experiment spec file (JSON)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", args.seed_flag, "stream seed")
      ->envname("PYROFOCUS_SEED");
  cmd->add_option("--iters", args.iters, "training iterations");
  cmd->add_option("--lr", args.lr, "initial learning rate");
  cmd->add_option("--w", args.w, "alpha-gamma coupling constant w");
  cmd->add_option("--delta", args.delta, "clamp half-width delta");
  cmd->add_option("--gamma", args.gamma, "base gamma");
  cmd->add_option("--alpha", args.alpha, "base alpha");
  cmd->add_option("--mode", args.mode, "sampling mode: all-level|level-wise|per-sample");
  cmd->add_option("--loss", args.loss, "loss kind: fl|hpf|pfqfl|pfvfl");
  cmd->add_option("--t", args.t, "hard-case loss threshold (default: auto)");
  cmd->add_option("--out", args.out, "output directory");
}

pyrofocus::ExperimentSpec build_spec(const CommonArgs& args) {
  pyrofocus::ExperimentSpec spec;
  if (!args.spec_path.empty()) {
    spec = pyrofocus::load_spec(args.spec_path);
  }
  pyrofocus::CliOverrides o;
  o.seed = args.seed_flag;
  o.iters = args.iters;
  o.lr = args.lr;
  o.w = args.w;
  o.delta = args.delta;
  o.gamma = args.gamma;
  o.alpha = args.alpha;
  o.t = args.t;
  o.mode = args.mode;
  o.loss = args.loss;
  o.out = args.out;
  pyrofocus::apply_overrides(spec, o);
  return spec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hierarchical progressive focus trainer and diagnostics"};
  app.require_subcommand(1);

  CommonArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "run one experiment arm");
  add_common_flags(train_cmd, train_args);

  CommonArgs compare_args;
  CLI::App* compare_cmd =
      app.add_subcommand("compare", "run all arms on the identical seeded stream");
  add_common_flags(compare_cmd, compare_args);

  std::string trace_path;
  std::optional<double> diag_t;
  std::string diag_out = "out";
  std::string diag_name = "diagnose";
  CLI::App* diag_cmd =
      app.add_subcommand("diagnose", "recompute summaries from a stored trace CSV");
  diag_cmd->add_option("trace", trace_path, "trace CSV path")->required();
  diag_cmd->add_option("--t", diag_t,
                       "threshold the trace was recorded with (informational)");
  diag_cmd->add_option("--out", diag_out, "output directory");
  diag_cmd->add_option("--name", diag_name, "output file prefix");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      pyrofocus::run_train(build_spec(train_args), std::cout);
    } else if (compare_cmd->parsed()) {
      pyrofocus::run_compare(build_spec(compare_args), std::cout);
    } else {
      pyrofocus::run_diagnose(trace_path, diag_out, diag_name, std::cout);
    }
  } catch (const pyrofocus::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
