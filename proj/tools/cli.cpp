#include "cli.hpp"

#include <algorithm>

#include <CLI11.hpp>

#include "commands.hpp"

namespace dcem::cli {

namespace {

std::string find_config_path(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  return path;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    if (const auto path = find_config_path(args); !path.empty()) cfg = load_config(path);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  CLI::App app{"Differentiable cross-entropy method experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file; flags override its values");
  app.add_option("--seed", cfg.seed, "Seed for every random stream of the run");
  app.add_option("--output-dir", cfg.output_dir, "Artifact directory (default $DCEM_OUTPUT_ROOT/<command>)");

  auto* lml = app.add_subcommand("lml-proj", "Project scores onto the interior of the LML polytope");
  lml->add_option("--x", cfg.lml.x, "Comma-separated scores")->delimiter(',');
  lml->add_option("--k", cfg.lml.k);
  lml->add_option("--tau", cfg.lml.tau);

  auto* topk = app.add_subcommand("topk", "Hard indicator of the k largest scores");
  topk->add_option("--x", cfg.lml.x, "Comma-separated scores")->delimiter(',');
  topk->add_option("--k", cfg.lml.k);

  auto& o = cfg.optimize;
  auto* opt = app.add_subcommand("optimize", "Run cem or dcem on a built-in objective");
  opt->add_option("--objective", o.objective, "quadratic | shifted_quadratic | multimodal");
  opt->add_option("--method", o.method, "dcem | cem");
  opt->add_option("--dim", o.dim);
  opt->add_option("--theta", o.theta, "Center of shifted_quadratic");
  opt->add_option("--N", o.num_samples, "Samples per iteration");
  opt->add_option("--k", o.num_elites, "Elites per iteration");
  opt->add_option("--T", o.iterations, "Iterations");
  opt->add_option("--tau", o.tau, "Temperature; 0 with --method cem");
  opt->add_option("--mu0", o.mu0);
  opt->add_option("--sigma0", o.sigma0);
  opt->add_option("--normalize", o.normalize);
  opt->add_option("--return-mode", o.return_mode, "mean | best_sample");

  auto& r = cfg.regress;
  auto* reg = app.add_subcommand("regress", "Train energy networks on x sin(x) with dcem and unrolled gd");
  reg->add_option("--methods", r.methods, "Comma-separated inner methods")->delimiter(',');
  reg->add_option("--outer-steps", r.outer_steps);
  reg->add_option("--batch-size", r.batch_size);
  reg->add_option("--lr", r.lr);
  reg->add_option("--eval-every", r.eval_every);
  reg->add_option("--hidden", r.hidden);
  reg->add_option("--layers", r.layers);
  reg->add_option("--n-train", r.n_train);
  reg->add_option("--n-val", r.n_val);
  reg->add_option("--inner-steps", r.inner_steps);
  reg->add_option("--inner-lr", r.inner_lr);
  reg->add_option("--N", r.num_samples);
  reg->add_option("--k", r.num_elites);
  reg->add_option("--tau", r.tau);
  reg->add_option("--sigma0", r.sigma0);

  auto& c = cfg.cartpole;
  bool ablate = false, expert_only = false;
  auto* cart = app.add_subcommand("cartpole", "Learn a latent control embedding through dcem");
  cart->add_flag("--ablate", ablate, "Sweep latent size x temperature x seed");
  cart->add_flag("--expert-only", expert_only, "Only evaluate the expert on the validation states");
  cart->add_option("--tau", c.tau);
  cart->add_option("--latent-dim", c.latent_dim);
  cart->add_option("--outer-steps", c.outer_steps);
  cart->add_option("--lr", c.lr);
  cart->add_option("--eval-every", c.eval_every);
  cart->add_option("--hidden", c.hidden);
  cart->add_option("--layers", c.layers);
  cart->add_option("--horizon", c.horizon);
  cart->add_option("--integrator", c.integrator, "rk4 | semi_implicit_euler");
  cart->add_option("--N", c.num_samples);
  cart->add_option("--k", c.num_elites);
  cart->add_option("--T", c.iterations);
  cart->add_option("--expert-N", c.expert.num_samples);
  cart->add_option("--expert-k", c.expert.num_elites);
  cart->add_option("--expert-T", c.expert.iterations);
  cart->add_option("--validation-states", c.validation_states);
  cart->add_option("--surface-resolution", c.surface_resolution);
  cart->add_option("--trajectories", c.trajectories);
  cart->add_option("--jobs", c.jobs, "Worker threads for --ablate");
  cart->get_option("--ablate")->excludes("--expert-only");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (lml->parsed()) return cmd_lml(cfg, out);
    if (topk->parsed()) return cmd_topk(cfg, out);
    if (opt->parsed()) return cmd_optimize(cfg, out);
    if (reg->parsed()) return cmd_regress(cfg, output_directory(cfg, "regress"), out, err);
    const auto mode = ablate ? CartpoleMode::ablate : expert_only ? CartpoleMode::expert_only : CartpoleMode::train;
    return cmd_cartpole(cfg, mode, output_directory(cfg, "cartpole"), out, err);
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace dcem::cli
