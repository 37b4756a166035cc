#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "spacebond/pipeline.hpp"

namespace pl = spacebond::pipeline;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct FactorFlags {
  std::string preset;
  std::optional<double> sigma_a, sigma_t, lambda_v, lambda_t;
  std::string select;
  std::string label;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "Factor preset")->check(CLI::IsMember({"versatile", "at-expertise", "none"}));
    app->add_option("--sigma-a", sigma_a, "Audio combining factor")->check(CLI::Range(0.0, 1.0));
    app->add_option("--sigma-t", sigma_t, "Text combining factor")->check(CLI::Range(0.0, 1.0));
    app->add_option("--lambda-v", lambda_v, "Image displacement factor")->check(CLI::Range(0.0, 1.0));
    app->add_option("--lambda-t", lambda_t, "Text displacement factor")->check(CLI::Range(0.0, 1.0));
    app->add_option("--select", select, "Comma-separated audio-text experts to combine");
    app->add_option("--label", label, "Report name (default: preset or factor values)");
  }

  spacebond::CombiningFactors resolve(const pl::PipelineConfig& c) const {
    auto f = c.factors;
    if (!preset.empty()) f = spacebond::CombiningFactors::preset(preset, f.lambda_v, f.lambda_t);
    if (sigma_a) f.sigma_a = *sigma_a;
    if (sigma_t) f.sigma_t = *sigma_t;
    if (lambda_v) f.lambda_v = *lambda_v;
    if (lambda_t) f.lambda_t = *lambda_t;
    f.validate();
    return f;
  }

  std::string name(const spacebond::CombiningFactors& f) const {
    if (!label.empty()) return label;
    if (!preset.empty() && !sigma_a && !sigma_t && !lambda_v && !lambda_t) return preset;
    return pl::factor_label(f);
  }
};

void print_report(const spacebond::eval::MetricReport& r, const spacebond::eval::MetricReport& base) {
  std::cout << "task metric fused unified\n";
  for (const auto& [task, metrics] : r.tasks) {
    for (const auto& [metric, v] : metrics) {
      std::cout << task << ' ' << metric << ' ' << v << ' ' << base.at(task, metric) << '\n';
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fuse multimodal embedding spaces with space bonds"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Pipeline config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Output directory")->required();
  };

  auto* synth = app.add_subcommand("synth", "Generate synthetic spaces, split and tasks");
  auto* bond = app.add_subcommand("bond", "Train displacement and combination bonds");
  auto* fuse = app.add_subcommand("fuse", "Write fused embeddings for the test split");
  auto* eval = app.add_subcommand("eval", "Evaluate fused and baseline spaces");
  auto* sweep = app.add_subcommand("sweep", "Grid sweep over combining factors");
  FactorFlags fuse_flags, eval_flags, sweep_flags;
  for (auto* s : {synth, bond, fuse, eval, sweep}) common(s);
  fuse_flags.attach(fuse);
  eval_flags.attach(eval);
  sweep_flags.attach(sweep);

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = pl::load_config(config_path);
    pl::apply_env_overrides(cfg);
    if (synth->parsed()) {
      pl::cmd_synth(cfg, out);
      std::cout << "wrote spaces to " << (std::filesystem::path(out) / "spaces").string() << '\n';
    } else if (bond->parsed()) {
      const auto space = pl::cmd_bond(cfg, out);
      std::cout << "trained " << (space.displacement ? 1 : 0) + space.combinations.size() << " bond(s)\n";
    } else if (fuse->parsed()) {
      const auto f = fuse_flags.resolve(cfg);
      pl::cmd_fuse(cfg, out, f, fuse_flags.name(f), split_list(fuse_flags.select));
    } else if (eval->parsed()) {
      const auto f = eval_flags.resolve(cfg);
      const auto o = pl::cmd_eval(cfg, out, f, eval_flags.name(f), split_list(eval_flags.select));
      print_report(o.fused, o.baseline);
      for (const auto& [name, r] : o.experts) {
        for (const auto& [task, metrics] : r.tasks) {
          if (metrics.count("R@1")) std::cout << "expert " << name << ' ' << task << " R@1 " << metrics.at("R@1") << '\n';
        }
      }
    } else if (sweep->parsed()) {
      const auto grid = pl::cmd_sweep(cfg, out, sweep_flags.resolve(cfg));
      std::cout << grid.csv();
    }
  } catch (const std::exception& e) {
    std::cerr << "spacebond: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
