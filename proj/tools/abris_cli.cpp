#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "abris/harness.hpp"

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> parallel;
  std::optional<std::string> out_dir;

  void apply(abris::KeyValues& kv) const {
    if (seed) kv["experiment.seed"] = std::to_string(*seed);
    if (parallel) kv["experiment.parallelism"] = std::to_string(*parallel);
    if (out_dir) kv["experiment.out_dir"] = *out_dir;
  }
};

int run_command(const std::string& file, const Overrides& o) {
  auto kv = abris::read_key_values(file);
  o.apply(kv);
  const auto config = abris::parse_config(kv);
  const auto manifest = abris::run_experiment(config, &std::cerr);
  abris::export_records(manifest, manifest.directory() / "export");
  std::cout << manifest.file.string() << '\n';
  return abris::manifest_exit_code(manifest);
}

int sweep_command(const std::string& file, const Overrides& o) {
  auto kv = abris::read_key_values(file);
  o.apply(kv);
  int code = 0;
  for (const auto& point : abris::run_sweep(kv, &std::cerr)) {
    abris::export_records(point.manifest, point.manifest.directory() / "export");
    std::cout << point.manifest.file.string() << '\n';
    const int c = abris::manifest_exit_code(point.manifest);
    if (c == 2 || (c == 3 && code == 0)) code = c;
  }
  return code;
}

int export_command(const std::string& file, const Overrides& o) {
  const auto manifest = abris::read_manifest(file);
  const std::filesystem::path out = o.out_dir ? std::filesystem::path(*o.out_dir) : manifest.directory() / "export";
  for (const auto& p : abris::export_records(manifest, out)) std::cout << p.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box variational inference with sample reuse"};
  app.require_subcommand(1);
  Overrides o;
  std::string file;

  auto add_flags = [&](CLI::App* sub) {
    sub->add_option("--seed", o.seed, "base seed");
    sub->add_option("--parallel", o.parallel, "concurrent model evaluations")->check(CLI::PositiveNumber);
    sub->add_option("--out-dir", o.out_dir, "output directory");
  };
  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("config", file, "config file")->required();
  add_flags(run);
  auto* sweep = app.add_subcommand("sweep", "run every point of a parameter grid");
  sweep->add_option("config", file, "config file")->required();
  add_flags(sweep);
  auto* exp = app.add_subcommand("export", "write record tables from a manifest");
  exp->add_option("manifest", file, "manifest file")->required();
  add_flags(exp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  try {
    if (*run) return run_command(file, o);
    if (*sweep) return sweep_command(file, o);
    return export_command(file, o);
  } catch (const abris::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const abris::BudgetExhausted& e) {
    std::cerr << "budget exhausted: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
