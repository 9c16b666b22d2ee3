#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <charconv>
#include <cstdlib>
#include <cstring>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xfer/config.hpp"
#include "xfer/error.hpp"
#include "xfer/io.hpp"
#include "xfer/run.hpp"

extern char** environ;

namespace {

namespace fs = std::filesystem;
using namespace xfer;

enum Exit { ok = 0, failed = 1, bad_input = 2, diverged = 3, io_error = 4 };

std::uint64_t parse_seed_override(const char* text) {
  std::uint64_t v = 0;
  const char* end = text + std::strlen(text);
  const auto [ptr, ec] = std::from_chars(text, end, v);
  if (ec != std::errc() || ptr != end || ptr == text) {
    throw InvalidInput(std::string("XFER_LAB_SEED_OVERRIDE must be an unsigned integer, got '") + text + "'");
  }
  return v;
}

// Runs one child per seed, at most `jobs` at a time.
int spawn_sweep(const std::string& config_path, const config::ExperimentConfig& cfg, const fs::path& out_dir,
                std::size_t jobs) {
  const std::string self = fs::read_symlink("/proc/self/exe").string();
  std::vector<std::string> base_env;
  for (char** e = environ; *e; ++e) {
    if (std::strncmp(*e, "XFER_LAB_SEED_OVERRIDE=", 23) != 0) base_env.emplace_back(*e);
  }
  std::size_t next = 0, running = 0;
  int status_out = Exit::ok;
  auto reap = [&] {
    int status = 0;
    if (::wait(&status) < 0) throw IoError("wait failed");
    --running;
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      status_out = WIFEXITED(status) ? WEXITSTATUS(status) : Exit::failed;
    }
  };
  while (next < cfg.seeds.size() || running > 0) {
    if (next < cfg.seeds.size() && running < jobs) {
      const auto seed = cfg.seeds[next++];
      std::vector<std::string> args{self, "run", config_path, "--out-dir", run::seed_dir(out_dir, seed).string()};
      std::vector<std::string> env = base_env;
      env.push_back("XFER_LAB_SEED_OVERRIDE=" + std::to_string(seed));
      std::vector<char*> argv, envp;
      for (auto& a : args) argv.push_back(a.data());
      argv.push_back(nullptr);
      for (auto& e : env) envp.push_back(e.data());
      envp.push_back(nullptr);
      pid_t pid = 0;
      if (posix_spawn(&pid, self.c_str(), nullptr, nullptr, argv.data(), envp.data()) != 0) {
        throw IoError("could not launch a sweep process");
      }
      ++running;
    } else {
      reap();
    }
  }
  return status_out;
}

int cmd_run(const std::string& config_path, const std::string& out_override, std::size_t jobs) {
  auto cfg = config::parse_config(io::read_text(config_path));
  if (const char* s = std::getenv("XFER_LAB_SEED_OVERRIDE"); s && *s) {
    cfg.seed = parse_seed_override(s);
    cfg.seeds.clear();
  }
  const fs::path out_dir = out_override.empty() ? cfg.out_dir : fs::path(out_override);
  if (!cfg.seeds.empty() && jobs > 1) return spawn_sweep(config_path, cfg, out_dir, jobs);
  for (const auto& r : run::run_all(cfg, out_dir)) std::cout << r.manifest.string() << "\n";
  return Exit::ok;
}

int cmd_verify(const std::string& manifest) {
  const auto report = run::verify_manifest(manifest);
  for (const auto& p : report.problems) std::cout << "FAIL " << p << "\n";
  std::cout << (report.ok() ? "ok" : "mismatch") << ": " << report.checked << " files checked\n";
  return report.ok() ? Exit::ok : Exit::failed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Seeded experiments for reward learning, domain adaptation and mutual alignment transfer"};
  app.require_subcommand(1);

  std::string config_path, out_dir, manifest;
  std::size_t jobs = 1;
  auto* run_cmd = app.add_subcommand("run", "Run an experiment config and write its artifacts");
  run_cmd->add_option("config", config_path, "Experiment config (JSON)")->required();
  run_cmd->add_option("--out-dir", out_dir, "Output directory (overrides out_dir in the config)");
  run_cmd->add_option("--jobs", jobs, "Parallel processes for a seed sweep")->check(CLI::PositiveNumber);
  auto* verify_cmd = app.add_subcommand("verify", "Re-hash the artifacts listed in a manifest");
  verify_cmd->add_option("manifest", manifest, "manifest.json of a run")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run_cmd) return cmd_run(config_path, out_dir, jobs);
    return cmd_verify(manifest);
  } catch (const TrainingDiverged& e) {
    std::cerr << "xfer-lab: training diverged: " << e.what() << "\n";
    return Exit::diverged;
  } catch (const InvalidInput& e) {
    std::cerr << "xfer-lab: invalid input: " << e.what() << "\n";
    return Exit::bad_input;
  } catch (const IoError& e) {
    std::cerr << "xfer-lab: " << e.what() << "\n";
    return Exit::io_error;
  } catch (const std::exception& e) {
    std::cerr << "xfer-lab: " << e.what() << "\n";
    return Exit::failed;
  }
}
