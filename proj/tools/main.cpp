// grto: command-line driver for the training pipeline.
//
//   grto [--workdir DIR] [--config FILE] [--set key=value]... COMMAND [options]
//
// Commands: pretrain-tool, warmup-policy, build-buffer, train, eval,
// oracle-check, show-config.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bgrto/checkpoint.hpp"
#include "bgrto/config.hpp"
#include "bgrto/errors.hpp"
#include "bgrto/io.hpp"
#include "bgrto/metrics.hpp"
#include "bgrto/oracle.hpp"
#include "bgrto/pipeline.hpp"
#include "bgrto/rollout.hpp"
#include "bgrto/schedules.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bgrto;

namespace {

// ---------------------------------------------------------------- workdir lock

class WorkdirLock {
 public:
  explicit WorkdirLock(const fs::path& workdir) : path_(workdir / ".grto.lock") {
    fs::create_directories(workdir);
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const std::string pid = std::to_string(::getpid()) + "\n";
        const auto written = ::write(fd, pid.data(), pid.size());
        ::close(fd);
        if (written != static_cast<ssize_t>(pid.size())) throw IoError("cannot write lock file '" + path_.string() + "'");
        held_ = true;
        return;
      }
      if (!stale()) break;
      std::error_code ec;
      fs::remove(path_, ec);
    }
    throw StateError("workdir '" + workdir.string() + "' is locked by another process (" + path_.string() + ")");
  }
  WorkdirLock(const WorkdirLock&) = delete;
  WorkdirLock& operator=(const WorkdirLock&) = delete;
  ~WorkdirLock() {
    if (held_) {
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }

 private:
  bool stale() const {
    std::ifstream in(path_);
    long pid = 0;
    if (!(in >> pid) || pid <= 0) return true;
    return ::kill(static_cast<pid_t>(pid), 0) != 0 && errno == ESRCH;
  }

  fs::path path_;
  bool held_ = false;
};

// ---------------------------------------------------------------- helpers

struct Globals {
  std::string workdir;
  std::string config_path;
  std::vector<std::string> overrides;
};

fs::path resolve_workdir(const Globals& g, const config::RunConfig& cfg) {
  if (!g.workdir.empty()) return g.workdir;
  if (!cfg.paths.workdir.empty()) return cfg.paths.workdir;
  if (const char* env = std::getenv("GRTO_WORKDIR"); env != nullptr && *env != '\0') return env;
  return ".";
}

fs::path artifact(const fs::path& workdir, const std::string& name) {
  const fs::path p(name);
  return p.is_absolute() ? p : workdir / p;
}

void require_artifact(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw PrerequisiteError("missing '" + path.string() + "'; run `grto " + producer + "` first");
  }
}

models::ToolParams load_tool0(const config::RunConfig& cfg, const fs::path& workdir) {
  const auto path = artifact(workdir, cfg.paths.tool0);
  require_artifact(path, "pretrain-tool");
  auto tool = checkpoint::subset(checkpoint::load_checkpoint(path, cfg.compat_hash()).tensors, "tool/");
  if (tool.empty()) throw FormatError("'" + path.string() + "' holds no tool tensors");
  return tool;
}

models::PolicyParams load_policy0(const config::RunConfig& cfg, const fs::path& workdir) {
  const auto path = artifact(workdir, cfg.paths.policy0);
  require_artifact(path, "warmup-policy");
  auto policy = checkpoint::subset(checkpoint::load_checkpoint(path, cfg.compat_hash()).tensors, "policy/");
  if (policy.empty()) throw FormatError("'" + path.string() + "' holds no policy tensors");
  return policy;
}

std::string final_stage(schedules::Mode mode) {
  switch (mode) {
    case schedules::Mode::kGrpo:
    case schedules::Mode::kBGrpo:
      return "grpo";
    case schedules::Mode::kGrto:
    case schedules::Mode::kBGrto:
      return "grto";
    case schedules::Mode::kGrtoNoFilter:
      return "grto_no_filter";
    case schedules::Mode::kReverseSeq:
      return "tool";
  }
  return "grpo";
}

fs::path run_dir(const config::RunConfig& cfg, const fs::path& workdir) {
  return artifact(workdir, cfg.paths.runs) / std::string(schedules::to_string(cfg.train.mode)) /
         std::to_string(cfg.train.seed);
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- commands

int cmd_pretrain(const config::RunConfig& cfg, const fs::path& workdir) {
  WorkdirLock lock(workdir);
  const auto tool = pipeline::pretrain_tool(cfg);
  const auto path = artifact(workdir, cfg.paths.tool0);
  checkpoint::save_checkpoint(path, pipeline::make_checkpoint(cfg, {"tool0", "", "pretrain", cfg.pretrain.epochs,
                                                                   cfg.pretrain.seed, std::nullopt},
                                                              nullptr, &tool));
  const auto shapes = pipeline::shapes_for(cfg);
  const auto scenes = pipeline::eval_scenes(cfg);
  const auto ceiling = pipeline::ceiling_check(tool, shapes, scenes);
  std::cout << json{{"artifact", path.string()},
                    {"oracle_prompt_iou", ceiling.mean_iou},
                    {"erosion_ceiling", ceiling.mean_ceiling}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_warmup(const config::RunConfig& cfg, const fs::path& workdir) {
  WorkdirLock lock(workdir);
  std::vector<double> log;
  const auto policy = pipeline::warmup_policy(cfg, &log);
  const auto path = artifact(workdir, cfg.paths.policy0);
  checkpoint::save_checkpoint(path, pipeline::make_checkpoint(cfg, {"policy0", "", "warmup", cfg.warmup.epochs,
                                                                   cfg.warmup.seed, std::nullopt},
                                                              &policy, nullptr));
  std::cout << json{{"artifact", path.string()}, {"nll_per_epoch", log}}.dump() << "\n";
  return 0;
}

int cmd_build_buffer(const config::RunConfig& cfg, const fs::path& workdir) {
  WorkdirLock lock(workdir);
  const auto policy = load_policy0(cfg, workdir);
  const auto tool = load_tool0(cfg, workdir);
  const auto buffer = pipeline::build_buffer(cfg, policy, tool, cfg.paths.policy0);
  const auto path = artifact(workdir, cfg.paths.buffer);
  rollout::save_buffer(buffer, path);
  std::cout << json{{"artifact", path.string()}, {"groups", buffer.groups.size()}}.dump() << "\n";
  return 0;
}

int cmd_train(const config::RunConfig& cfg, const fs::path& workdir) {
  WorkdirLock lock(workdir);
  const auto shapes = pipeline::shapes_for(cfg);
  const auto policy0 = load_policy0(cfg, workdir);
  const auto tool0 = load_tool0(cfg, workdir);

  std::optional<rollout::ReplayBuffer> buffer;
  if (schedules::is_bootstrapped(cfg.train.mode)) {
    const auto path = artifact(workdir, cfg.train.bto.buffer_path.empty() ? cfg.paths.buffer : cfg.train.bto.buffer_path);
    require_artifact(path, "build-buffer");
    buffer = rollout::load_buffer(path, cfg.env);
  }

  const fs::path dir = run_dir(cfg, workdir);
  std::error_code ec;
  fs::remove_all(dir, ec);
  fs::create_directories(dir);

  metrics::CsvSink sink(dir / "metrics.csv");
  const std::string mode(schedules::to_string(cfg.train.mode));
  const std::string last = final_stage(cfg.train.mode);

  schedules::RunContext ctx{shapes, policy0, tool0, schedules::validation_scenes(cfg.train, cfg.env),
                            buffer ? &*buffer : nullptr, &sink, {}};
  ctx.checkpoint = [&](const std::string& stage, std::size_t epoch, const models::PolicyParams& policy,
                       const models::ToolParams& tool, double metric) {
    const fs::path rel = stage == last ? fs::path("epoch" + std::to_string(epoch) + ".ckpt")
                                       : fs::path(stage) / ("epoch" + std::to_string(epoch) + ".ckpt");
    checkpoint::save_checkpoint(dir / rel, pipeline::make_checkpoint(cfg, {"run", mode, stage, epoch, cfg.train.seed, metric},
                                                                      &policy, &tool));
    return (dir / rel).string();
  };

  const auto result = schedules::run_mode(ctx, cfg.train);
  sink.flush();

  io::atomic_write(dir / "selected.ckpt", io::read_file(result.selected.path));

  std::string val = "stage,epoch,metric,giou,ciou,mean_reward,validity_rate\n";
  for (const auto& [name, stage] : result.stages) {
    for (std::size_t k = 0; k < stage.records.size(); ++k) {
      const auto& r = stage.validation[k];
      val += name + "," + std::to_string(stage.records[k].epoch) + "," + fmt17(stage.records[k].metric) + "," +
             fmt17(r.giou) + "," + fmt17(r.ciou) + "," + fmt17(r.mean_reward) + "," + fmt17(r.validity_rate) + "\n";
    }
  }
  io::atomic_write(dir / "validation.csv", val);

  std::cout << json{{"mode", mode},
                    {"seed", cfg.train.seed},
                    {"run_dir", dir.string()},
                    {"selected", {{"stage", result.selected.stage},
                                  {"epoch", result.selected.epoch},
                                  {"metric", result.selected.metric},
                                  {"path", result.selected.path}}}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_eval(const config::RunConfig& cfg, const fs::path& workdir, const std::string& ckpt_arg, bool ceiling,
             bool no_filter) {
  const auto shapes = pipeline::shapes_for(cfg);
  const auto scenes = pipeline::eval_scenes(cfg);
  if (ceiling) {
    const auto tool = ckpt_arg.empty()
                          ? load_tool0(cfg, workdir)
                          : checkpoint::subset(checkpoint::load_checkpoint(ckpt_arg, cfg.compat_hash()).tensors, "tool/");
    const auto r = pipeline::ceiling_check(tool, shapes, scenes);
    std::cout << json{{"oracle_prompt_iou", r.mean_iou}, {"erosion_ceiling", r.mean_ceiling}, {"scenes", r.scenes}}.dump()
              << "\n";
    return 0;
  }
  fs::path path = ckpt_arg;
  if (path.empty()) {
    path = run_dir(cfg, workdir) / "selected.ckpt";
    require_artifact(path, "train --mode " + std::string(schedules::to_string(cfg.train.mode)));
  }
  const auto ckpt = checkpoint::load_checkpoint(path, cfg.compat_hash());
  const auto policy = checkpoint::subset(ckpt.tensors, "policy/");
  const auto tool = checkpoint::subset(ckpt.tensors, "tool/");
  if (policy.empty() || tool.empty()) throw FormatError("'" + path.string() + "' must hold policy and tool tensors");
  const std::string mode = ckpt.metadata.value("mode", std::string());
  const bool filter = !no_filter && mode != "grto_no_filter";
  auto options = schedules::reward_options(cfg.train, filter);
  const auto report = metrics::evaluate(policy, tool, shapes, scenes, options);
  json out = pipeline::report_json(report);
  out["checkpoint"] = path.string();
  out["filter"] = filter;
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_oracle(bool quick, std::uint64_t seed) {
  oracle::SuiteOptions o;
  o.seed = seed;
  if (quick) {
    o.identity_instances = 10;
    o.include_monte_carlo = false;
  }
  const auto results = oracle::run_suite(o);
  std::string failed;
  for (const auto& r : results) {
    std::cout << oracle::to_json_line(r) << "\n";
    if (!r.pass) failed += (failed.empty() ? "" : ", ") + r.check_name;
  }
  std::cout.flush();
  if (!failed.empty()) throw TrainingError("oracle checks failed: " + failed);
  return 0;
}

void print_error(const std::string& command, const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"command", command}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bootstrapped group relative tool optimization on a synthetic segmentation task"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--workdir", g.workdir, "Artifact directory (default: $GRTO_WORKDIR or .)");
  app.add_option("--config", g.config_path, "Run config JSON");
  app.add_option("--set", g.overrides, "Dotted override, e.g. --set bto.beta=0.02")->allow_extra_args(false);

  auto* pretrain = app.add_subcommand("pretrain-tool", "Fit omega_0 on the source convention");
  auto* warmup = app.add_subcommand("warmup-policy", "Warm-start theta_0 on scripted demonstrations");
  auto* build = app.add_subcommand("build-buffer", "Sample reference-policy groups for BTO");
  auto* train = app.add_subcommand("train", "Run one training mode");
  std::string mode;
  std::optional<std::uint64_t> seed;
  train->add_option("--mode", mode, "grpo | grto | b_grto | b_grpo | reverse_seq | grto_no_filter");
  train->add_option("--seed", seed, "Run seed");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on held-out scenes");
  std::string ckpt;
  bool ceiling = false;
  bool no_filter = false;
  eval->add_option("--mode", mode, "Mode of the run to evaluate (selected.ckpt)");
  eval->add_option("--seed", seed, "Seed of the run to evaluate");
  eval->add_option("--checkpoint", ckpt, "Explicit checkpoint path");
  eval->add_flag("--oracle-prompts", ceiling, "Score the tool with oracle prompts (erosion ceiling check)");
  eval->add_flag("--no-filter", no_filter, "Disable the box filter");
  auto* oracle_cmd = app.add_subcommand("oracle-check", "Exact-enumeration checks; one JSON line per check");
  bool quick = false;
  std::uint64_t oracle_seed = 0;
  oracle_cmd->add_flag("--quick", quick, "Fewer instances, no Monte Carlo study");
  oracle_cmd->add_option("--seed", oracle_seed, "Instance seed");
  auto* show = app.add_subcommand("show-config", "Print the resolved config");

  std::string command = "grto";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(command, "usage", e.what());
    return 2;
  }

  for (auto* sub : app.get_subcommands()) command = sub->get_name();
  try {
    std::vector<std::string> overrides = g.overrides;
    if (!mode.empty()) overrides.push_back("mode=\"" + mode + "\"");
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    const auto cfg = config::load_with_overrides(g.config_path, overrides);
    const fs::path workdir = resolve_workdir(g, cfg);

    if (*pretrain) return cmd_pretrain(cfg, workdir);
    if (*warmup) return cmd_warmup(cfg, workdir);
    if (*build) return cmd_build_buffer(cfg, workdir);
    if (*train) return cmd_train(cfg, workdir);
    if (*eval) return cmd_eval(cfg, workdir, ckpt, ceiling, no_filter);
    if (*oracle_cmd) return cmd_oracle(quick, oracle_seed);
    if (*show) {
      std::cout << config::to_json(cfg).dump(2) << "\n";
      return 0;
    }
  } catch (const Error& e) {
    print_error(command, e.kind(), e.what());
    return e.kind() == "usage" || e.kind() == "config" ? 2 : 1;
  } catch (const std::exception& e) {
    print_error(command, "internal", e.what());
    return 1;
  }
  return 0;
}
