#include "bgrto/metrics.hpp"

#include <cstdio>

#include "bgrto/errors.hpp"

namespace bgrto::metrics {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

EvalReport summarize(std::span<const objectives::RewardBreakdown> samples) {
  if (samples.empty()) throw UsageError("evaluate: empty sample list");
  EvalReport r;
  double iou_sum = 0.0;
  double reward_sum = 0.0;
  std::size_t valid = 0;
  for (const auto& s : samples) {
    r.per_sample_iou.push_back(s.r_iou);
    iou_sum += s.r_iou;
    reward_sum += s.total;
    valid += s.r_format > 0.0 ? 1 : 0;
    r.intersection += s.intersection;
    r.union_ += s.union_;
  }
  const auto n = static_cast<double>(samples.size());
  r.giou = iou_sum / n;
  r.ciou = r.union_ == 0 ? 0.0 : static_cast<double>(r.intersection) / static_cast<double>(r.union_);
  r.mean_reward = reward_sum / n;
  r.validity_rate = static_cast<double>(valid) / n;
  return r;
}

std::vector<std::optional<env::ToolPrompt>> greedy_prompts(const models::PolicyParams& policy,
                                                           const models::Shapes& shapes,
                                                           std::span<const env::GridScene> scenes) {
  std::vector<std::optional<env::ToolPrompt>> out;
  out.reserve(scenes.size());
  for (const auto& scene : scenes) {
    out.push_back(env::parse_action_tokens(models::policy_greedy(policy, shapes, scene).tokens, shapes.grammar));
  }
  return out;
}

EvalReport evaluate_prompts(std::span<const std::optional<env::ToolPrompt>> prompts, const models::ToolParams& tool,
                            const models::Shapes& shapes, std::span<const env::GridScene> scenes,
                            const objectives::RewardOptions& options) {
  if (scenes.empty()) throw UsageError("evaluate: empty scene list");
  if (prompts.size() != scenes.size()) throw UsageError("evaluate: one prompt per scene required");
  std::vector<objectives::RewardBreakdown> samples;
  samples.reserve(scenes.size());
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    samples.push_back(objectives::compute_reward(scenes[k], prompts[k], tool, shapes, options));
  }
  return summarize(samples);
}

EvalReport evaluate(const models::PolicyParams& policy, const models::ToolParams& tool, const models::Shapes& shapes,
                    std::span<const env::GridScene> scenes, const objectives::RewardOptions& options) {
  if (scenes.empty()) throw UsageError("evaluate: empty scene list");
  const auto prompts = greedy_prompts(policy, shapes, scenes);
  return evaluate_prompts(prompts, tool, shapes, scenes, options);
}

std::string format_row(const MetricsRow& row) {
  std::string s;
  s += std::to_string(row.step) + "," + std::to_string(row.epoch) + "," + row.mode;
  for (double v : {row.mean_reward, row.validity_rate, row.giou, row.ciou, row.policy_obj, row.tool_loss, row.kl,
                   row.grad_norm_policy, row.grad_norm_tool, row.wall_ms}) {
    s += "," + fmt(v);
  }
  s += "," + std::to_string(row.seed);
  return s;
}

CsvSink::CsvSink(std::filesystem::path path, bool truncate) : path_(std::move(path)) {
  std::error_code ec;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path(), ec);
  const bool fresh = truncate || !std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0;
  if (!fresh) {
    std::ifstream in(path_);
    std::string first;
    std::getline(in, first);
    if (first != kCsvHeader) throw FormatError("metrics file '" + path_.string() + "' has an unexpected header");
  }
  out_.open(path_, std::ios::binary | (fresh ? std::ios::trunc : std::ios::app));
  if (!out_) throw IoError("cannot open metrics file '" + path_.string() + "'");
  if (fresh) {
    out_ << kCsvHeader << '\n';
    out_.flush();
    if (!out_) throw IoError("cannot write metrics header to '" + path_.string() + "'");
  }
}

void CsvSink::append(const MetricsRow& row) {
  const auto before = out_.tellp();
  out_ << format_row(row) << '\n';
  if (!out_) {
    out_.clear();
    out_.close();
    std::error_code ec;
    if (before >= 0) std::filesystem::resize_file(path_, static_cast<std::uintmax_t>(before), ec);
    out_.open(path_, std::ios::binary | std::ios::app);
    throw IoError("failed to append a metrics row to '" + path_.string() + "'");
  }
  ++rows_;
}

void CsvSink::flush() {
  out_.flush();
  if (!out_) throw IoError("failed to flush metrics file '" + path_.string() + "'");
}

MetricsRow emit_metrics_row(std::uint64_t step, std::uint64_t epoch, const std::string& mode,
                            const EvalReport& report, double policy_obj, double tool_loss, double kl,
                            double grad_norm_policy, double grad_norm_tool, double wall_ms, std::uint64_t seed,
                            CsvSink* sink) {
  MetricsRow row{step,   epoch,     mode, report.mean_reward, report.validity_rate, report.giou,
                 report.ciou, policy_obj, tool_loss, kl, grad_norm_policy, grad_norm_tool, wall_ms, seed};
  if (sink != nullptr) sink->append(row);
  return row;
}

}  // namespace bgrto::metrics
