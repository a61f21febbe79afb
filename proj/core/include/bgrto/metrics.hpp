#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bgrto/env.hpp"
#include "bgrto/models.hpp"
#include "bgrto/objectives.hpp"

namespace bgrto::metrics {

struct EvalReport {
  std::vector<double> per_sample_iou;
  double giou = 0.0;
  double ciou = 0.0;
  double mean_reward = 0.0;
  double validity_rate = 0.0;
  std::size_t intersection = 0;
  std::size_t union_ = 0;

  /// Checkpoint-selection metric: mean of gIoU and cIoU.
  double selection_metric() const noexcept { return 0.5 * (giou + ciou); }
};

/// gIoU is the mean of per-sample IoUs; cIoU divides summed intersections by
/// summed unions (0 when every union is empty).
EvalReport summarize(std::span<const objectives::RewardBreakdown> samples);

/// Greedy prompt per scene (absent when it does not parse).
std::vector<std::optional<env::ToolPrompt>> greedy_prompts(const models::PolicyParams& policy,
                                                           const models::Shapes& shapes,
                                                           std::span<const env::GridScene> scenes);

/// Scores fixed prompts under `tool`. Invalid prompts score IoU 0.
EvalReport evaluate_prompts(std::span<const std::optional<env::ToolPrompt>> prompts, const models::ToolParams& tool,
                            const models::Shapes& shapes, std::span<const env::GridScene> scenes,
                            const objectives::RewardOptions& options);

/// Greedy decoding followed by evaluate_prompts. Throws UsageError on an
/// empty scene list.
EvalReport evaluate(const models::PolicyParams& policy, const models::ToolParams& tool, const models::Shapes& shapes,
                    std::span<const env::GridScene> scenes, const objectives::RewardOptions& options);

struct MetricsRow {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::string mode;
  double mean_reward = 0.0;
  double validity_rate = 0.0;
  double giou = 0.0;
  double ciou = 0.0;
  double policy_obj = 0.0;
  double tool_loss = 0.0;
  double kl = 0.0;
  double grad_norm_policy = 0.0;
  double grad_norm_tool = 0.0;
  double wall_ms = 0.0;
  std::uint64_t seed = 0;
};

inline constexpr const char* kCsvHeader =
    "step,epoch,mode,mean_reward,validity_rate,giou,ciou,policy_obj,tool_loss,kl,grad_norm_policy,"
    "grad_norm_tool,wall_ms,seed";

/// One CSV line (no newline), floats with 17 significant digits.
std::string format_row(const MetricsRow& row);

/// Append-only CSV writer. The header is written when the file is empty and
/// verified otherwise. A failed row write truncates the file back to its
/// previous length.
class CsvSink {
 public:
  /// `truncate` starts a fresh file.
  explicit CsvSink(std::filesystem::path path, bool truncate = true);

  void append(const MetricsRow& row);
  void flush();
  const std::filesystem::path& path() const noexcept { return path_; }
  std::size_t rows() const noexcept { return rows_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t rows_ = 0;
};

/// Builds and appends a row. `sink` may be null (the row is only returned).
MetricsRow emit_metrics_row(std::uint64_t step, std::uint64_t epoch, const std::string& mode,
                            const EvalReport& report, double policy_obj, double tool_loss, double kl,
                            double grad_norm_policy, double grad_norm_tool, double wall_ms, std::uint64_t seed,
                            CsvSink* sink);

}  // namespace bgrto::metrics
