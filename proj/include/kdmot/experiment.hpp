#pragma once

// Distillation training loop, the staged ablation grid, a greedy IoU tracker
// and run-report emission.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kdmot/feature_align.hpp"
#include "kdmot/losses.hpp"
#include "kdmot/metrics.hpp"
#include "kdmot/models.hpp"
#include "kdmot/mot_data.hpp"

namespace kdmot {

struct DistillConfig {
  LossKind loss = LossKind::cosine;
  HeadKind head = HeadKind::single;
  double alpha = 0.5;
  TeacherConfig teacher = TeacherConfig::from_preset(SizePreset::base);
  StudentConfig student;
  std::size_t epochs = 10;
  std::size_t steps_per_epoch = 20;
  std::size_t batch_size = 1;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
  // data source for the CLI; empty means a generated synthetic sequence
  std::string data_root;
  std::string sequence;

  std::size_t total_steps() const { return epochs * steps_per_epoch; }

  /// Throws DomainError naming the offending field.
  void validate() const;
};

/// Flat "key = value" text, '#' comments. Keys: loss, head, alpha,
/// teacher.size, teacher.hidden_dim, teacher.patch, student.hidden,
/// student.channels, epochs, steps_per_epoch, batch_size, lr, seed,
/// data.root, data.sequence. Throws ParseError with the line number.
DistillConfig parse_config(std::string_view text, DistillConfig defaults = {});
std::string format_config(const DistillConfig& config);

/// Frames plus the boxes they show.
struct TrainingData {
  Sequence sequence;
  std::vector<SyntheticFrame> frames;  // one per entry of sequence.frames()
};

/// First ceil(F/2) frames train, the rest validate.
std::pair<TrainingData, TrainingData> split_training_data(const TrainingData& data);

struct StepLog {
  std::size_t step = 0;
  double task = 0.0;
  double distill = 0.0;
  double combined = 0.0;
};

struct LossTriple {
  double task = 0.0;
  double distill = 0.0;
  double combined = 0.0;
};

struct TrainingLog {
  DistillConfig config;
  std::vector<StepLog> steps;
  double wall_seconds = 0.0;
  StudentParams student;
  HeadParams head;
};

enum class TrainingMode {
  combined,   // (1 - alpha) task + alpha distill
  task_only,  // task loss alone drives the update; distillation is still logged
};

/// Student and head exactly as run_training initialises them.
std::pair<StudentParams, HeadParams> initial_parameters(const DistillConfig& config);

/// Plain gradient descent on student and head parameters. The teacher is
/// frozen. Throws TrainingError if the loss becomes non-finite.
TrainingLog run_training(const DistillConfig& config, const TrainingData& data,
                         TrainingMode mode = TrainingMode::combined);

/// Mean losses of the given parameters over every frame of data, no update.
LossTriple evaluate_losses(const DistillConfig& config, const StudentParams& student, const HeadParams& head,
                           const TrainingData& data);

/// Bitwise equality of all student and head parameters.
bool same_parameters(const TrainingLog& a, const TrainingLog& b);

struct AblationGrid {
  DistillConfig base;
  std::vector<LossKind> losses{LossKind::cosine, LossKind::mse};
  std::vector<HeadKind> heads{HeadKind::single, HeadKind::multi};
  std::vector<double> alphas{0.25, 0.50, 0.75};
  std::vector<SizePreset> sizes{SizePreset::small, SizePreset::base, SizePreset::large};

  void validate() const;
};

struct AblationRow {
  DistillConfig config;
  std::optional<LossTriple> validation;  // empty when the cell failed
  std::optional<LossTriple> final_train;
  std::string error;
  double wall_seconds = 0.0;
};

struct AblationStage {
  int number = 0;
  std::string column;  // "Loss", "Multi-Layer", "Alpha", "Size"
  std::vector<AblationRow> rows;
  std::size_t winner = 0;
};

struct AblationReport {
  std::vector<AblationStage> stages;
  /// alpha = 0 run against a task-only run from the same seed and data.
  bool alpha_zero_matches_task_only = false;
};

using AblationProgress = std::function<void(const AblationStage&, const AblationRow&)>;

/// Runs the four stages in order. Each stage varies one column of the previous
/// stage's winner; the winner is the lowest final validation combined loss
/// (ties go to the first listed option). Failed cells are recorded and never
/// win; a stage where every cell fails throws TrainingError.
AblationReport run_ablation(const AblationGrid& grid, const TrainingData& train, const TrainingData& validation,
                            const AblationProgress& progress = {});

/// Two runs of the base configuration's student: alpha = 0 with the combined
/// objective, and task-only. True when every parameter matches bitwise.
bool alpha_zero_control(const DistillConfig& base, const TrainingData& train);

inline constexpr double kTrackerIouThreshold = 0.3;

/// Frame-by-frame greedy association: pairs of (track alive in the previous
/// frame, detection) are taken in order of decreasing IoU, ties by track id then
/// detection order, while IoU >= threshold. Unmatched detections open tracks
/// with fresh ids starting at 1. Detection ids are ignored.
Sequence greedy_iou_tracker(const Sequence& detections, double iou_threshold = kTrackerIouThreshold);

inline constexpr int kRunSchemaVersion = 1;

std::string format_training_log_csv(const TrainingLog& log);
/// "stage,column,option,loss,head,alpha,teacher_size,hidden_dim,val_task,val_distill,val_combined,winner,status"
std::string format_ablation_csv(const AblationReport& report);
std::string format_ablation_json(const AblationReport& report);
AblationReport parse_ablation_json(std::string_view text);

struct RunSummary {
  std::string name;
  DistillConfig config;
  LossTriple initial;
  LossTriple final_train;
  std::optional<LossTriple> validation;
  double wall_seconds = 0.0;
};

RunSummary summarize(std::string name, const TrainingLog& log, const std::optional<LossTriple>& validation);

inline constexpr std::string_view kRunsCsvHeader =
    "name,loss,head,alpha,teacher_size,hidden_dim,steps,seed,initial_distill,final_distill,final_task,"
    "final_combined,val_combined,wall_seconds";

std::string format_runs_csv(const std::vector<RunSummary>& runs);
std::string format_runs_json(const std::vector<RunSummary>& runs);
/// Throws ParseError on malformed input or a schema version mismatch.
std::vector<RunSummary> parse_runs_json(std::string_view text);

/// Writes <stem>.csv and <stem>.json under dir. Throws IoError when unwritable.
void emit_runs(const std::filesystem::path& dir, const std::string& stem, const std::vector<RunSummary>& runs);
void emit_metrics(const std::filesystem::path& dir, const std::string& stem, const MetricReport& report);
void emit_ablation(const std::filesystem::path& dir, const std::string& stem, const AblationReport& report);

}  // namespace kdmot
