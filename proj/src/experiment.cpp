#include "kdmot/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <tuple>

#include <fmt/format.h>
#include <json.hpp>

#include "kdmot/error.hpp"
#include "kdmot/random.hpp"

namespace kdmot {

namespace {

using nlohmann::json;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view text, std::string_view key) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw DomainError(fmt::format("{}: '{}' is not a valid number", key, text));
  }
  return value;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void DistillConfig::validate() const {
  (void)Alpha(alpha);
  if (epochs < 1) throw DomainError("epochs must be at least 1");
  if (steps_per_epoch < 1) throw DomainError("steps_per_epoch must be at least 1");
  if (batch_size < 1) throw DomainError("batch_size must be at least 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw DomainError(fmt::format("lr must be positive and finite, got {}", learning_rate));
  }
  if (teacher.hidden_dim == 0) throw DomainError("teacher.hidden_dim must be positive");
  if (teacher.patch == 0) throw DomainError("teacher.patch must be positive");
  if (teacher.size != SizePreset::custom && preset_hidden_dim(teacher.size) != teacher.hidden_dim) {
    throw DomainError(fmt::format("teacher.hidden_dim {} contradicts teacher.size {} ({})", teacher.hidden_dim,
                                  to_string(teacher.size), preset_hidden_dim(teacher.size)));
  }
  if (student.hidden_channels == 0 || student.out_channels == 0) throw DomainError("student channels must be positive");
}

DistillConfig parse_config(std::string_view text, DistillConfig defaults) {
  DistillConfig cfg = std::move(defaults);
  bool hidden_given = false;
  std::size_t line_no = 0;
  std::size_t size_line = 0;
  while (!text.empty()) {
    ++line_no;
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(fmt::format("expected key = value, got '{}'", line), line_no);
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    try {
      if (key == "loss") {
        cfg.loss = parse_loss_kind(value);
      } else if (key == "head") {
        cfg.head = parse_head_kind(value);
      } else if (key == "alpha") {
        cfg.alpha = Alpha(parse_number<double>(value, key)).value();
      } else if (key == "teacher.size") {
        cfg.teacher.size = parse_size_preset(value);
        size_line = line_no;
        if (cfg.teacher.size != SizePreset::custom && !hidden_given) {
          cfg.teacher.hidden_dim = preset_hidden_dim(cfg.teacher.size);
        }
      } else if (key == "teacher.hidden_dim") {
        cfg.teacher.hidden_dim = parse_number<std::size_t>(value, key);
        hidden_given = true;
      } else if (key == "teacher.patch") {
        cfg.teacher.patch = parse_number<std::size_t>(value, key);
      } else if (key == "teacher.seed") {
        cfg.teacher.seed = parse_number<std::uint64_t>(value, key);
      } else if (key == "student.hidden") {
        cfg.student.hidden_channels = parse_number<std::size_t>(value, key);
      } else if (key == "student.channels") {
        cfg.student.out_channels = parse_number<std::size_t>(value, key);
      } else if (key == "epochs") {
        cfg.epochs = parse_number<std::size_t>(value, key);
      } else if (key == "steps_per_epoch") {
        cfg.steps_per_epoch = parse_number<std::size_t>(value, key);
      } else if (key == "batch_size") {
        cfg.batch_size = parse_number<std::size_t>(value, key);
      } else if (key == "lr") {
        cfg.learning_rate = parse_number<double>(value, key);
      } else if (key == "seed") {
        cfg.seed = parse_number<std::uint64_t>(value, key);
      } else if (key == "data.root") {
        cfg.data_root = std::string(value);
      } else if (key == "data.sequence") {
        cfg.sequence = std::string(value);
      } else {
        throw ParseError(fmt::format("unknown key '{}'", key), line_no);
      }
    } catch (const DomainError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  try {
    cfg.validate();
  } catch (const DomainError& e) {
    throw ParseError(e.what(), size_line);
  }
  return cfg;
}

std::string format_config(const DistillConfig& c) {
  return fmt::format(
      "loss = {}\nhead = {}\nalpha = {}\nteacher.size = {}\nteacher.hidden_dim = {}\nteacher.patch = {}\n"
      "teacher.seed = {}\nstudent.hidden = {}\nstudent.channels = {}\nepochs = {}\nsteps_per_epoch = {}\n"
      "batch_size = {}\nlr = {}\nseed = {}\ndata.root = {}\ndata.sequence = {}\n",
      to_string(c.loss), to_string(c.head), c.alpha, to_string(c.teacher.size), c.teacher.hidden_dim, c.teacher.patch,
      c.teacher.seed, c.student.hidden_channels, c.student.out_channels, c.epochs, c.steps_per_epoch, c.batch_size,
      c.learning_rate, c.seed, c.data_root, c.sequence);
}

std::pair<TrainingData, TrainingData> split_training_data(const TrainingData& data) {
  auto [train_seq, val_seq] = half_split(data.sequence);
  const auto pick = [&](const Sequence& s) {
    std::vector<SyntheticFrame> frames;
    for (const int f : s.frames()) frames.push_back(frame_by_id(data.frames, f));
    return TrainingData{s, std::move(frames)};
  };
  return {pick(train_seq), pick(val_seq)};
}

// ---------------------------------------------------------------------------
// Training

namespace {

constexpr std::uint64_t kStudentStream = 1;
constexpr std::uint64_t kHeadStream = 2;
constexpr std::uint64_t kOrderStream = 7000;

struct Sample {
  const SyntheticFrame* frame = nullptr;
  FeatureMap teacher_map;
  Tensor heatmap;
};

std::vector<Sample> prepare_samples(const DistillConfig& cfg, const TrainingData& data) {
  if (data.sequence.frames().empty()) throw DomainError("training data has no frames");
  const Teacher teacher(cfg.teacher);
  std::vector<Sample> samples;
  for (const int f : data.sequence.frames()) {
    const SyntheticFrame& frame = frame_by_id(data.frames, f);
    const auto gh = student_output_extent(static_cast<std::size_t>(frame.pixels.rows()));
    const auto gw = student_output_extent(static_cast<std::size_t>(frame.pixels.cols()));
    const auto boxes = data.sequence.boxes_in(f);
    samples.push_back({&frame, patch_to_spatial(teacher.forward(frame)),
                       render_center_heatmap(boxes, data.sequence.image_width(), data.sequence.image_height(), gh, gw)});
  }
  return samples;
}

struct BatchLoss {
  Tensor task, distill, combined;
};

BatchLoss batch_loss(const DistillConfig& cfg, const StudentParams& student, const HeadParams& head,
                     const std::vector<Sample>& samples, const std::vector<std::size_t>& batch) {
  Tensor task, distill;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Sample& s = samples[batch[k]];
    const FeatureMap features = student_forward(*s.frame, student);
    const TargetShape target{s.teacher_map.channels(), s.teacher_map.height(), s.teacher_map.width()};
    const Tensor d = distillation_loss(cfg.loss, align_to_teacher(features, head, target), s.teacher_map);
    const Tensor t = proxy_task_loss(features, s.heatmap);
    task = k == 0 ? t : task + t;
    distill = k == 0 ? d : distill + d;
  }
  if (batch.size() > 1) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    task = scale(task, inv);
    distill = scale(distill, inv);
  }
  return {task, distill, combined_loss(task, distill, Alpha(cfg.alpha))};
}

std::vector<Tensor*> parameters(StudentParams& student, HeadParams& head) {
  std::vector<Tensor*> all = student.trainable();
  for (Tensor* t : head.trainable()) all.push_back(t);
  return all;
}

}  // namespace

std::pair<StudentParams, HeadParams> initial_parameters(const DistillConfig& config) {
  StudentParams student = make_student(config.student, derive_seed(config.seed, kStudentStream));
  HeadParams head = make_head(config.head, student.out_channels(), config.teacher.hidden_dim,
                              derive_seed(config.seed, kHeadStream));
  return {std::move(student), std::move(head)};
}

TrainingLog run_training(const DistillConfig& config, const TrainingData& data, TrainingMode mode) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::vector<Sample> samples = prepare_samples(config, data);

  TrainingLog log;
  log.config = config;
  std::tie(log.student, log.head) = initial_parameters(config);
  const std::vector<Tensor*> params = parameters(log.student, log.head);

  std::vector<std::size_t> order(samples.size());
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, kOrderStream + epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1))]);
    }
    for (std::size_t s = 0; s < config.steps_per_epoch; ++s, ++step) {
      std::vector<std::size_t> batch(config.batch_size);
      for (std::size_t b = 0; b < config.batch_size; ++b) batch[b] = order[(s * config.batch_size + b) % order.size()];
      const BatchLoss loss = batch_loss(config, log.student, log.head, samples, batch);
      const StepLog entry{step, loss.task.item(), loss.distill.item(), loss.combined.item()};
      if (!std::isfinite(entry.combined) || !std::isfinite(entry.task) || !std::isfinite(entry.distill)) {
        throw TrainingError(fmt::format("training diverged at step {} (task {}, distill {}, combined {})", step,
                                        entry.task, entry.distill, entry.combined));
      }
      log.steps.push_back(entry);
      const Gradients grads = backward(mode == TrainingMode::combined ? loss.combined : loss.task);
      for (Tensor* p : params) *p = p->with_values(p->values() - config.learning_rate * grads.of(*p));
    }
  }
  log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

LossTriple evaluate_losses(const DistillConfig& config, const StudentParams& student, const HeadParams& head,
                           const TrainingData& data) {
  const std::vector<Sample> samples = prepare_samples(config, data);
  std::vector<std::size_t> all(samples.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const BatchLoss loss = batch_loss(config, student, head, samples, all);
  return {loss.task.item(), loss.distill.item(), loss.combined.item()};
}

bool same_parameters(const TrainingLog& a, const TrainingLog& b) {
  std::vector<Tensor> ta = a.student.tensors(), tb = b.student.tensors();
  for (const Tensor& t : a.head.tensors()) ta.push_back(t);
  for (const Tensor& t : b.head.tensors()) tb.push_back(t);
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].shape() != tb[i].shape()) return false;
    const Array& x = ta[i].values();
    const Array& y = tb[i].values();
    if (std::memcmp(x.data(), y.data(), static_cast<std::size_t>(x.size()) * sizeof(double)) != 0) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Ablation

void AblationGrid::validate() const {
  base.validate();
  if (losses.empty() || heads.empty() || alphas.empty() || sizes.empty()) {
    throw DomainError("every ablation stage needs at least one option");
  }
  for (const double a : alphas) (void)Alpha(a);
  for (const SizePreset s : sizes) {
    if (s == SizePreset::custom) throw DomainError("ablation sizes must be presets");
  }
}

namespace {

AblationRow run_cell(const DistillConfig& cfg, const TrainingData& train, const TrainingData& validation) {
  AblationRow row;
  row.config = cfg;
  try {
    const TrainingLog log = run_training(cfg, train);
    row.wall_seconds = log.wall_seconds;
    const StepLog& last = log.steps.back();
    row.final_train = LossTriple{last.task, last.distill, last.combined};
    row.validation = evaluate_losses(cfg, log.student, log.head, validation);
    if (!std::isfinite(row.validation->combined)) throw TrainingError("validation loss is not finite");
  } catch (const std::exception& e) {
    row.validation.reset();
    row.error = e.what();
  }
  return row;
}

}  // namespace

AblationReport run_ablation(const AblationGrid& grid, const TrainingData& train, const TrainingData& validation,
                            const AblationProgress& progress) {
  grid.validate();
  AblationReport report;
  DistillConfig winner = grid.base;

  const auto run_stage = [&](int number, std::string column, std::size_t options,
                             const std::function<void(DistillConfig&, std::size_t)>& apply) {
    AblationStage stage;
    stage.number = number;
    stage.column = std::move(column);
    for (std::size_t k = 0; k < options; ++k) {
      DistillConfig cfg = winner;
      apply(cfg, k);
      stage.rows.push_back(run_cell(cfg, train, validation));
      if (progress) progress(stage, stage.rows.back());
    }
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < stage.rows.size(); ++k) {
      const auto& v = stage.rows[k].validation;
      if (!v) continue;
      if (!best || v->combined < stage.rows[*best].validation->combined) best = k;
    }
    if (!best) {
      throw TrainingError(fmt::format("every cell of ablation stage {} failed: {}", number, stage.rows.front().error));
    }
    stage.winner = *best;
    winner = stage.rows[*best].config;
    report.stages.push_back(std::move(stage));
  };

  run_stage(1, "Loss", grid.losses.size(), [&](DistillConfig& c, std::size_t k) { c.loss = grid.losses[k]; });
  run_stage(2, "Multi-Layer", grid.heads.size(), [&](DistillConfig& c, std::size_t k) { c.head = grid.heads[k]; });
  run_stage(3, "Alpha", grid.alphas.size(), [&](DistillConfig& c, std::size_t k) { c.alpha = grid.alphas[k]; });
  run_stage(4, "Size", grid.sizes.size(), [&](DistillConfig& c, std::size_t k) {
    c.teacher = TeacherConfig::from_preset(grid.sizes[k], c.teacher.patch, c.teacher.seed);
  });
  report.alpha_zero_matches_task_only = alpha_zero_control(grid.base, train);
  return report;
}

bool alpha_zero_control(const DistillConfig& base, const TrainingData& train) {
  DistillConfig cfg = base;
  cfg.alpha = 0.0;
  const TrainingLog blended = run_training(cfg, train, TrainingMode::combined);
  const TrainingLog task_only = run_training(cfg, train, TrainingMode::task_only);
  if (blended.steps.size() != task_only.steps.size()) return false;
  for (std::size_t i = 0; i < blended.steps.size(); ++i) {
    if (blended.steps[i].combined != task_only.steps[i].task) return false;
  }
  return same_parameters(blended, task_only);
}

// ---------------------------------------------------------------------------
// Tracker

Sequence greedy_iou_tracker(const Sequence& detections, double iou_threshold) {
  struct Track {
    int id;
    BBox last;
  };
  std::vector<Track> alive;  // tracks updated in the previous frame
  std::vector<BBox> out;
  int next_id = 1;
  for (const int frame : detections.frames()) {
    const auto dets = detections.boxes_in(frame);
    std::vector<std::tuple<double, int, std::size_t, std::size_t>> candidates;  // -iou, track id, det, track slot
    for (std::size_t t = 0; t < alive.size(); ++t) {
      for (std::size_t d = 0; d < dets.size(); ++d) {
        const double o = iou(alive[t].last, dets[d]);
        if (o >= iou_threshold) candidates.emplace_back(-o, alive[t].id, d, t);
      }
    }
    std::sort(candidates.begin(), candidates.end());
    std::vector<char> det_used(dets.size(), 0), track_used(alive.size(), 0);
    std::vector<int> assigned(dets.size(), 0);
    for (const auto& [neg_iou, id, d, t] : candidates) {
      if (det_used[d] || track_used[t]) continue;
      det_used[d] = track_used[t] = 1;
      assigned[d] = id;
    }
    std::vector<Track> next;
    for (std::size_t d = 0; d < dets.size(); ++d) {
      BBox box = dets[d];
      box.track_id = det_used[d] ? assigned[d] : next_id++;
      out.push_back(box);
      next.push_back({box.track_id, box});
    }
    alive = std::move(next);
  }
  return Sequence(detections.name(), detections.image_width(), detections.image_height(), detections.fps(),
                  detections.frames(), std::move(out));
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string csv_field(std::string text) {
  std::replace(text.begin(), text.end(), ',', ';');
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

json config_to_json(const DistillConfig& c) {
  return json{{"loss", std::string(to_string(c.loss))},
              {"head", std::string(to_string(c.head))},
              {"alpha", c.alpha},
              {"teacher_size", std::string(to_string(c.teacher.size))},
              {"hidden_dim", c.teacher.hidden_dim},
              {"patch", c.teacher.patch},
              {"teacher_seed", c.teacher.seed},
              {"student_hidden", c.student.hidden_channels},
              {"student_channels", c.student.out_channels},
              {"epochs", c.epochs},
              {"steps_per_epoch", c.steps_per_epoch},
              {"batch_size", c.batch_size},
              {"lr", c.learning_rate},
              {"seed", c.seed},
              {"data_root", c.data_root},
              {"sequence", c.sequence}};
}

DistillConfig config_from_json(const json& j) {
  DistillConfig c;
  c.loss = parse_loss_kind(j.at("loss").get<std::string>());
  c.head = parse_head_kind(j.at("head").get<std::string>());
  c.alpha = j.at("alpha").get<double>();
  c.teacher.size = parse_size_preset(j.at("teacher_size").get<std::string>());
  c.teacher.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.teacher.patch = j.at("patch").get<std::size_t>();
  c.teacher.seed = j.at("teacher_seed").get<std::uint64_t>();
  c.student.hidden_channels = j.at("student_hidden").get<std::size_t>();
  c.student.out_channels = j.at("student_channels").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.steps_per_epoch = j.at("steps_per_epoch").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.learning_rate = j.at("lr").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.data_root = j.at("data_root").get<std::string>();
  c.sequence = j.at("sequence").get<std::string>();
  c.validate();
  return c;
}

json losses_to_json(const std::optional<LossTriple>& l) {
  if (!l) return nullptr;
  return json{{"task", l->task}, {"distill", l->distill}, {"combined", l->combined}};
}

std::optional<LossTriple> losses_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return LossTriple{j.at("task").get<double>(), j.at("distill").get<double>(), j.at("combined").get<double>()};
}

template <typename F>
auto parse_versioned(std::string_view text, std::string_view kind, F&& body) {
  try {
    const json doc = json::parse(text);
    const int version = doc.at("schema_version").get<int>();
    if (version != kRunSchemaVersion) throw ParseError(fmt::format("unsupported {} schema version {}", kind, version), 0);
    if (doc.at("kind").get<std::string>() != kind) throw ParseError(fmt::format("not a {} document", kind), 0);
    return body(doc);
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("{}: {}", kind, e.what()), 0);
  } catch (const DomainError& e) {
    throw ParseError(fmt::format("{}: {}", kind, e.what()), 0);
  }
}

std::string stage_option(const AblationStage& stage, const DistillConfig& c) {
  if (stage.column == "Loss") return std::string(to_string(c.loss));
  if (stage.column == "Multi-Layer") return c.head == HeadKind::multi ? "true" : "false";
  if (stage.column == "Alpha") return fmt::format("{:.2f}", c.alpha);
  return std::string(to_string(c.teacher.size));
}

}  // namespace

std::string format_training_log_csv(const TrainingLog& log) {
  std::string out = "step,task,distill,combined\n";
  for (const StepLog& s : log.steps) out += fmt::format("{},{},{},{}\n", s.step, s.task, s.distill, s.combined);
  return out;
}

std::string format_ablation_csv(const AblationReport& report) {
  std::string out =
      "stage,column,option,loss,head,alpha,teacher_size,hidden_dim,val_task,val_distill,val_combined,winner,status\n";
  for (const AblationStage& stage : report.stages) {
    for (std::size_t k = 0; k < stage.rows.size(); ++k) {
      const AblationRow& r = stage.rows[k];
      const DistillConfig& c = r.config;
      const auto num = [&](auto member) { return r.validation ? fmt::format("{}", (*r.validation).*member) : ""; };
      out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", stage.number, stage.column, stage_option(stage, c),
                         to_string(c.loss), to_string(c.head), c.alpha, to_string(c.teacher.size), c.teacher.hidden_dim,
                         num(&LossTriple::task), num(&LossTriple::distill), num(&LossTriple::combined),
                         k == stage.winner ? "yes" : "no", r.error.empty() ? "ok" : "failed: " + csv_field(r.error));
    }
  }
  return out;
}

std::string format_ablation_json(const AblationReport& report) {
  json stages = json::array();
  for (const AblationStage& stage : report.stages) {
    json rows = json::array();
    for (const AblationRow& r : stage.rows) {
      rows.push_back(json{{"config", config_to_json(r.config)},
                          {"validation", losses_to_json(r.validation)},
                          {"final_train", losses_to_json(r.final_train)},
                          {"error", r.error},
                          {"wall_seconds", r.wall_seconds}});
    }
    stages.push_back(json{{"stage", stage.number}, {"column", stage.column}, {"winner", stage.winner}, {"rows", rows}});
  }
  const json doc{{"schema_version", kRunSchemaVersion},
                 {"kind", "ablation"},
                 {"alpha_zero_matches_task_only", report.alpha_zero_matches_task_only},
                 {"stages", stages}};
  return doc.dump(2) + "\n";
}

AblationReport parse_ablation_json(std::string_view text) {
  return parse_versioned(text, "ablation", [](const json& doc) {
    AblationReport report;
    report.alpha_zero_matches_task_only = doc.at("alpha_zero_matches_task_only").get<bool>();
    for (const json& s : doc.at("stages")) {
      AblationStage stage;
      stage.number = s.at("stage").get<int>();
      stage.column = s.at("column").get<std::string>();
      stage.winner = s.at("winner").get<std::size_t>();
      for (const json& r : s.at("rows")) {
        AblationRow row;
        row.config = config_from_json(r.at("config"));
        row.validation = losses_from_json(r.at("validation"));
        row.final_train = losses_from_json(r.at("final_train"));
        row.error = r.at("error").get<std::string>();
        row.wall_seconds = r.at("wall_seconds").get<double>();
        stage.rows.push_back(std::move(row));
      }
      report.stages.push_back(std::move(stage));
    }
    return report;
  });
}

RunSummary summarize(std::string name, const TrainingLog& log, const std::optional<LossTriple>& validation) {
  if (log.steps.empty()) throw DomainError("cannot summarise a run without steps");
  const StepLog& a = log.steps.front();
  const StepLog& b = log.steps.back();
  return {std::move(name), log.config, {a.task, a.distill, a.combined}, {b.task, b.distill, b.combined}, validation,
          log.wall_seconds};
}

std::string format_runs_csv(const std::vector<RunSummary>& runs) {
  std::string out(kRunsCsvHeader);
  out += '\n';
  for (const RunSummary& r : runs) {
    const DistillConfig& c = r.config;
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", csv_field(r.name), to_string(c.loss),
                       to_string(c.head), c.alpha, to_string(c.teacher.size), c.teacher.hidden_dim, c.total_steps(),
                       c.seed, r.initial.distill, r.final_train.distill, r.final_train.task, r.final_train.combined,
                       r.validation ? fmt::format("{}", r.validation->combined) : "", r.wall_seconds);
  }
  return out;
}

std::string format_runs_json(const std::vector<RunSummary>& runs) {
  json items = json::array();
  for (const RunSummary& r : runs) {
    items.push_back(json{{"name", r.name},
                         {"config", config_to_json(r.config)},
                         {"initial", losses_to_json(r.initial)},
                         {"final_train", losses_to_json(r.final_train)},
                         {"validation", losses_to_json(r.validation)},
                         {"wall_seconds", r.wall_seconds}});
  }
  const json doc{{"schema_version", kRunSchemaVersion}, {"kind", "runs"}, {"runs", items}};
  return doc.dump(2) + "\n";
}

std::vector<RunSummary> parse_runs_json(std::string_view text) {
  return parse_versioned(text, "runs", [](const json& doc) {
    std::vector<RunSummary> runs;
    for (const json& r : doc.at("runs")) {
      RunSummary s;
      s.name = r.at("name").get<std::string>();
      s.config = config_from_json(r.at("config"));
      s.initial = *losses_from_json(r.at("initial"));
      s.final_train = *losses_from_json(r.at("final_train"));
      s.validation = losses_from_json(r.at("validation"));
      s.wall_seconds = r.at("wall_seconds").get<double>();
      runs.push_back(std::move(s));
    }
    return runs;
  });
}

void emit_runs(const std::filesystem::path& dir, const std::string& stem, const std::vector<RunSummary>& runs) {
  write_text_file(dir / (stem + ".csv"), format_runs_csv(runs));
  write_text_file(dir / (stem + ".json"), format_runs_json(runs));
}

void emit_metrics(const std::filesystem::path& dir, const std::string& stem, const MetricReport& report) {
  write_text_file(dir / (stem + ".csv"), format_report_csv(report));
  write_text_file(dir / (stem + ".json"), format_report_json(report));
}

void emit_ablation(const std::filesystem::path& dir, const std::string& stem, const AblationReport& report) {
  write_text_file(dir / (stem + ".csv"), format_ablation_csv(report));
  write_text_file(dir / (stem + ".json"), format_ablation_json(report));
}

}  // namespace kdmot
