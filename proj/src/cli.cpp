#include "kdmot/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "kdmot/error.hpp"

namespace kdmot {

namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> overrides;  // key=value
};

void add_config_options(CLI::App& cmd, ConfigArgs& args) {
  cmd.add_option("--config", args.config_file, "key=value config file");
  cmd.add_option("--set", args.overrides, "override one config key, e.g. --set lr=0.25")->take_all();
}

DistillConfig resolve_config(const ConfigArgs& args) {
  DistillConfig cfg;
  if (!args.config_file.empty()) cfg = parse_config(read_text_file(args.config_file));
  if (!args.overrides.empty()) {
    std::string text;
    for (const std::string& o : args.overrides) text += o + "\n";
    try {
      cfg = parse_config(text, cfg);
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("--set: {}", e.what()), 0);
    }
  }
  cfg.validate();
  return cfg;
}

std::vector<std::string> pick_sequences(const DatasetLayout& layout, const std::vector<std::string>& wanted) {
  const std::vector<std::string> all = layout.sequence_names();
  if (wanted.empty()) return all;
  for (const std::string& name : wanted) {
    if (std::find(all.begin(), all.end(), name) == all.end()) {
      throw IoError(fmt::format("sequence {} not found under {}", name, layout.sequences_dir().string()));
    }
  }
  return wanted;
}

SequenceInfo info_of(const Sequence& s) {
  SequenceInfo info;
  info.name = s.name();
  info.image_width = s.image_width();
  info.image_height = s.image_height();
  info.fps = s.fps();
  info.length = static_cast<int>(s.frames().size());
  return info;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// --- subcommands -----------------------------------------------------------

struct SynthArgs {
  std::string out;
  SyntheticSpec spec;
};

void cmd_synth(const SynthArgs& a, std::ostream& out) {
  const SyntheticData data = generate_synthetic_sequence(a.spec);
  const DatasetLayout layout{a.out};
  const std::string& name = data.sequence.name();
  for (const SyntheticFrame& f : data.frames) write_pgm(layout.images_dir(name) / (frame_stem(f.frame_id) + ".pgm"), f);
  write_text_file(layout.gt_file(name), serialize_gt(data.sequence));
  write_text_file(layout.seqinfo_file(name), format_seqinfo(info_of(data.sequence)));
  out << fmt::format("synth: {} frames, {} boxes -> {}\n", data.frames.size(), data.sequence.boxes().size(),
                     layout.sequence_dir(name).string());
}

void cmd_prepare(const std::string& root, std::ostream& out) {
  const DatasetLayout layout{root};
  std::map<std::string, std::set<int>> train_frames;
  for (const std::string& name : layout.sequence_names()) {
    const Sequence seq = load_sequence(layout, name);
    write_frame_labels(layout, seq);
    const auto [train, val] = half_split(seq);
    train_frames[name] = {train.frames().begin(), train.frames().end()};
  }
  const std::vector<IndexEntry> index = generate_path_index(layout);
  std::vector<IndexEntry> train, val;
  for (const IndexEntry& e : index) {
    // sequences/<name>/images/<stem>.<ext>
    const fs::path p(e.image);
    auto it = p.begin();
    ++it;
    const std::string name = it->string();
    int frame = 0;
    try {
      frame = std::stoi(p.stem().string());
    } catch (const std::exception&) {
      throw ParseError(fmt::format("image name {} is not a frame number", e.image), 0);
    }
    (train_frames[name].contains(frame) ? train : val).push_back(e);
  }
  write_text_file(layout.index_dir() / "all.txt", format_path_index(index));
  write_text_file(layout.index_dir() / "train.txt", format_path_index(train));
  write_text_file(layout.index_dir() / "val.txt", format_path_index(val));
  out << fmt::format("prepare: {} sequences, {} images ({} train, {} val) -> {}\n", train_frames.size(), index.size(),
                     train.size(), val.size(), layout.index_dir().string());
}

struct TrackArgs {
  std::string root;
  std::vector<std::string> sequences;
  std::string source = "gt";
  std::string out;
  double iou = kTrackerIouThreshold;
};

void cmd_track(const TrackArgs& a, std::ostream& out) {
  const DatasetLayout layout{a.root};
  for (const std::string& name : pick_sequences(layout, a.sequences)) {
    Sequence detections;
    if (a.source == "gt") {
      detections = load_sequence(layout, name);
    } else {
      SequenceInfo info = parse_seqinfo(read_text_file(layout.seqinfo_file(name)));
      if (info.name.empty()) info.name = name;
      detections = parse_gt(read_text_file(layout.sequence_dir(name) / "det" / "det.txt"), info,
                            ParseOptions{.require_track_ids = false});
    }
    const Sequence tracks = greedy_iou_tracker(detections, a.iou);
    const fs::path file = fs::path(a.out) / (name + ".txt");
    write_text_file(file, serialize_gt(tracks));
    out << fmt::format("track: {} -> {} tracks, {} boxes -> {}\n", name, tracks.tracks().size(), tracks.boxes().size(),
                       file.string());
  }
}

struct EvalArgs {
  std::string root;
  std::string pred;
  std::string out;
  std::vector<std::string> sequences;
  double iou = kDefaultIouThreshold;
  std::string motp = "distance";
};

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const DatasetLayout layout{a.root};
  std::vector<Sequence> gt, pred;
  for (const std::string& name : pick_sequences(layout, a.sequences)) {
    gt.push_back(load_sequence(layout, name));
    const fs::path file = fs::path(a.pred) / (name + ".txt");
    SequenceInfo info = info_of(gt.back());
    info.length = 0;
    try {
      pred.push_back(parse_gt(read_text_file(file), info));
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("{}: {}", file.string(), e.what()), 0);
    }
  }
  EvalOptions options;
  options.iou_threshold = a.iou;
  options.motp_mode = parse_motp_mode(a.motp);
  const MetricReport report = evaluate(gt, pred, options);
  if (!a.out.empty()) emit_metrics(a.out, "metrics", report);
  out << format_report_csv(report);
}

struct RunArgs {
  ConfigArgs config;
  std::string out;
  std::string name = "run";
};

void cmd_train(const RunArgs& a, std::ostream& out) {
  const DistillConfig cfg = resolve_config(a.config);
  const auto [train, val] = split_training_data(load_training_data(cfg));
  out << fmt::format("train: {} steps on {} frames ({} held out)\n", cfg.total_steps(), train.frames.size(),
                     val.frames.size());
  const TrainingLog log = run_training(cfg, train);
  const LossTriple v = evaluate_losses(cfg, log.student, log.head, val);
  const RunSummary summary = summarize(a.name, log, v);
  write_text_file(fs::path(a.out) / (a.name + "_log.csv"), format_training_log_csv(log));
  write_text_file(fs::path(a.out) / (a.name + ".cfg"), format_config(cfg));
  emit_runs(a.out, "runs", {summary});
  out << fmt::format("distill {:.6g} -> {:.6g}, task {:.6g} -> {:.6g}, val combined {:.6g}, {:.1f} s\n",
                     summary.initial.distill, summary.final_train.distill, summary.initial.task,
                     summary.final_train.task, v.combined, summary.wall_seconds);
}

std::string option_label(const AblationStage& stage, const DistillConfig& c) {
  if (stage.column == "Loss") return std::string(to_string(c.loss));
  if (stage.column == "Multi-Layer") return c.head == HeadKind::multi ? "multi" : "single";
  if (stage.column == "Alpha") return fmt::format("{:.2f}", c.alpha);
  return std::string(to_string(c.teacher.size));
}

void print_ablation(const AblationReport& report, std::ostream& out) {
  for (const AblationStage& stage : report.stages) {
    out << fmt::format("\nStage {} ({})\n", stage.number, stage.column);
    out << fmt::format("  {:<8} {:>12} {:>12} {:>12}\n", "option", "val_task", "val_distill", "val_combined");
    for (std::size_t k = 0; k < stage.rows.size(); ++k) {
      const AblationRow& r = stage.rows[k];
      const std::string mark = k == stage.winner ? "  *" : "";
      if (r.validation) {
        out << fmt::format("  {:<8} {:>12.6g} {:>12.6g} {:>12.6g}{}\n", option_label(stage, r.config),
                           r.validation->task, r.validation->distill, r.validation->combined, mark);
      } else {
        out << fmt::format("  {:<8} failed: {}\n", option_label(stage, r.config), r.error);
      }
    }
  }
  out << fmt::format("\nalpha=0 control matches task-only: {}\n", report.alpha_zero_matches_task_only ? "yes" : "no");
}

void cmd_ablate(const RunArgs& a, std::ostream& out) {
  AblationGrid grid;
  grid.base = resolve_config(a.config);
  grid.validate();
  const auto [train, val] = split_training_data(load_training_data(grid.base));
  const auto start = std::chrono::steady_clock::now();
  const AblationReport report = run_ablation(grid, train, val, [&](const AblationStage& stage, const AblationRow& row) {
    out << fmt::format("stage {} {}={} {} ({:.1f} s)\n", stage.number, stage.column, option_label(stage, row.config),
                       row.validation ? fmt::format("{:.6g}", row.validation->combined) : "failed", row.wall_seconds);
    out.flush();
  });
  emit_ablation(a.out, a.name == "run" ? "ablation" : a.name, report);
  print_ablation(report, out);
  out << fmt::format("total {:.1f} s\n", seconds_since(start));
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out;
};

void cmd_report(const ReportArgs& a, std::ostream& out) {
  std::vector<RunSummary> runs;
  std::vector<MetricReport> metrics;
  std::vector<AblationReport> ablations;
  for (const std::string& input : a.inputs) {
    const std::string text = read_text_file(input);
    std::string kind;
    try {
      kind = nlohmann::json::parse(text).at("kind").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("{}: not a report file ({})", input, e.what()), 0);
    }
    if (kind == "runs") {
      for (RunSummary& r : parse_runs_json(text)) runs.push_back(std::move(r));
    } else if (kind == "metric_report") {
      metrics.push_back(parse_report_json(text));
    } else if (kind == "ablation") {
      ablations.push_back(parse_ablation_json(text));
    } else {
      throw ParseError(fmt::format("{}: unknown report kind '{}'", input, kind), 0);
    }
  }
  if (ablations.size() > 1) throw DomainError("report: more than one ablation input; merge them by hand");
  if (!runs.empty()) {
    emit_runs(a.out, "runs", runs);
    out << fmt::format("report: {} runs -> runs.csv\n", runs.size());
  }
  if (!metrics.empty()) {
    const MetricReport merged = merge_metric_reports(metrics);
    emit_metrics(a.out, "metrics", merged);
    out << format_report_csv(merged);
  }
  if (!ablations.empty()) {
    emit_ablation(a.out, "ablation", ablations.front());
    print_ablation(ablations.front(), out);
  }
}

}  // namespace

TrainingData load_training_data(const DatasetLayout& layout, const std::string& name) {
  const Sequence seq = load_sequence(layout, name);
  const SequenceInfo info = parse_seqinfo(read_text_file(layout.seqinfo_file(name)));
  if (info.image_ext != ".pgm") {
    throw IoError(fmt::format("sequence {}: only .pgm frames can be loaded for training (imExt={})", name,
                              info.image_ext));
  }
  TrainingData data{seq, {}};
  for (int f : seq.frames()) data.frames.push_back(read_pgm(layout.images_dir(name) / (frame_stem(f) + ".pgm"), f));
  return data;
}

TrainingData load_training_data(const DistillConfig& config) {
  if (config.data_root.empty()) {
    SyntheticSpec spec;
    spec.seed = config.seed;
    SyntheticData d = generate_synthetic_sequence(spec);
    return {std::move(d.sequence), std::move(d.frames)};
  }
  const DatasetLayout layout{config.data_root};
  std::string name = config.sequence;
  if (name.empty()) {
    const std::vector<std::string> names = layout.sequence_names();
    if (names.empty()) throw IoError(fmt::format("no sequences under {}", layout.sequences_dir().string()));
    name = names.front();
  }
  return load_training_data(layout, name);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Feature distillation and tracking-evaluation toolkit", "kdmot"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic MOT-style sequence");
  synth_cmd->add_option("--out", synth.out, "dataset root")->required();
  synth_cmd->add_option("--name", synth.spec.name, "sequence name")->capture_default_str();
  synth_cmd->add_option("--objects", synth.spec.n_objects)->capture_default_str()->check(CLI::Range(0, 1000));
  synth_cmd->add_option("--frames", synth.spec.n_frames)->capture_default_str()->check(CLI::Range(1, 100000));
  synth_cmd->add_option("--width", synth.spec.image_width)->capture_default_str()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--height", synth.spec.image_height)->capture_default_str()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth.spec.seed)->capture_default_str();
  synth_cmd->add_flag("--lanes", synth.spec.motion.lanes, "one horizontal lane per object (no overlaps)");

  std::string prepare_root;
  CLI::App* prepare_cmd = app.add_subcommand("prepare", "write per-frame labels and path indexes");
  prepare_cmd->add_option("--root", prepare_root, "dataset root")->required();

  TrackArgs track;
  CLI::App* track_cmd = app.add_subcommand("track", "run the greedy IoU tracker");
  track_cmd->add_option("--root", track.root, "dataset root")->required();
  track_cmd->add_option("--sequence", track.sequences, "limit to these sequences");
  track_cmd->add_option("--source", track.source, "detections: gt boxes or det/det.txt")
      ->capture_default_str()
      ->check(CLI::IsMember({"gt", "det"}));
  track_cmd->add_option("--iou", track.iou, "association threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  track_cmd->add_option("--out", track.out, "directory for <sequence>.txt predictions")->required();

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
  eval_cmd->add_option("--root", eval.root, "dataset root")->required();
  eval_cmd->add_option("--pred", eval.pred, "directory of <sequence>.txt predictions")->required();
  eval_cmd->add_option("--sequence", eval.sequences, "limit to these sequences");
  eval_cmd->add_option("--out", eval.out, "write metrics.csv and metrics.json here");
  eval_cmd->add_option("--iou", eval.iou, "match threshold")->capture_default_str();
  eval_cmd->add_option("--motp", eval.motp, "distance or overlap")->capture_default_str();

  RunArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "train one distillation configuration");
  add_config_options(*train_cmd, train.config);
  train_cmd->add_option("--out", train.out, "output directory")->required();
  train_cmd->add_option("--name", train.name, "run name")->capture_default_str();

  RunArgs ablate;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "run the staged ablation grid");
  add_config_options(*ablate_cmd, ablate.config);
  ablate_cmd->add_option("--out", ablate.out, "output directory")->required();
  ablate_cmd->add_option("--name", ablate.name, "file stem (default ablation)");

  ReportArgs report;
  CLI::App* report_cmd = app.add_subcommand("report", "merge run, metric and ablation JSON outputs");
  report_cmd->add_option("--input", report.inputs, "JSON files")->required()->take_all();
  report_cmd->add_option("--out", report.out, "output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*synth_cmd) cmd_synth(synth, out);
    else if (*prepare_cmd) cmd_prepare(prepare_root, out);
    else if (*track_cmd) cmd_track(track, out);
    else if (*eval_cmd) cmd_eval(eval, out);
    else if (*train_cmd) cmd_train(train, out);
    else if (*ablate_cmd) cmd_ablate(ablate, out);
    else if (*report_cmd) cmd_report(report, out);
  } catch (const std::exception& e) {
    err << "kdmot: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace kdmot
