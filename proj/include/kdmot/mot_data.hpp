#pragma once

// MOTChallenge-style tracking data: ground-truth parsing and serialisation,
// per-frame label files, the half split, path indexes over the on-disk
// dataset layout, and a synthetic sequence generator.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace kdmot {

struct BBox {
  double left = 0.0;
  double top = 0.0;
  double width = 0.0;
  double height = 0.0;
  int frame = 0;
  int track_id = 0;
  double conf = 1.0;
  int class_id = 1;
  double visibility = 1.0;

  double right() const { return left + width; }
  double bottom() const { return top + height; }
  double center_x() const { return left + 0.5 * width; }
  double center_y() const { return top + 0.5 * height; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Annotated boxes of one video, grouped by frame. Boxes are kept sorted by
/// (frame, track_id).
class Sequence {
 public:
  Sequence() = default;

  /// Throws DomainError when a frame number is not positive, frames are not
  /// strictly increasing, a box references an unknown frame, a box has a
  /// non-positive extent, or a track id repeats within a frame.
  Sequence(std::string name, int image_width, int image_height, double fps, std::vector<int> frames,
           std::vector<BBox> boxes);

  const std::string& name() const { return name_; }
  int image_width() const { return image_width_; }
  int image_height() const { return image_height_; }
  double fps() const { return fps_; }
  const std::vector<int>& frames() const { return frames_; }
  const std::vector<BBox>& boxes() const { return boxes_; }

  std::span<const BBox> boxes_in(int frame) const;

  /// Boxes keyed by track id, each list in frame order.
  std::map<int, std::vector<BBox>> tracks() const;

  /// Copy with a different name (used when pairing predictions with ground truth).
  Sequence renamed(std::string name) const;

 private:
  std::string name_;
  int image_width_ = 0;
  int image_height_ = 0;
  double fps_ = 0.0;
  std::vector<int> frames_;
  std::vector<BBox> boxes_;
  std::map<int, std::pair<std::size_t, std::size_t>> frame_ranges_;
};

/// Metadata normally stored in a sequence's seqinfo.ini.
struct SequenceInfo {
  std::string name;
  int image_width = 0;
  int image_height = 0;
  double fps = 30.0;
  int length = 0;  // frame count; 0 means "up to the largest annotated frame"
  std::string image_ext = ".pgm";
};

struct ParseOptions {
  /// Ground truth requires positive track ids; detection files use -1.
  bool require_track_ids = true;
};

/// Parses "frame,id,left,top,width,height[,conf,class,visibility,...]" lines.
/// Fields beyond the ninth are ignored, blank lines skipped. Throws ParseError
/// with the line number on malformed input or a repeated (frame, id).
Sequence parse_gt(std::string_view text, const SequenceInfo& info, const ParseOptions& options = {});

/// Canonical form: one line per box in (frame, id) order, all nine fields,
/// shortest round-trip decimal for reals, LF line endings.
std::string serialize_gt(const Sequence& sequence);

/// One per-frame label record: class, id, normalised centre and size.
struct LabelRecord {
  int class_id = 0;
  int track_id = 0;
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
};

struct FrameLabels {
  int frame = 0;
  std::vector<LabelRecord> records;
};

/// "class id cx cy w h" with six decimals on the four reals.
std::string format_label_record(const LabelRecord& record);
LabelRecord parse_label_record(std::string_view line);
std::string format_frame_labels(const FrameLabels& labels);

/// One record set per frame of the sequence (empty for frames without boxes).
/// All records carry class 0: the student detects a single object class.
/// Throws DomainError when the sequence has zero image dimensions.
std::vector<FrameLabels> split_per_frame_labels(const Sequence& sequence);

/// Pixel-space boxes recovered from per-frame records.
std::vector<BBox> boxes_from_labels(const std::vector<FrameLabels>& labels, int image_width, int image_height);

/// First ceil(F/2) frames to train, the rest to validation.
/// Throws DomainError for fewer than two frames.
std::pair<Sequence, Sequence> half_split(const Sequence& sequence);

/// root/sequences/<name>/{images, labels_with_ids, gt/gt.txt, seqinfo.ini}
struct DatasetLayout {
  std::filesystem::path root;

  std::filesystem::path sequences_dir() const { return root / "sequences"; }
  std::filesystem::path sequence_dir(const std::string& name) const { return sequences_dir() / name; }
  std::filesystem::path images_dir(const std::string& name) const { return sequence_dir(name) / "images"; }
  std::filesystem::path labels_dir(const std::string& name) const { return sequence_dir(name) / "labels_with_ids"; }
  std::filesystem::path gt_file(const std::string& name) const { return sequence_dir(name) / "gt" / "gt.txt"; }
  std::filesystem::path seqinfo_file(const std::string& name) const { return sequence_dir(name) / "seqinfo.ini"; }
  std::filesystem::path index_dir() const { return root / "index"; }

  /// Sorted names of the directories under sequences/.
  std::vector<std::string> sequence_names() const;
};

/// Zero-padded frame file stem, e.g. 000042.
std::string frame_stem(int frame);

struct IndexEntry {
  std::string image;  // relative to the layout root, '/' separated
  std::string label;
};

/// Every image under images/ (sorted, sequences in sorted order) with its
/// label file. Throws IoError listing every image without a label.
std::vector<IndexEntry> generate_path_index(const DatasetLayout& layout);

/// One image path per line.
std::string format_path_index(const std::vector<IndexEntry>& entries);

std::string read_text_file(const std::filesystem::path& path);
/// Creates parent directories. Throws IoError when the file cannot be written.
void write_text_file(const std::filesystem::path& path, std::string_view contents);

SequenceInfo parse_seqinfo(std::string_view text);
std::string format_seqinfo(const SequenceInfo& info);

/// Loads seqinfo.ini and gt/gt.txt of one sequence.
Sequence load_sequence(const DatasetLayout& layout, const std::string& name);

/// Writes labels_with_ids/<frame>.txt for every frame of the sequence.
void write_frame_labels(const DatasetLayout& layout, const Sequence& sequence);

/// Single-channel image with intensities in [0, 1].
struct SyntheticFrame {
  int frame_id = 0;
  Eigen::MatrixXd pixels;  // rows = height, cols = width
};

/// Binary 8-bit PGM (P5).
void write_pgm(const std::filesystem::path& path, const SyntheticFrame& frame);
SyntheticFrame read_pgm(const std::filesystem::path& path, int frame_id);

struct MotionParams {
  int min_size = 6;
  int max_size = 10;
  int max_speed = 2;  // pixels per frame on each axis
  /// One horizontal band per object with horizontal motion only, so objects
  /// never overlap.
  bool lanes = false;
};

struct SyntheticSpec {
  std::string name = "synthetic";
  int n_objects = 5;
  int n_frames = 20;
  int image_width = 56;
  int image_height = 56;
  MotionParams motion;
  std::uint64_t seed = 0;
};

struct SyntheticData {
  Sequence sequence;
  std::vector<SyntheticFrame> frames;
};

/// Constant-velocity rectangles reflecting at the image border, rendered as
/// intensity-1 blocks on a zero background. Integer geometry, so rendering
/// matches the ground truth exactly. Deterministic per seed.
SyntheticData generate_synthetic_sequence(const SyntheticSpec& spec);

/// Frames paired with the sequence, looked up by frame id.
const SyntheticFrame& frame_by_id(const std::vector<SyntheticFrame>& frames, int frame_id);

}  // namespace kdmot
