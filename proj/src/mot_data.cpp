#include "kdmot/mot_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "kdmot/error.hpp"
#include "kdmot/random.hpp"

namespace kdmot {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Sequence

Sequence::Sequence(std::string name, int image_width, int image_height, double fps, std::vector<int> frames,
                   std::vector<BBox> boxes)
    : name_(std::move(name)),
      image_width_(image_width),
      image_height_(image_height),
      fps_(fps),
      frames_(std::move(frames)),
      boxes_(std::move(boxes)) {
  for (std::size_t i = 0; i < frames_.size(); ++i) {
    if (frames_[i] <= 0) throw DomainError(fmt::format("sequence {}: frame number {} is not positive", name_, frames_[i]));
    if (i > 0 && frames_[i] <= frames_[i - 1]) {
      throw DomainError(fmt::format("sequence {}: frames not strictly increasing at {}", name_, frames_[i]));
    }
  }
  std::stable_sort(boxes_.begin(), boxes_.end(), [](const BBox& a, const BBox& b) {
    return std::pair(a.frame, a.track_id) < std::pair(b.frame, b.track_id);
  });
  for (std::size_t i = 0; i < boxes_.size(); ++i) {
    const BBox& box = boxes_[i];
    if (!(box.width > 0.0) || !(box.height > 0.0)) {
      throw DomainError(fmt::format("sequence {}: box of track {} in frame {} has non-positive extent", name_,
                                    box.track_id, box.frame));
    }
    if (!std::binary_search(frames_.begin(), frames_.end(), box.frame)) {
      throw DomainError(fmt::format("sequence {}: box references unknown frame {}", name_, box.frame));
    }
    if (i > 0 && boxes_[i - 1].frame == box.frame && boxes_[i - 1].track_id == box.track_id) {
      throw DomainError(fmt::format("sequence {}: track {} appears twice in frame {}", name_, box.track_id, box.frame));
    }
  }
  std::size_t begin = 0;
  while (begin < boxes_.size()) {
    std::size_t end = begin;
    while (end < boxes_.size() && boxes_[end].frame == boxes_[begin].frame) ++end;
    frame_ranges_[boxes_[begin].frame] = {begin, end};
    begin = end;
  }
}

std::span<const BBox> Sequence::boxes_in(int frame) const {
  auto it = frame_ranges_.find(frame);
  if (it == frame_ranges_.end()) return {};
  return std::span<const BBox>(boxes_).subspan(it->second.first, it->second.second - it->second.first);
}

std::map<int, std::vector<BBox>> Sequence::tracks() const {
  std::map<int, std::vector<BBox>> out;
  for (const BBox& box : boxes_) out[box.track_id].push_back(box);
  return out;
}

Sequence Sequence::renamed(std::string name) const {
  Sequence copy = *this;
  copy.name_ = std::move(name);
  return copy;
}

// ---------------------------------------------------------------------------
// Ground truth text

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_real(std::string_view field, const char* what, std::size_t line) {
  double value = 0.0;
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(value)) {
    throw ParseError(fmt::format("invalid {} '{}'", what, field), line);
  }
  return value;
}

int parse_int(std::string_view field, const char* what, std::size_t line) {
  const double value = parse_real(field, what, line);
  if (value != std::floor(value) || std::abs(value) > 2e9) {
    throw ParseError(fmt::format("{} '{}' is not an integer", what, field), line);
  }
  return static_cast<int>(value);
}

std::string shortest(double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, ptr);
}

}  // namespace

Sequence parse_gt(std::string_view text, const SequenceInfo& info, const ParseOptions& options) {
  std::vector<BBox> boxes;
  std::set<std::pair<int, int>> seen;
  int max_frame = 0;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    const std::string_view line = trim(text.substr(start, end - start));
    ++line_no;
    start = end + 1;
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto fields = split(line, ',');
    if (fields.size() < 6) {
      throw ParseError(fmt::format("expected at least 6 comma-separated fields, got {}", fields.size()), line_no);
    }
    BBox box;
    box.frame = parse_int(fields[0], "frame", line_no);
    box.track_id = parse_int(fields[1], "track id", line_no);
    box.left = parse_real(fields[2], "left", line_no);
    box.top = parse_real(fields[3], "top", line_no);
    box.width = parse_real(fields[4], "width", line_no);
    box.height = parse_real(fields[5], "height", line_no);
    if (fields.size() > 6) box.conf = parse_real(fields[6], "confidence", line_no);
    if (fields.size() > 7) box.class_id = parse_int(fields[7], "class", line_no);
    if (fields.size() > 8) box.visibility = parse_real(fields[8], "visibility", line_no);

    if (box.frame <= 0) throw ParseError(fmt::format("frame {} is not positive", box.frame), line_no);
    if (options.require_track_ids && box.track_id <= 0) {
      throw ParseError(fmt::format("track id {} is not positive", box.track_id), line_no);
    }
    if (!(box.width > 0.0) || !(box.height > 0.0)) throw ParseError("box width and height must be positive", line_no);
    if (info.length > 0 && box.frame > info.length) {
      throw ParseError(fmt::format("frame {} beyond sequence length {}", box.frame, info.length), line_no);
    }
    if (options.require_track_ids && !seen.emplace(box.frame, box.track_id).second) {
      throw ParseError(fmt::format("duplicate box for track {} in frame {}", box.track_id, box.frame), line_no);
    }
    max_frame = std::max(max_frame, box.frame);
    boxes.push_back(box);
    if (end == text.size()) break;
  }

  if (!options.require_track_ids) {
    // Detections carry no identity; give them unique ids per frame.
    std::map<int, int> counter;
    std::stable_sort(boxes.begin(), boxes.end(), [](const BBox& a, const BBox& b) { return a.frame < b.frame; });
    for (BBox& box : boxes) box.track_id = ++counter[box.frame];
  }

  const int length = info.length > 0 ? info.length : max_frame;
  std::vector<int> frames(static_cast<std::size_t>(length));
  for (int f = 0; f < length; ++f) frames[static_cast<std::size_t>(f)] = f + 1;
  return Sequence(info.name, info.image_width, info.image_height, info.fps, std::move(frames), std::move(boxes));
}

std::string serialize_gt(const Sequence& sequence) {
  std::string out;
  for (const BBox& b : sequence.boxes()) {
    out += fmt::format("{},{},{},{},{},{},{},{},{}\n", b.frame, b.track_id, shortest(b.left), shortest(b.top),
                       shortest(b.width), shortest(b.height), shortest(b.conf), b.class_id, shortest(b.visibility));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-frame labels

std::string format_label_record(const LabelRecord& r) {
  return fmt::format("{} {} {:.6f} {:.6f} {:.6f} {:.6f}", r.class_id, r.track_id, r.cx, r.cy, r.w, r.h);
}

LabelRecord parse_label_record(std::string_view line) {
  const auto fields = split_whitespace(line);
  if (fields.size() != 6) throw ParseError(fmt::format("label record needs 6 fields, got {}", fields.size()), 0);
  LabelRecord r;
  r.class_id = parse_int(fields[0], "class", 0);
  r.track_id = parse_int(fields[1], "track id", 0);
  r.cx = parse_real(fields[2], "cx", 0);
  r.cy = parse_real(fields[3], "cy", 0);
  r.w = parse_real(fields[4], "w", 0);
  r.h = parse_real(fields[5], "h", 0);
  return r;
}

std::string format_frame_labels(const FrameLabels& labels) {
  std::string out;
  for (const LabelRecord& r : labels.records) {
    out += format_label_record(r);
    out += '\n';
  }
  return out;
}

std::vector<FrameLabels> split_per_frame_labels(const Sequence& sequence) {
  if (sequence.image_width() <= 0 || sequence.image_height() <= 0) {
    throw DomainError(fmt::format("sequence {}: image dimensions must be positive to normalise labels", sequence.name()));
  }
  const double w = sequence.image_width(), h = sequence.image_height();
  std::vector<FrameLabels> out;
  out.reserve(sequence.frames().size());
  for (int frame : sequence.frames()) {
    FrameLabels labels{frame, {}};
    for (const BBox& box : sequence.boxes_in(frame)) {
      labels.records.push_back({0, box.track_id, box.center_x() / w, box.center_y() / h, box.width / w, box.height / h});
    }
    out.push_back(std::move(labels));
  }
  return out;
}

std::vector<BBox> boxes_from_labels(const std::vector<FrameLabels>& labels, int image_width, int image_height) {
  std::vector<BBox> out;
  for (const FrameLabels& frame : labels) {
    for (const LabelRecord& r : frame.records) {
      BBox box;
      box.frame = frame.frame;
      box.track_id = r.track_id;
      box.width = r.w * image_width;
      box.height = r.h * image_height;
      box.left = r.cx * image_width - 0.5 * box.width;
      box.top = r.cy * image_height - 0.5 * box.height;
      out.push_back(box);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Half split

std::pair<Sequence, Sequence> half_split(const Sequence& sequence) {
  const auto& frames = sequence.frames();
  if (frames.size() < 2) {
    throw DomainError(fmt::format("sequence {}: half split needs at least 2 frames, has {}", sequence.name(),
                                  frames.size()));
  }
  const std::size_t cut = (frames.size() + 1) / 2;
  const std::vector<int> train_frames(frames.begin(), frames.begin() + static_cast<std::ptrdiff_t>(cut));
  const std::vector<int> val_frames(frames.begin() + static_cast<std::ptrdiff_t>(cut), frames.end());
  std::vector<BBox> train_boxes, val_boxes;
  for (const BBox& box : sequence.boxes()) {
    (box.frame <= train_frames.back() ? train_boxes : val_boxes).push_back(box);
  }
  return {Sequence(sequence.name(), sequence.image_width(), sequence.image_height(), sequence.fps(), train_frames,
                   std::move(train_boxes)),
          Sequence(sequence.name(), sequence.image_width(), sequence.image_height(), sequence.fps(), val_frames,
                   std::move(val_boxes))};
}

// ---------------------------------------------------------------------------
// Files and layout

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot read {}", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text_file(const fs::path& path, std::string_view contents) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError(fmt::format("failed writing {}", path.string()));
}

std::vector<std::string> DatasetLayout::sequence_names() const {
  std::vector<std::string> names;
  std::error_code ec;
  if (!fs::is_directory(sequences_dir(), ec)) {
    throw IoError(fmt::format("dataset root {} has no sequences/ directory", root.string()));
  }
  for (const auto& entry : fs::directory_iterator(sequences_dir())) {
    if (entry.is_directory()) names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

std::string frame_stem(int frame) { return fmt::format("{:06d}", frame); }

std::vector<IndexEntry> generate_path_index(const DatasetLayout& layout) {
  static const std::set<std::string> image_extensions = {".jpg", ".jpeg", ".png", ".pgm"};
  std::vector<IndexEntry> entries;
  std::vector<std::string> orphans;
  for (const std::string& name : layout.sequence_names()) {
    const fs::path images = layout.images_dir(name);
    std::error_code ec;
    if (!fs::is_directory(images, ec)) throw IoError(fmt::format("sequence {} has no images/ directory", name));
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(images)) {
      if (entry.is_regular_file() && image_extensions.contains(entry.path().extension().string())) {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    for (const fs::path& image : files) {
      const fs::path label = layout.labels_dir(name) / (image.stem().string() + ".txt");
      const std::string image_rel = fs::relative(image, layout.root).generic_string();
      if (!fs::is_regular_file(label, ec)) {
        orphans.push_back(image_rel);
        continue;
      }
      entries.push_back({image_rel, fs::relative(label, layout.root).generic_string()});
    }
  }
  if (!orphans.empty()) {
    std::string list;
    for (const auto& o : orphans) list += "\n  " + o;
    throw IoError(fmt::format("{} image(s) without a label file:{}", orphans.size(), list));
  }
  return entries;
}

std::string format_path_index(const std::vector<IndexEntry>& entries) {
  std::string out;
  for (const IndexEntry& e : entries) {
    out += e.image;
    out += '\n';
  }
  return out;
}

SequenceInfo parse_seqinfo(std::string_view text) {
  SequenceInfo info;
  std::size_t line_no = 0, start = 0;
  while (start < text.size()) {
    const std::size_t end = std::min(text.find('\n', start), text.size());
    const std::string_view line = trim(text.substr(start, end - start));
    ++line_no;
    start = end + 1;
    if (line.empty() || line.front() == '[' || line.front() == ';' || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError("expected key=value", line_no);
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (key == "name") info.name = std::string(value);
    else if (key == "frameRate") info.fps = parse_real(value, "frameRate", line_no);
    else if (key == "seqLength") info.length = parse_int(value, "seqLength", line_no);
    else if (key == "imWidth") info.image_width = parse_int(value, "imWidth", line_no);
    else if (key == "imHeight") info.image_height = parse_int(value, "imHeight", line_no);
    else if (key == "imExt") info.image_ext = std::string(value);
  }
  return info;
}

std::string format_seqinfo(const SequenceInfo& info) {
  return fmt::format(
      "[Sequence]\nname={}\nimDir=images\nframeRate={}\nseqLength={}\nimWidth={}\nimHeight={}\nimExt={}\n", info.name,
      shortest(info.fps), info.length, info.image_width, info.image_height, info.image_ext);
}

Sequence load_sequence(const DatasetLayout& layout, const std::string& name) {
  SequenceInfo info = parse_seqinfo(read_text_file(layout.seqinfo_file(name)));
  if (info.name.empty()) info.name = name;
  try {
    return parse_gt(read_text_file(layout.gt_file(name)), info);
  } catch (const ParseError& e) {
    throw ParseError(fmt::format("{}: {}", layout.gt_file(name).string(), e.what()), 0);
  }
}

void write_frame_labels(const DatasetLayout& layout, const Sequence& sequence) {
  for (const FrameLabels& labels : split_per_frame_labels(sequence)) {
    write_text_file(layout.labels_dir(sequence.name()) / (frame_stem(labels.frame) + ".txt"),
                    format_frame_labels(labels));
  }
}

// ---------------------------------------------------------------------------
// PGM

void write_pgm(const fs::path& path, const SyntheticFrame& frame) {
  std::string data = fmt::format("P5\n{} {}\n255\n", frame.pixels.cols(), frame.pixels.rows());
  for (Eigen::Index r = 0; r < frame.pixels.rows(); ++r) {
    for (Eigen::Index c = 0; c < frame.pixels.cols(); ++c) {
      const double v = std::clamp(frame.pixels(r, c), 0.0, 1.0);
      data.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
  }
  write_text_file(path, data);
}

SyntheticFrame read_pgm(const fs::path& path, int frame_id) {
  const std::string data = read_text_file(path);
  std::istringstream header(data);
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  header >> magic >> width >> height >> maxval;
  if (magic != "P5" || width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw ParseError(fmt::format("{}: not an 8-bit binary PGM", path.string()), 0);
  }
  const auto offset = static_cast<std::size_t>(header.tellg()) + 1;
  if (data.size() < offset + static_cast<std::size_t>(width * height)) {
    throw ParseError(fmt::format("{}: truncated PGM", path.string()), 0);
  }
  SyntheticFrame frame{frame_id, Eigen::MatrixXd(height, width)};
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      frame.pixels(r, c) = static_cast<unsigned char>(data[offset + static_cast<std::size_t>(r * width + c)]) /
                           static_cast<double>(maxval);
    }
  }
  return frame;
}

// ---------------------------------------------------------------------------
// Synthetic sequences

namespace {

struct Mover {
  int x, y, w, h, vx, vy;
};

void step_axis(int& pos, int& vel, int size, int limit_lo, int limit_hi) {
  pos += vel;
  if (pos < limit_lo) {
    pos = 2 * limit_lo - pos;
    vel = -vel;
  }
  if (pos + size > limit_hi) {
    pos = 2 * (limit_hi - size) - pos;
    vel = -vel;
  }
  pos = std::clamp(pos, limit_lo, limit_hi - size);
}

}  // namespace

SyntheticData generate_synthetic_sequence(const SyntheticSpec& spec) {
  const MotionParams& m = spec.motion;
  if (spec.n_objects < 1 || spec.n_frames < 1) throw DomainError("synthetic sequence needs at least one object and frame");
  if (spec.image_width < 1 || spec.image_height < 1) throw DomainError("synthetic image dimensions must be positive");
  if (m.min_size < 1 || m.max_size < m.min_size || m.max_speed < 0) throw DomainError("invalid synthetic motion parameters");
  if (m.max_size > spec.image_width || m.max_size > spec.image_height) {
    throw DomainError(fmt::format("objects up to {}px do not fit a {}x{} image", m.max_size, spec.image_width,
                                  spec.image_height));
  }
  const int band = m.lanes ? spec.image_height / spec.n_objects : spec.image_height;
  if (m.lanes && band < m.max_size) {
    throw DomainError(fmt::format("{} lanes of {}px cannot hold objects up to {}px", spec.n_objects, band, m.max_size));
  }

  Rng rng(spec.seed);
  std::vector<Mover> movers;
  std::vector<std::pair<int, int>> vertical_limits;
  for (int k = 0; k < spec.n_objects; ++k) {
    Mover o{};
    o.w = static_cast<int>(rng.integer(m.min_size, m.max_size));
    o.h = static_cast<int>(rng.integer(m.min_size, m.max_size));
    const int lo = m.lanes ? k * band : 0;
    const int hi = m.lanes ? lo + band : spec.image_height;
    o.x = static_cast<int>(rng.integer(0, spec.image_width - o.w));
    o.y = static_cast<int>(rng.integer(lo, hi - o.h));
    o.vx = static_cast<int>(rng.integer(-m.max_speed, m.max_speed));
    o.vy = m.lanes ? 0 : static_cast<int>(rng.integer(-m.max_speed, m.max_speed));
    movers.push_back(o);
    vertical_limits.emplace_back(lo, hi);
  }

  SyntheticData data;
  std::vector<int> frames;
  std::vector<BBox> boxes;
  for (int f = 1; f <= spec.n_frames; ++f) {
    if (f > 1) {
      for (std::size_t k = 0; k < movers.size(); ++k) {
        step_axis(movers[k].x, movers[k].vx, movers[k].w, 0, spec.image_width);
        step_axis(movers[k].y, movers[k].vy, movers[k].h, vertical_limits[k].first, vertical_limits[k].second);
      }
    }
    frames.push_back(f);
    SyntheticFrame frame{f, Eigen::MatrixXd::Zero(spec.image_height, spec.image_width)};
    for (std::size_t k = 0; k < movers.size(); ++k) {
      const Mover& o = movers[k];
      frame.pixels.block(o.y, o.x, o.h, o.w).setOnes();
      BBox box;
      box.frame = f;
      box.track_id = static_cast<int>(k) + 1;
      box.left = o.x;
      box.top = o.y;
      box.width = o.w;
      box.height = o.h;
      boxes.push_back(box);
    }
    data.frames.push_back(std::move(frame));
  }
  data.sequence = Sequence(spec.name, spec.image_width, spec.image_height, 30.0, std::move(frames), std::move(boxes));
  return data;
}

const SyntheticFrame& frame_by_id(const std::vector<SyntheticFrame>& frames, int frame_id) {
  auto it = std::find_if(frames.begin(), frames.end(), [&](const SyntheticFrame& f) { return f.frame_id == frame_id; });
  if (it == frames.end()) throw DomainError(fmt::format("no frame with id {}", frame_id));
  return *it;
}

}  // namespace kdmot
