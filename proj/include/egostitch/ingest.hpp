#pragma once

// Readers and writers for the interchange formats:
//   depth   - PFM, grayscale "Pf"
//   masks   - binary PGM "P5", strictly 0/255
//   poses   - JSON lines {"frame_id": n, "T": [16 numbers, row-major 4x4]}
//   clouds  - ASCII PLY
// plus the track index and the sequence manifest that ties them together.

#include <fmt/args.h>
#include <fmt/format.h>

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SVD>

#include "egostitch/chunking.hpp"
#include "egostitch/core.hpp"

namespace egostitch {

namespace fs = std::filesystem;
using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// small helpers

/// Shortest decimal form that parses back to the same double.
inline std::string format_number(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{}) throw FormatError("cannot format number");
  return std::string(buf.data(), end);
}

inline std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file_bytes(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

/// Expands `{frame}`/`{frame:06}` and `{chunk}`/`{chunk:03}` style placeholders.
inline std::string expand_pattern(const std::string& pattern, int frame, int chunk = 0) {
  fmt::dynamic_format_arg_store<fmt::format_context> args;
  args.push_back(fmt::arg("frame", frame));
  args.push_back(fmt::arg("chunk", chunk));
  try {
    return fmt::vformat(pattern, args);
  } catch (const fmt::format_error& e) {
    throw ConfigError("bad path pattern '" + pattern + "': " + e.what());
  }
}

/// File name used for every per-frame mask series.
inline std::string mask_file_name(int frame) { return fmt::format("D_{:06}.pgm", frame); }

namespace detail {

/// Whitespace-delimited header tokens of PNM-style files. Stops right after
/// the single whitespace byte that terminates the last token.
class HeaderReader {
 public:
  explicit HeaderReader(std::string_view bytes) : bytes_(bytes) {}

  std::string next(bool allow_comments) {
    skip_space(allow_comments);
    const std::size_t begin = pos_;
    while (pos_ < bytes_.size() && !is_space(bytes_[pos_])) ++pos_;
    if (begin == pos_) throw FormatError("truncated header");
    std::string token(bytes_.substr(begin, pos_ - begin));
    return token;
  }

  void consume_single_space() {
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) throw FormatError("header not terminated by whitespace");
    ++pos_;
  }

  std::size_t position() const { return pos_; }

 private:
  static bool is_space(char c) { return c == ' ' || c == '\n' || c == '\r' || c == '\t'; }

  void skip_space(bool allow_comments) {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (allow_comments && bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

inline int parse_int(const std::string& s, const char* what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw FormatError(std::string("bad ") + what + ": '" + s + "'");
  return v;
}

inline double parse_double(const std::string& s, const char* what) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) throw FormatError(std::string("bad ") + what + ": '" + s + "'");
  return v;
}

inline std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PFM depth

enum class Endian { Little, Big };

inline Raster<float> decode_pfm(std::string_view bytes) {
  detail::HeaderReader hdr(bytes);
  const std::string magic = hdr.next(false);
  if (magic == "PF") throw FormatError("PFM: colour PFM not supported, expected 'Pf'");
  if (magic != "Pf") throw FormatError("PFM: bad magic '" + magic + "'");
  const int width = detail::parse_int(hdr.next(false), "PFM width");
  const int height = detail::parse_int(hdr.next(false), "PFM height");
  const double scale = detail::parse_double(hdr.next(false), "PFM scale");
  hdr.consume_single_space();
  if (width <= 0 || height <= 0) throw FormatError("PFM: non-positive dimensions");
  if (scale == 0.0 || !std::isfinite(scale)) throw FormatError("PFM: scale must be finite and non-zero");
  const Endian endian = scale < 0.0 ? Endian::Little : Endian::Big;

  const std::size_t count = static_cast<std::size_t>(width) * height;
  const std::size_t offset = hdr.position();
  if (bytes.size() - offset < count * 4) throw FormatError("PFM: truncated raster data");

  Raster<float> out(width, height);
  const bool swap = (endian == Endian::Little) != (std::endian::native == std::endian::little);
  for (int row = 0; row < height; ++row) {
    // rows are stored bottom-to-top
    const int y = height - 1 - row;
    for (int x = 0; x < width; ++x) {
      std::uint32_t raw;
      std::memcpy(&raw, bytes.data() + offset + (static_cast<std::size_t>(row) * width + x) * 4, 4);
      if (swap) raw = detail::byteswap32(raw);
      out(x, y) = std::bit_cast<float>(raw);
    }
  }
  return out;
}

inline std::string encode_pfm(const Raster<float>& raster, Endian endian = Endian::Little) {
  std::string out = fmt::format("Pf\n{} {}\n{}\n", raster.width(), raster.height(), endian == Endian::Little ? "-1.0" : "1.0");
  const std::size_t offset = out.size();
  out.resize(offset + raster.size() * 4);
  const bool swap = (endian == Endian::Little) != (std::endian::native == std::endian::little);
  for (int row = 0; row < raster.height(); ++row) {
    const int y = raster.height() - 1 - row;
    for (int x = 0; x < raster.width(); ++x) {
      auto raw = std::bit_cast<std::uint32_t>(raster(x, y));
      if (swap) raw = detail::byteswap32(raw);
      std::memcpy(out.data() + offset + (static_cast<std::size_t>(row) * raster.width() + x) * 4, &raw, 4);
    }
  }
  return out;
}

inline Raster<float> load_pfm(const fs::path& path) {
  try {
    return decode_pfm(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_pfm(const Raster<float>& raster, const fs::path& path, Endian endian = Endian::Little) {
  write_file_bytes(path, encode_pfm(raster, endian));
}

/// Loads a depth raster and attaches intrinsics; the raster must match them.
inline DepthFrame load_depth(const fs::path& path, int frame_id, const Intrinsics& intrinsics) {
  DepthFrame f;
  f.frame_id = frame_id;
  f.depth = load_pfm(path);
  f.intrinsics = intrinsics;
  if (!f.depth.same_shape(intrinsics.width, intrinsics.height)) {
    throw ConsistencyError(fmt::format("{}: depth is {}x{}, expected {}x{}", path.string(), f.depth.width(),
                                       f.depth.height(), intrinsics.width, intrinsics.height));
  }
  return f;
}

inline void save_depth(const DepthFrame& frame, const fs::path& path) { save_pfm(frame.depth, path); }

// ---------------------------------------------------------------------------
// PGM masks

inline BinaryMask decode_mask(std::string_view bytes) {
  detail::HeaderReader hdr(bytes);
  const std::string magic = hdr.next(true);
  if (magic != "P5") throw FormatError("PGM: expected binary 'P5', got '" + magic + "'");
  const int width = detail::parse_int(hdr.next(true), "PGM width");
  const int height = detail::parse_int(hdr.next(true), "PGM height");
  const int maxval = detail::parse_int(hdr.next(true), "PGM maxval");
  hdr.consume_single_space();
  if (width <= 0 || height <= 0) throw FormatError("PGM: non-positive dimensions");
  if (maxval != 255) throw FormatError("PGM: maxval must be 255, got " + std::to_string(maxval));
  const std::size_t count = static_cast<std::size_t>(width) * height;
  const std::size_t offset = hdr.position();
  if (bytes.size() - offset < count) throw FormatError("PGM: truncated raster data");
  BinaryMask mask(width, height);
  for (std::size_t i = 0; i < count; ++i) {
    const auto b = static_cast<unsigned char>(bytes[offset + i]);
    if (b == 255) {
      mask.set_index(i);
    } else if (b != 0) {
      throw FormatError("PGM: mask byte " + std::to_string(b) + " at index " + std::to_string(i) + " is not 0 or 255");
    }
  }
  return mask;
}

inline std::string encode_mask(const BinaryMask& mask) {
  std::string out = fmt::format("P5\n{} {}\n255\n", mask.width(), mask.height());
  out.reserve(out.size() + mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) out.push_back(mask.test(i) ? static_cast<char>(255) : '\0');
  return out;
}

inline BinaryMask load_mask(const fs::path& path) {
  try {
    return decode_mask(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_mask(const BinaryMask& mask, const fs::path& path) { write_file_bytes(path, encode_mask(mask)); }

// ---------------------------------------------------------------------------
// Poses

inline constexpr double kPoseRejectTolerance = 1e-4;
// Rotations already orthonormal to this level are kept bit-for-bit.
inline constexpr double kPoseKeepTolerance = 1e-12;

inline Mat3 nearest_rotation(const Mat3& m) {
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

/// Builds a pose from a row-major 4x4. Rejects non-homogeneous bottom rows and
/// non-rigid rotation blocks; re-orthonormalizes small deviations.
inline Pose pose_from_row_major(const std::array<double, 16>& m) {
  for (double v : m) {
    if (!std::isfinite(v)) throw ValidationError("pose: non-finite matrix entry");
  }
  if (m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0) {
    throw ValidationError("pose: bottom row must be (0, 0, 0, 1)");
  }
  Pose p;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) p.rotation(r, c) = m[r * 4 + c];
    p.translation(r) = m[r * 4 + 3];
  }
  const double err = orthonormality_error(p.rotation);
  if (!(err < kPoseRejectTolerance) || p.rotation.determinant() <= 0.0) {
    throw ValidationError("pose: rotation block is not a rotation (|R^T R - I| = " + format_number(err) + ")");
  }
  if (err > kPoseKeepTolerance) p.rotation = nearest_rotation(p.rotation);
  return p;
}

inline std::array<double, 16> pose_to_row_major(const Pose& p) {
  std::array<double, 16> m{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m[r * 4 + c] = p.rotation(r, c);
    m[r * 4 + 3] = p.translation(r);
  }
  m[15] = 1.0;
  return m;
}

using FramePose = std::pair<int, Pose>;

inline std::vector<FramePose> parse_poses(std::string_view text) {
  std::vector<FramePose> out;
  std::set<int> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    Json rec;
    try {
      rec = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw FormatError("poses line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!rec.is_object() || !rec.contains("frame_id") || !rec.contains("T")) {
      throw FormatError("poses line " + std::to_string(line_no) + ": expected {\"frame_id\", \"T\"}");
    }
    const Json& t = rec["T"];
    if (!rec["frame_id"].is_number_integer() || !t.is_array() || t.size() != 16) {
      throw FormatError("poses line " + std::to_string(line_no) + ": T must hold 16 numbers");
    }
    std::array<double, 16> m{};
    for (std::size_t i = 0; i < 16; ++i) {
      if (!t[i].is_number()) throw FormatError("poses line " + std::to_string(line_no) + ": non-numeric entry");
      m[i] = t[i].get<double>();
    }
    const int frame_id = rec["frame_id"].get<int>();
    if (!seen.insert(frame_id).second) {
      throw ConsistencyError("poses: duplicate frame_id " + std::to_string(frame_id));
    }
    try {
      out.emplace_back(frame_id, pose_from_row_major(m));
    } catch (const ValidationError& e) {
      throw ValidationError("poses line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::string format_poses(const std::vector<FramePose>& poses) {
  std::string out;
  for (const auto& [frame_id, pose] : poses) {
    out += "{\"frame_id\":" + std::to_string(frame_id) + ",\"T\":[";
    const auto m = pose_to_row_major(pose);
    for (std::size_t i = 0; i < 16; ++i) {
      if (i) out += ',';
      out += format_number(m[i]);
    }
    out += "]}\n";
  }
  return out;
}

inline std::vector<FramePose> load_poses(const fs::path& path) {
  try {
    return parse_poses(read_file_bytes(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io) throw;
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

inline void save_poses(const std::vector<FramePose>& poses, const fs::path& path) {
  write_file_bytes(path, format_poses(poses));
}

// ---------------------------------------------------------------------------
// PLY point clouds

inline std::string encode_ply(const PointCloud& cloud) {
  for (const auto& p : cloud.points) {
    if (!p.allFinite()) throw ValidationError("point cloud contains non-finite coordinates");
  }
  const bool ids = cloud.has_chunk_ids();
  bool small_ids = true;
  for (int id : cloud.chunk_ids) small_ids = small_ids && id >= 0 && id <= 255;
  std::string out = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
                    "\nproperty double x\nproperty double y\nproperty double z\n";
  if (ids) out += small_ids ? "property uchar chunk\n" : "property int chunk\n";
  out += "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    out += format_number(p.x()) + ' ' + format_number(p.y()) + ' ' + format_number(p.z());
    if (ids) out += ' ' + std::to_string(cloud.chunk_ids[i]);
    out += '\n';
  }
  return out;
}

/// Reads ASCII PLY files with a single vertex element holding x y z and an
/// optional integer `chunk` property. Other properties are skipped.
inline PointCloud decode_ply(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw FormatError("PLY: missing magic");
  std::size_t count = 0;
  bool have_vertex = false;
  bool ascii = false;
  std::vector<std::string> props;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string f;
      ls >> f;
      ascii = f == "ascii";
    } else if (kw == "element") {
      std::string name;
      ls >> name >> count;
      if (name != "vertex") throw FormatError("PLY: only a vertex element is supported");
      have_vertex = true;
    } else if (kw == "property") {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    }
  }
  if (!ascii) throw FormatError("PLY: only ascii format is supported");
  if (!have_vertex) throw FormatError("PLY: no vertex element");
  auto find = [&](const std::string& n) -> int {
    auto it = std::find(props.begin(), props.end(), n);
    return it == props.end() ? -1 : static_cast<int>(it - props.begin());
  };
  const int ix = find("x"), iy = find("y"), iz = find("z"), ic = find("chunk");
  if (ix < 0 || iy < 0 || iz < 0) throw FormatError("PLY: x/y/z properties required");
  PointCloud cloud;
  cloud.points.reserve(count);
  std::vector<std::string> fields(props.size());
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw FormatError("PLY: fewer vertices than declared");
    std::istringstream ls(line);
    for (auto& f : fields) {
      if (!(ls >> f)) throw FormatError("PLY: short vertex line");
    }
    cloud.points.emplace_back(detail::parse_double(fields[ix], "x"), detail::parse_double(fields[iy], "y"),
                              detail::parse_double(fields[iz], "z"));
    if (ic >= 0) cloud.chunk_ids.push_back(detail::parse_int(fields[ic], "chunk"));
  }
  return cloud;
}

inline void save_pointcloud(const PointCloud& cloud, const fs::path& path) { write_file_bytes(path, encode_ply(cloud)); }

inline PointCloud load_pointcloud(const fs::path& path) { return decode_ply(read_file_bytes(path)); }

// ---------------------------------------------------------------------------
// Track index

enum class TrackCategory { Hand, Object };

struct Track {
  int track_id = 0;
  std::string name;
  TrackCategory category = TrackCategory::Object;
  std::optional<int> onset_frame;
  /// Mask path pattern, relative to the track index file.
  std::string mask_pattern;

  bool is_hand() const { return category == TrackCategory::Hand; }
};

struct TrackIndex {
  std::vector<Track> tracks;
  fs::path base_dir;

  fs::path mask_path(const Track& track, int frame) const { return base_dir / expand_pattern(track.mask_pattern, frame); }

  /// Instance mask of a track at a frame. A missing file means the instance
  /// is not visible there and yields an empty mask.
  BinaryMask load_instance_mask(const Track& track, int frame, int width, int height) const {
    const fs::path p = mask_path(track, frame);
    if (!fs::exists(p)) return BinaryMask(width, height);
    BinaryMask m = load_mask(p);
    if (m.width() != width || m.height() != height) {
      throw ConsistencyError(p.string() + ": mask size does not match the sequence image size");
    }
    return m;
  }

  void validate(int frame_count) const {
    std::set<int> ids;
    for (const auto& t : tracks) {
      if (!ids.insert(t.track_id).second) throw ValidationError("track index: duplicate track_id " + std::to_string(t.track_id));
      if (t.is_hand() && t.onset_frame) throw ValidationError("track index: hand track " + std::to_string(t.track_id) + " has an onset");
      if (!t.is_hand() && t.onset_frame && (*t.onset_frame < 0 || *t.onset_frame >= frame_count)) {
        throw ValidationError("track index: onset of track " + std::to_string(t.track_id) + " outside [0, T)");
      }
      if (t.mask_pattern.empty()) throw ValidationError("track index: track " + std::to_string(t.track_id) + " has no mask pattern");
    }
  }
};

inline Json track_index_to_json(const TrackIndex& index) {
  Json arr = Json::array();
  for (const auto& t : index.tracks) {
    Json j = {{"track_id", t.track_id},
              {"name", t.name},
              {"category", t.is_hand() ? "hand" : "object"},
              {"mask_pattern", t.mask_pattern}};
    if (t.onset_frame) j["onset_frame"] = *t.onset_frame;
    arr.push_back(std::move(j));
  }
  return Json{{"tracks", arr}};
}

inline TrackIndex track_index_from_json(const Json& j, const fs::path& base_dir) {
  TrackIndex index;
  index.base_dir = base_dir;
  try {
    for (const auto& e : j.at("tracks")) {
      Track t;
      t.track_id = e.at("track_id").get<int>();
      t.name = e.value("name", std::string{});
      const std::string cat = e.at("category").get<std::string>();
      if (cat == "hand") {
        t.category = TrackCategory::Hand;
      } else if (cat == "object") {
        t.category = TrackCategory::Object;
      } else {
        throw ValidationError("track index: unknown category '" + cat + "'");
      }
      if (e.contains("onset_frame") && !e["onset_frame"].is_null()) t.onset_frame = e["onset_frame"].get<int>();
      t.mask_pattern = e.at("mask_pattern").get<std::string>();
      index.tracks.push_back(std::move(t));
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("track index: ") + e.what());
  }
  return index;
}

inline Json load_json_file(const fs::path& path) {
  const std::string text = read_file_bytes(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_json_file(const Json& j, const fs::path& path) { write_file_bytes(path, j.dump(2) + "\n"); }

inline TrackIndex load_track_index(const fs::path& path, int frame_count) {
  TrackIndex index = track_index_from_json(load_json_file(path), path.parent_path());
  index.validate(frame_count);
  return index;
}

// ---------------------------------------------------------------------------
// Sequence manifest

enum class EvalMaskKind { Instantaneous, Footprint };

inline std::string_view eval_dir_key(EvalMaskKind k) {
  return k == EvalMaskKind::Instantaneous ? "union_mask_dynamics" : "union_mask_fulltime";
}
inline std::string_view eval_short_name(EvalMaskKind k) {
  return k == EvalMaskKind::Instantaneous ? "dynamics" : "fulltime";
}

struct ChunkRecord {
  int chunk_id = 0;
  std::string poses;          // relative to the manifest
  std::string depth_pattern;  // relative to the manifest
  Intrinsics intrinsics;
};

struct SequenceManifest {
  fs::path base_dir;
  int frame_count = 0;
  double fps = 0.0;
  int width = 0;
  int height = 0;
  int chunk_length = 0;
  int overlap = 0;
  std::vector<ChunkRecord> chunks;
  std::string tracks;  // relative to the manifest
  std::map<EvalMaskKind, std::string> eval_dirs;

  std::vector<ChunkPlan> plans() const { return plan_chunks(frame_count, chunk_length, overlap); }

  fs::path poses_path(int chunk) const { return base_dir / chunks.at(chunk).poses; }
  fs::path depth_path(int chunk, int frame) const {
    return base_dir / expand_pattern(chunks.at(chunk).depth_pattern, frame, chunk);
  }
  fs::path tracks_path() const { return base_dir / tracks; }
  bool has_eval(EvalMaskKind k) const { return eval_dirs.count(k) != 0; }
  fs::path eval_mask_path(EvalMaskKind k, int frame) const {
    auto it = eval_dirs.find(k);
    if (it == eval_dirs.end()) throw ConfigError("manifest has no " + std::string(eval_dir_key(k)) + " directory");
    return base_dir / it->second / mask_file_name(frame);
  }

  DepthFrame load_depth(int chunk, int frame) const {
    return egostitch::load_depth(depth_path(chunk, frame), frame, chunks.at(chunk).intrinsics);
  }
  TrackIndex load_tracks() const { return load_track_index(tracks_path(), frame_count); }
  BinaryMask load_eval_mask(EvalMaskKind k, int frame) const {
    BinaryMask m = load_mask(eval_mask_path(k, frame));
    if (m.width() != width || m.height() != height) {
      throw ConsistencyError(eval_mask_path(k, frame).string() + ": size does not match the sequence image size");
    }
    return m;
  }

  /// Checks constants, the chunk layout and that every referenced file exists.
  void validate() const {
    if (frame_count < 1) throw ValidationError("manifest: frame_count must be >= 1");
    if (!(chunk_length > overlap && overlap >= 0)) throw ValidationError("manifest: requires chunk > overlap >= 0");
    if (width <= 0 || height <= 0) throw ValidationError("manifest: image size must be positive");
    const auto expected = plans();
    if (chunks.size() != expected.size()) {
      throw ConsistencyError(fmt::format("manifest: {} chunk records but the plan has {} chunks", chunks.size(), expected.size()));
    }
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      const auto& rec = chunks[c];
      if (rec.chunk_id != static_cast<int>(c)) throw ConsistencyError("manifest: chunk ids must be 0..N-1 in order");
      rec.intrinsics.validate();
      if (rec.intrinsics.width != width || rec.intrinsics.height != height) {
        throw ConsistencyError("manifest: chunk intrinsics size differs from the image size");
      }
      if (!fs::exists(poses_path(static_cast<int>(c)))) throw ConsistencyError("manifest: missing " + poses_path(static_cast<int>(c)).string());
      for (int t = expected[c].start; t < expected[c].end; ++t) {
        if (!fs::exists(depth_path(static_cast<int>(c), t))) {
          throw ConsistencyError("manifest: missing " + depth_path(static_cast<int>(c), t).string());
        }
      }
    }
    if (tracks.empty() || !fs::exists(tracks_path())) throw ConsistencyError("manifest: missing track index " + tracks_path().string());
    load_tracks();
    for (const auto& [kind, dir] : eval_dirs) {
      for (int t = 0; t < frame_count; ++t) {
        if (!fs::exists(eval_mask_path(kind, t))) throw ConsistencyError("manifest: missing " + eval_mask_path(kind, t).string());
      }
    }
  }
};

inline Json intrinsics_to_json(const Intrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

inline Intrinsics intrinsics_from_json(const Json& j) {
  Intrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  return k;
}

inline Json manifest_to_json(const SequenceManifest& m) {
  Json chunks = Json::array();
  for (const auto& c : m.chunks) {
    chunks.push_back({{"chunk_id", c.chunk_id},
                      {"poses", c.poses},
                      {"depth_pattern", c.depth_pattern},
                      {"intrinsics", intrinsics_to_json(c.intrinsics)}});
  }
  Json eval = Json::object();
  for (const auto& [kind, dir] : m.eval_dirs) eval[std::string(eval_dir_key(kind))] = dir;
  return {{"frame_count", m.frame_count},
          {"fps", m.fps},
          {"image", {{"width", m.width}, {"height", m.height}}},
          {"chunking", {{"chunk", m.chunk_length}, {"overlap", m.overlap}}},
          {"chunks", chunks},
          {"tracks", m.tracks},
          {"eval_masks", eval}};
}

inline SequenceManifest manifest_from_json(const Json& j, const fs::path& base_dir) {
  SequenceManifest m;
  m.base_dir = base_dir;
  try {
    m.frame_count = j.at("frame_count").get<int>();
    m.fps = j.value("fps", 0.0);
    m.width = j.at("image").at("width").get<int>();
    m.height = j.at("image").at("height").get<int>();
    m.chunk_length = j.at("chunking").at("chunk").get<int>();
    m.overlap = j.at("chunking").at("overlap").get<int>();
    for (const auto& c : j.at("chunks")) {
      ChunkRecord rec;
      rec.chunk_id = c.at("chunk_id").get<int>();
      rec.poses = c.at("poses").get<std::string>();
      rec.depth_pattern = c.at("depth_pattern").get<std::string>();
      rec.intrinsics = intrinsics_from_json(c.at("intrinsics"));
      m.chunks.push_back(std::move(rec));
    }
    m.tracks = j.at("tracks").get<std::string>();
    if (j.contains("eval_masks")) {
      for (auto kind : {EvalMaskKind::Instantaneous, EvalMaskKind::Footprint}) {
        const std::string key(eval_dir_key(kind));
        if (j["eval_masks"].contains(key)) m.eval_dirs[kind] = j["eval_masks"][key].get<std::string>();
      }
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  return m;
}

inline SequenceManifest load_manifest(const fs::path& path) {
  SequenceManifest m = manifest_from_json(load_json_file(path), path.parent_path());
  m.validate();
  return m;
}

inline void save_manifest(const SequenceManifest& m, const fs::path& path) { save_json_file(manifest_to_json(m), path); }

}  // namespace egostitch
