#include <gtest/gtest.h>

#include <bit>
#include <cstring>

#include "test_util.hpp"

using namespace egostitch;
using namespace testutil;

namespace {

/// PFM bytes assembled by hand: header, then rows bottom-to-top.
std::string manual_pfm(int w, int h, const std::vector<float>& top_down, bool big_endian) {
  std::string s = "Pf\n" + std::to_string(w) + " " + std::to_string(h) + "\n" + (big_endian ? "1.0" : "-1.0") + "\n";
  for (int row = h - 1; row >= 0; --row) {
    for (int x = 0; x < w; ++x) {
      auto raw = std::bit_cast<std::uint32_t>(top_down[static_cast<std::size_t>(row * w + x)]);
      unsigned char b[4];
      for (int i = 0; i < 4; ++i) {
        const int shift = big_endian ? 8 * (3 - i) : 8 * i;
        b[i] = static_cast<unsigned char>((raw >> shift) & 0xFFu);
      }
      s.append(reinterpret_cast<const char*>(b), 4);
    }
  }
  return s;
}

Raster<float> random_raster(std::mt19937_64& rng, int w, int h) {
  Raster<float> r(w, h);
  std::uniform_int_distribution<std::uint32_t> bits;
  for (auto& v : r.data()) v = std::bit_cast<float>(bits(rng));  // arbitrary bit patterns, NaNs included
  return r;
}

bool same_bits(const Raster<float>& a, const Raster<float>& b) {
  return a.width() == b.width() && a.height() == b.height() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

// --- PFM -------------------------------------------------------------------

TEST(Pfm, TwoByTwoWithInvalidPixel) {
  TempDir dir("pfm");
  write_file_bytes(dir.path() / "d.pfm", manual_pfm(2, 2, {1.0f, 2.0f, 3.0f, 0.0f}, false));
  const DepthFrame d = load_depth(dir.path() / "d.pfm", 0, Intrinsics{1, 1, 0.5, 0.5, 2, 2});
  EXPECT_EQ(d.depth(0, 0), 1.0f);
  EXPECT_EQ(d.depth(1, 0), 2.0f);
  EXPECT_EQ(d.depth(0, 1), 3.0f);
  int invalid = 0;
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 2; ++x) invalid += !d.valid(x, y);
  }
  EXPECT_EQ(invalid, 1);
  EXPECT_FALSE(d.valid(1, 1));
}

TEST(Pfm, EncodeMatchesManualLayout) {
  Raster<float> r(3, 2);
  const std::vector<float> v = {1.5f, -2.0f, 0.0f, 4.25f, 1e-3f, 7.0f};
  r.data() = v;
  EXPECT_EQ(encode_pfm(r, Endian::Little), manual_pfm(3, 2, v, false));
  EXPECT_EQ(encode_pfm(r, Endian::Big), manual_pfm(3, 2, v, true));
}

TEST(Pfm, RoundTripIsBitExact) {
  std::mt19937_64 rng(31);
  TempDir dir("pfm_rt");
  for (int trial = 0; trial < 30; ++trial) {
    const Raster<float> r = random_raster(rng, 1 + trial % 7, 1 + trial % 5);
    save_pfm(r, dir.path() / "r.pfm");
    EXPECT_TRUE(same_bits(load_pfm(dir.path() / "r.pfm"), r));
  }
}

TEST(Pfm, BigEndianTwinDecodesToSameValues) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    const Raster<float> r = random_raster(rng, 4, 3);
    std::vector<float> v = r.data();
    EXPECT_TRUE(same_bits(decode_pfm(manual_pfm(4, 3, v, true)), decode_pfm(manual_pfm(4, 3, v, false))));
  }
}

TEST(Pfm, MalformedHeadersAreFormatErrors) {
  EXPECT_THROW(decode_pfm("PF\n1 1\n-1.0\n\0\0\0\0"), FormatError);
  EXPECT_THROW(decode_pfm("P5\n1 1\n255\n\0"), FormatError);
  EXPECT_THROW(decode_pfm("Pf\n1 x\n-1.0\n"), FormatError);
  EXPECT_THROW(decode_pfm("Pf\n2 2\n-1.0\nabc"), FormatError);
  EXPECT_THROW(decode_pfm("Pf\n1 1\n0.0\n\0\0\0\0"), FormatError);
  EXPECT_THROW(decode_pfm(""), FormatError);
}

TEST(Pfm, DimensionMismatchIsConsistencyError) {
  TempDir dir("pfm_dim");
  save_pfm(Raster<float>(3, 3, 1.0f), dir.path() / "d.pfm");
  EXPECT_THROW(load_depth(dir.path() / "d.pfm", 0, Intrinsics{1, 1, 1, 1, 4, 3}), ConsistencyError);
}

// --- PGM -------------------------------------------------------------------

TEST(Pgm, AllZero) {
  const BinaryMask m = decode_mask(std::string("P5\n3 2\n255\n") + std::string(6, '\0'));
  EXPECT_EQ(m.count(), 0u);
  EXPECT_EQ(m.width(), 3);
  EXPECT_EQ(m.height(), 2);
}

TEST(Pgm, SinglePixel) {
  std::string data(6, '\0');
  data[0] = static_cast<char>(255);
  const BinaryMask m = decode_mask("P5\n3 2\n255\n" + data);
  EXPECT_EQ(m.count(), 1u);
  EXPECT_TRUE(m.at(0, 0));
}

TEST(Pgm, CommentsInHeaderAccepted) {
  const BinaryMask m = decode_mask(std::string("P5\n# made by hand\n2 1\n255\n") + std::string(1, '\0') + "\xff");
  EXPECT_TRUE(m.at(1, 0));
  EXPECT_FALSE(m.at(0, 0));
}

TEST(Pgm, NonBinaryByteRejected) {
  EXPECT_THROW(decode_mask(std::string("P5\n2 1\n255\n") + "\x80" + std::string(1, '\0')), FormatError);
  EXPECT_THROW(decode_mask(std::string("P5\n2 1\n1\n") + std::string(2, '\0')), FormatError);
  EXPECT_THROW(decode_mask("P2\n1 1\n255\n0"), FormatError);
  EXPECT_THROW(decode_mask(std::string("P5\n4 4\n255\n") + std::string(3, '\0')), FormatError);
}

TEST(Pgm, SaveLoadByteIdentical) {
  std::mt19937_64 rng(33);
  TempDir dir("pgm");
  for (int trial = 0; trial < 30; ++trial) {
    const BinaryMask m = random_mask(rng, 1 + trial % 9, 1 + trial % 4, 0.4);
    const auto p = dir.path() / "m.pgm";
    save_mask(m, p);
    const std::string bytes = read_file_bytes(p);
    EXPECT_EQ(load_mask(p), m);
    save_mask(load_mask(p), p);
    EXPECT_EQ(read_file_bytes(p), bytes);
  }
}

// --- poses -----------------------------------------------------------------

TEST(Poses, IdentityRow) {
  const auto poses = parse_poses(R"({"frame_id": 0, "T": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]})");
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_EQ(poses[0].first, 0);
  EXPECT_EQ(poses[0].second.rotation, Mat3::Identity());
  EXPECT_EQ(poses[0].second.translation, Vec3::Zero());
}

TEST(Poses, BadBottomRowRejected) {
  EXPECT_THROW(parse_poses(R"({"frame_id": 0, "T": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,2]})"), ValidationError);
}

TEST(Poses, NonRigidRotationRejected) {
  EXPECT_THROW(parse_poses(R"({"frame_id": 0, "T": [1.01,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]})"), ValidationError);
  EXPECT_THROW(parse_poses(R"({"frame_id": 0, "T": [-1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]})"), ValidationError);
}

TEST(Poses, SmallDeviationIsReorthonormalized) {
  const auto poses = parse_poses(R"({"frame_id": 3, "T": [1.00001,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]})");
  EXPECT_LT(orthonormality_error(poses[0].second.rotation), 1e-12);
}

TEST(Poses, DuplicateFrameIsConsistencyError) {
  const std::string line = R"({"frame_id": 1, "T": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]})";
  EXPECT_THROW(parse_poses(line + "\n" + line + "\n"), ConsistencyError);
}

TEST(Poses, MalformedLinesAreFormatErrors) {
  EXPECT_THROW(parse_poses("{\"frame_id\": 0}"), FormatError);
  EXPECT_THROW(parse_poses("not json"), FormatError);
  EXPECT_THROW(parse_poses(R"({"frame_id": 0, "T": [1,0,0]})"), FormatError);
}

TEST(Poses, RoundTripPreservesValues) {
  std::mt19937_64 rng(34);
  TempDir dir("poses");
  std::vector<FramePose> poses;
  for (int i = 0; i < 50; ++i) poses.emplace_back(i * 3, random_pose(rng));
  save_poses(poses, dir.path() / "p.jsonl");
  const auto back = load_poses(dir.path() / "p.jsonl");
  ASSERT_EQ(back.size(), poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    EXPECT_EQ(back[i].first, poses[i].first);
    EXPECT_LE((back[i].second.matrix() - poses[i].second.matrix()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

// --- PLY -------------------------------------------------------------------

namespace {

/// Independent reader: trusts only the header's vertex count and reads the
/// body as whitespace-separated numbers.
std::vector<std::vector<double>> read_ply_body(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t count = 0, props = 0;
  while (std::getline(in, line) && line != "end_header") {
    if (line.rfind("element vertex ", 0) == 0) count = std::stoul(line.substr(15));
    if (line.rfind("property ", 0) == 0) ++props;
  }
  std::vector<std::vector<double>> rows(count, std::vector<double>(props));
  for (auto& r : rows) {
    for (auto& v : r) in >> v;
  }
  return rows;
}

}  // namespace

TEST(Ply, EmptyCloud) {
  const std::string s = encode_ply(PointCloud{});
  EXPECT_NE(s.find("element vertex 0\n"), std::string::npos);
  EXPECT_EQ(decode_ply(s).size(), 0u);
}

TEST(Ply, SinglePointLine) {
  PointCloud c;
  c.points.emplace_back(1, 2, 3);
  const std::string s = encode_ply(c);
  EXPECT_NE(s.find("\n1 2 3\n"), std::string::npos);
}

TEST(Ply, IndependentReaderRecoversPoints) {
  std::mt19937_64 rng(35);
  PointCloud c;
  for (int i = 0; i < 200; ++i) {
    c.points.push_back(random_vec(rng, -100, 100));
    c.chunk_ids.push_back(i % 7);
  }
  const auto rows = read_ply_body(encode_ply(c));
  ASSERT_EQ(rows.size(), c.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ASSERT_EQ(rows[i].size(), 4u);
    for (int k = 0; k < 3; ++k) EXPECT_EQ(rows[i][static_cast<std::size_t>(k)], c.points[i](k));
    EXPECT_EQ(rows[i][3], c.chunk_ids[i]);
  }
  const PointCloud back = decode_ply(encode_ply(c));
  EXPECT_EQ(back.points, c.points);
  EXPECT_EQ(back.chunk_ids, c.chunk_ids);
}

TEST(Ply, RejectsNonFiniteAndShortFiles) {
  PointCloud c;
  c.points.emplace_back(std::numeric_limits<double>::infinity(), 0, 0);
  EXPECT_THROW(encode_ply(c), ValidationError);
  EXPECT_THROW(decode_ply("ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\n"
                          "property double z\nend_header\n1 2 3\n"),
               FormatError);
  EXPECT_THROW(decode_ply("ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n"), FormatError);
}

// --- patterns, tracks, manifest --------------------------------------------

TEST(Pattern, ExpandsFrameAndChunk) {
  EXPECT_EQ(expand_pattern("c{chunk:03}/{frame:06}.pfm", 42, 7), "c007/000042.pfm");
  EXPECT_EQ(mask_file_name(5), "D_000005.pgm");
  EXPECT_THROW(expand_pattern("{nope}", 1), ConfigError);
}

TEST(TrackIndex, JsonRoundTripAndValidation) {
  TrackIndex idx;
  idx.tracks.push_back({1, "left hand", TrackCategory::Hand, std::nullopt, "h/{frame:06}.pgm"});
  idx.tracks.push_back({4, "mug", TrackCategory::Object, 12, "o/{frame:06}.pgm"});
  const TrackIndex back = track_index_from_json(track_index_to_json(idx), "/base");
  ASSERT_EQ(back.tracks.size(), 2u);
  EXPECT_TRUE(back.tracks[0].is_hand());
  EXPECT_EQ(back.tracks[1].onset_frame, 12);
  EXPECT_EQ(back.mask_path(back.tracks[1], 3), fs::path("/base/o/000003.pgm"));
  EXPECT_NO_THROW(back.validate(20));
  EXPECT_THROW(back.validate(10), ValidationError);
  idx.tracks[1].track_id = 1;
  EXPECT_THROW(idx.validate(20), ValidationError);
}

TEST(TrackIndex, MissingMaskFileIsEmpty) {
  TempDir dir("tracks");
  TrackIndex idx;
  idx.base_dir = dir.path();
  idx.tracks.push_back({2, "cup", TrackCategory::Object, 0, "{frame}.pgm"});
  EXPECT_TRUE(idx.load_instance_mask(idx.tracks[0], 9, 4, 3).empty());
  save_mask(BinaryMask(5, 3), dir.path() / "9.pgm");
  EXPECT_THROW(idx.load_instance_mask(idx.tracks[0], 9, 4, 3), ConsistencyError);
}

TEST(Manifest, SyntheticManifestValidatesAndRoundTrips) {
  TempDir dir("manifest");
  SynthConfig cfg;
  cfg.frames = 12;
  cfg.chunk = 6;
  cfg.overlap = 3;
  cfg.width = 16;
  cfg.height = 12;
  cfg.focal = 12;
  const SequenceManifest m = write_synth(generate(cfg), dir.path());
  const SequenceManifest back = load_manifest(dir.path() / "manifest.json");
  EXPECT_EQ(manifest_to_json(back), manifest_to_json(m));
  EXPECT_EQ(back.plans().size(), 4u);
  EXPECT_TRUE(back.has_eval(EvalMaskKind::Footprint));

  fs::remove(back.depth_path(1, 5));
  EXPECT_THROW(load_manifest(dir.path() / "manifest.json"), ConsistencyError);
}

TEST(Manifest, ChunkLayoutMustMatchPlan) {
  TempDir dir("manifest2");
  SynthConfig cfg;
  cfg.frames = 12;
  cfg.chunk = 6;
  cfg.overlap = 3;
  cfg.width = 16;
  cfg.height = 12;
  cfg.focal = 12;
  SequenceManifest m = write_synth(generate(cfg), dir.path());
  m.overlap = 2;
  EXPECT_THROW(m.validate(), ConsistencyError);
  m.overlap = 6;
  EXPECT_THROW(m.validate(), ValidationError);
  EXPECT_THROW(manifest_from_json(Json{{"frame_count", 3}}, dir.path()), FormatError);
}
