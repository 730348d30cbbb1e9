#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"

using namespace coseg;
namespace fs = std::filesystem;

namespace {

const std::string kDataDir = COSEG_TEST_DATA_DIR;

FormatError::Kind decode_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_features(bytes, "x");
  } catch (const FormatError& e) {
    return e.kind;
  }
  ADD_FAILURE() << "decode succeeded";
  return FormatError::Kind::schema;
}

fs::path scratch_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("coseg_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Csgf, GoldenFileParses) {
  auto seq = load_feature_file(kDataDir + "/golden_3x2.csgf");
  EXPECT_EQ(seq.video_id, "golden_3x2");
  EXPECT_EQ(seq.fps, 30.0f);
  EXPECT_EQ(seq.features, Tensor::matrix(3, 2, {1.0f, -2.0f, 0.5f, 0.0f, 3.0f, -0.25f}));
}

TEST(Csgf, GoldenFileReencodesByteExactly) {
  const auto bytes = read_file_bytes(kDataDir + "/golden_3x2.csgf");
  EXPECT_EQ(encode_features(decode_features(bytes, "g")), bytes);
}

TEST(Csgf, SaveLoadRoundTrip) {
  auto dir = scratch_dir("csgf");
  std::mt19937_64 rng(1);
  FrameFeatureSequence seq{"clip", 24.0f, coseg::testing::random_tensor({7, 5}, rng)};
  save_feature_file(seq, (dir / "clip.csgf").string());
  auto back = load_feature_file((dir / "clip.csgf").string());
  EXPECT_EQ(back.video_id, "clip");
  EXPECT_EQ(back.fps, 24.0f);
  EXPECT_EQ(back.features, seq.features);
  EXPECT_EQ(read_file_bytes((dir / "clip.csgf").string()), encode_features(back));
}

TEST(Csgf, DistinctErrors) {
  const auto good = read_file_bytes(kDataDir + "/golden_3x2.csgf");
  auto magic = good;
  magic[1] = 'X';
  EXPECT_EQ(decode_kind(magic), FormatError::Kind::bad_magic);
  auto version = good;
  version[4] = 2;
  EXPECT_EQ(decode_kind(version), FormatError::Kind::bad_version);
  auto truncated = good;
  truncated.resize(truncated.size() - 3);
  EXPECT_EQ(decode_kind(truncated), FormatError::Kind::truncated);
  auto header_only = std::vector<std::uint8_t>(good.begin(), good.begin() + 7);
  EXPECT_EQ(decode_kind(header_only), FormatError::Kind::truncated);
  auto trailing = good;
  trailing.push_back(0);
  EXPECT_EQ(decode_kind(trailing), FormatError::Kind::schema);
}

TEST(Csgf, DataErrors) {
  EXPECT_THROW(decode_features(encode_features({"e", 30.0f, Tensor({0, 3})}), "e"), DataError);
  FrameFeatureSequence bad{"n", 30.0f, Tensor::matrix(1, 2, {1.0f, std::numeric_limits<real>::quiet_NaN()})};
  EXPECT_THROW(decode_features(encode_features(bad), "n"), DataError);
  EXPECT_THROW(load_feature_file("/nonexistent/dir/x.csgf"), IoError);
}

TEST(Csgf, CorpusLoadsSortedAndRejectsMissingDir) {
  auto dir = scratch_dir("corpus");
  for (std::string id : {"b", "a", "c"}) save_feature_file({id, 30.0f, Tensor::zeros({2, 2})}, (dir / (id + ".csgf")).string());
  write_file_bytes((dir / "notes.txt").string(), {'x'});
  auto corpus = load_corpus(dir.string());
  ASSERT_EQ(corpus.size(), 3u);
  EXPECT_EQ(corpus[0].video_id, "a");
  EXPECT_EQ(corpus[2].video_id, "c");
  EXPECT_THROW(load_corpus((dir / "missing").string()), IoError);
}

TEST(Annotations, GoldenRoundTripIsByteExact) {
  const auto bytes = read_file_bytes(kDataDir + "/golden_annotations.json");
  const std::string text(bytes.begin(), bytes.end());
  auto list = parse_annotations(text);
  ASSERT_EQ(list.size(), 2u);
  EXPECT_EQ(list[0].boundaries, (std::vector<std::size_t>{30, 75}));
  EXPECT_FALSE(list[0].scores.has_value());
  EXPECT_TRUE(list[1].scores.has_value());
  EXPECT_EQ(dump_annotations(list), text);
}

TEST(Annotations, SaveLoadRoundTrip) {
  auto dir = scratch_dir("ann");
  std::vector<Annotation> list{{"v", 90, 30.0, {10, 50}, std::vector<double>{0.25, 0.125}}};
  save_annotations(list, (dir / "a.json").string());
  EXPECT_EQ(load_annotations((dir / "a.json").string()), list);
}

TEST(Annotations, ValidationWithFieldPaths) {
  auto expect_schema = [](const std::string& text, const std::string& path) {
    try {
      parse_annotations(text);
      ADD_FAILURE() << "accepted: " << text;
    } catch (const FormatError& e) {
      EXPECT_EQ(e.kind, FormatError::Kind::schema);
      EXPECT_NE(std::string(e.what()).find(path), std::string::npos) << e.what();
    }
  };
  expect_schema(R"([{"video_id":"v","num_frames":10,"fps":30,"boundaries":[5,3]}])", "boundaries");
  expect_schema(R"([{"video_id":"v","num_frames":10,"fps":30,"boundaries":[10]}])", "boundaries[0]");
  expect_schema(R"([{"num_frames":10,"fps":30,"boundaries":[]}])", "video_id");
  expect_schema(R"([{"video_id":"v","num_frames":-1,"fps":30,"boundaries":[]}])", "num_frames");
  expect_schema(R"([{"video_id":"v","num_frames":10,"fps":30,"boundaries":[1,2],"scores":[1]}])", "scores");
  expect_schema("[{", "annotations");
}

TEST(BoundarySetType, Validation) {
  EXPECT_NO_THROW((BoundarySet{"v", 10, {0, 3, 9}}.validate()));
  EXPECT_THROW((BoundarySet{"v", 10, {3, 3}}.validate()), DataError);
  EXPECT_THROW((BoundarySet{"v", 10, {10}}.validate()), DataError);
}

TEST(Synth, DeterministicUnderSeed) {
  SynthConfig cfg;
  cfg.num_videos = 4;
  auto a = synth_generate(cfg, 10);
  auto b = synth_generate(cfg, 10);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a.videos[i].features, b.videos[i].features);
    EXPECT_EQ(a.annotations[i], b.annotations[i]);
  }
  cfg.seed = 8;
  EXPECT_NE(synth_generate(cfg, 10).videos[0].features, a.videos[0].features);
}

TEST(Synth, BoundariesAreExactlyPrototypeSwitches) {
  auto corpus = synth_generate(SynthConfig{}, 10);
  ASSERT_EQ(corpus.videos.size(), 32u);
  for (std::size_t v = 0; v < corpus.videos.size(); ++v) {
    const auto& labels = corpus.frame_labels[v];
    const auto& ann = corpus.annotations[v];
    EXPECT_EQ(ann.num_frames, corpus.videos[v].num_frames());
    EXPECT_EQ(corpus.videos[v].dim(), 32u);
    std::vector<std::size_t> switches;
    for (std::size_t t = 1; t < labels.size(); ++t)
      if (labels[t] != labels[t - 1]) switches.push_back(t);
    EXPECT_EQ(switches, ann.boundaries);
    // k events → k−1 boundaries, 3..5 events of 30..60 frames.
    EXPECT_GE(ann.boundaries.size(), 2u);
    EXPECT_LE(ann.boundaries.size(), 4u);
    std::size_t prev = 0;
    for (auto b : ann.boundaries) {
      EXPECT_GE(b - prev, 30u);
      EXPECT_LE(b - prev, 60u);
      prev = b;
    }
  }
}

TEST(Synth, NoiseFreeEventsAreCoherent) {
  SynthConfig cfg;
  cfg.noise_std = 0.0;
  cfg.drift_std = 0.0;
  cfg.num_videos = 6;
  auto corpus = synth_generate(cfg, 10);
  double within = 0, across = 0;
  std::size_t nw = 0, na = 0;
  for (std::size_t v = 0; v < corpus.videos.size(); ++v) {
    const auto& f = corpus.videos[v].features;
    const auto& lab = corpus.frame_labels[v];
    for (std::size_t i = 0; i < f.rows(); i += 3)
      for (std::size_t j = i + 1; j < f.rows(); j += 5) {
        double dot = 0, ni = 0, nj = 0;
        for (std::size_t c = 0; c < f.cols(); ++c) {
          dot += double(f(i, c)) * f(j, c);
          ni += double(f(i, c)) * f(i, c);
          nj += double(f(j, c)) * f(j, c);
        }
        const double cosine = dot / std::sqrt(ni * nj);
        if (lab[i] == lab[j]) within += cosine, ++nw;
        else across += cosine, ++na;
      }
  }
  EXPECT_GT(within / double(nw), across / double(na));
  EXPECT_NEAR(within / double(nw), 1.0, 1e-6);
}

TEST(Synth, InvalidConfigs) {
  SynthConfig cfg;
  cfg.event_length_min = 5;
  EXPECT_THROW(synth_generate(cfg, 10), ConfigError);
  cfg = SynthConfig{};
  cfg.num_prototypes = 1;
  EXPECT_THROW(synth_generate(cfg, 10), ConfigError);
  cfg = SynthConfig{};
  cfg.events_min = 6;
  EXPECT_THROW(synth_generate(cfg, 10), ConfigError);
}
