#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "msam/embio.hpp"
#include "test_support.hpp"

using namespace msam;

namespace {

SynthSpec small_spec(std::uint64_t seed = 3) {
  SynthSpec s;
  s.num_videos = 4;
  s.frames_per_video = 3;
  s.captions_per_video = 2;
  s.token_len = 2;
  s.dim = 5;
  s.cluster_noise = 0.2;
  s.seed = seed;
  return s;
}

void expect_equal(const EmbeddingBatch& a, const EmbeddingBatch& b) {
  ASSERT_EQ(a.dim, b.dim);
  ASSERT_EQ(a.videos.size(), b.videos.size());
  ASSERT_EQ(a.texts.size(), b.texts.size());
  for (std::size_t i = 0; i < a.videos.size(); ++i) {
    EXPECT_EQ(a.videos[i].id, b.videos[i].id);
    EXPECT_EQ(a.videos[i].frames, b.videos[i].frames);
    EXPECT_EQ(a.videos[i].pooled, b.videos[i].pooled);
  }
  for (std::size_t i = 0; i < a.texts.size(); ++i) {
    EXPECT_EQ(a.texts[i].id, b.texts[i].id);
    EXPECT_EQ(a.texts[i].video_id, b.texts[i].video_id);
    EXPECT_EQ(a.texts[i].tokens, b.texts[i].tokens);
    EXPECT_EQ(a.texts[i].pooled, b.texts[i].pooled);
  }
}

double cosine(std::span<const float> a, std::span<const float> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += double(a[i]) * b[i];
    aa += double(a[i]) * a[i];
    bb += double(b[i]) * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

std::vector<double> frame_mean(const VideoRecord& v) {
  const std::size_t f = v.frames.dim(0), d = v.frames.dim(1);
  std::vector<double> m(d, 0.0);
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t j = 0; j < d; ++j) m[j] += v.frames.at({i, j}) / double(f);
  return m;
}

TEST(Container, MinimalBatchLayout) {
  EmbeddingBatch b;
  b.dim = 2;
  b.videos.push_back({7, make_matrix<float>({{1.0f, -2.0f}}), make_vector<float>({0.5f, 0.25f})});
  const auto bytes = encode_container(b);
  // header 24, one video 8 + 4 + 8 + 8, checksum 4
  ASSERT_EQ(bytes.size(), 56u);
  EXPECT_EQ(std::memcmp(bytes.data(), "MSAMEMB1", 8), 0);
  std::uint32_t version, dim, nv, nt;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&dim, bytes.data() + 12, 4);
  std::memcpy(&nv, bytes.data() + 16, 4);
  std::memcpy(&nt, bytes.data() + 20, 4);
  EXPECT_EQ(version, 1u);
  EXPECT_EQ(dim, 2u);
  EXPECT_EQ(nv, 1u);
  EXPECT_EQ(nt, 0u);
  std::uint64_t id;
  std::memcpy(&id, bytes.data() + 24, 8);
  EXPECT_EQ(id, 7u);
  float f1;
  std::memcpy(&f1, bytes.data() + 40, 4);
  EXPECT_EQ(f1, -2.0f);
  std::uint32_t crc;
  std::memcpy(&crc, bytes.data() + 52, 4);
  EXPECT_EQ(crc, crc32(std::span(bytes).first(52)));
  expect_equal(decode_container(bytes), b);
}

TEST(Container, Crc32MatchesReferenceVector) {
  const char* s = "123456789";
  EXPECT_EQ(crc32(std::as_bytes(std::span(s, 9))), 0xCBF43926u);
}

TEST(Container, RoundTripIsBitExact) {
  EmbeddingBatch b = gen_synthetic(small_spec());
  // Payload values that a lossy path would disturb.
  b.videos[0].frames[0] = std::numeric_limits<float>::denorm_min();
  b.videos[0].frames[1] = -0.0f;
  b.texts[1].pooled[2] = std::numeric_limits<float>::max();
  expect_equal(decode_container(encode_container(b)), b);
  EXPECT_TRUE(std::signbit(decode_container(encode_container(b)).videos[0].frames[1]));
}

TEST(Container, RoundTripThroughStreamsAndFiles) {
  const EmbeddingBatch b = gen_synthetic(small_spec());
  std::stringstream ss;
  const std::size_t n = write_container(b, ss);
  EXPECT_EQ(n, ss.str().size());
  expect_equal(read_container(ss), b);

  const std::string path = msam::test::temp_path("embio_roundtrip.msam");
  save_container(b, path);
  expect_equal(load_container(path), b);
  EXPECT_THROW(load_container(msam::test::temp_path("no_such_dir/x.msam")), Error);
}

TEST(Container, EncodingIsDeterministic) {
  const EmbeddingBatch b = gen_synthetic(small_spec());
  EXPECT_EQ(encode_container(b), encode_container(b));
}

TEST(Container, InvalidBatchWritesNothing) {
  EmbeddingBatch b = gen_synthetic(small_spec());
  b.texts[0].video_id = 99;
  std::stringstream ss;
  EXPECT_THROW(write_container(b, ss), ValidationError);
  EXPECT_TRUE(ss.str().empty());
}

TEST(Container, TruncationIsCorruption) {
  const auto bytes = encode_container(gen_synthetic(small_spec()));
  for (std::size_t len = 0; len < bytes.size(); ++len) {
    const auto prefix = std::span(bytes).first(len);
    if (len >= 8) {
      EXPECT_THROW(decode_container(prefix), CorruptionError) << "length " << len;
    } else {
      EXPECT_THROW(decode_container(prefix), Error) << "length " << len;
    }
  }
}

TEST(Container, TrailingBytesAreCorruption) {
  auto bytes = encode_container(gen_synthetic(small_spec()));
  bytes.push_back(std::byte{0});
  EXPECT_THROW(decode_container(bytes), CorruptionError);
}

TEST(Container, BadMagicIsFormatError) {
  auto bytes = encode_container(gen_synthetic(small_spec()));
  bytes[3] = std::byte{'X'};
  EXPECT_THROW(decode_container(bytes), FormatError);
}

TEST(Container, UnsupportedVersionIsFormatError) {
  auto bytes = encode_container(gen_synthetic(small_spec()));
  bytes[8] = std::byte{2};
  // Re-seal so only the version is wrong.
  const std::uint32_t crc = crc32(std::span(bytes).first(bytes.size() - 4));
  std::memcpy(bytes.data() + bytes.size() - 4, &crc, 4);
  EXPECT_THROW(decode_container(bytes), FormatError);
}

TEST(Container, EverySingleByteFlipIsDetected) {
  const auto clean = encode_container(gen_synthetic(small_spec()));
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    auto bytes = clean;
    const std::size_t pos = rng.below(bytes.size());
    bytes[pos] ^= std::byte(1 + rng.below(255));
    if (pos < 8) {
      EXPECT_THROW(decode_container(bytes), FormatError) << "offset " << pos;
    } else {
      EXPECT_THROW(decode_container(bytes), CorruptionError) << "offset " << pos;
    }
  }
}

TEST(Container, DanglingReferenceAndNanAfterValidChecksum) {
  EmbeddingBatch b = gen_synthetic(small_spec());
  auto bytes = encode_container(b);
  // Patch the first text's video_id to 99 and re-seal.
  std::size_t off = 24;
  for (const auto& v : b.videos) off += 12 + 4 * (v.frames.size() + v.pooled.size());
  const std::uint64_t bad = 99;
  std::memcpy(bytes.data() + off + 8, &bad, 8);
  std::uint32_t crc = crc32(std::span(bytes).first(bytes.size() - 4));
  std::memcpy(bytes.data() + bytes.size() - 4, &crc, 4);
  EXPECT_THROW(decode_container(bytes), ReferenceError);

  bytes = encode_container(b);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + 24 + 12, &nan, 4);
  crc = crc32(std::span(bytes).first(bytes.size() - 4));
  std::memcpy(bytes.data() + bytes.size() - 4, &crc, 4);
  EXPECT_THROW(decode_container(bytes), ValidationError);
}

TEST(Container, RandomByteStreamsFailCleanly) {
  Rng rng(77);
  const auto clean = encode_container(gen_synthetic(small_spec()));
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<std::byte> bytes;
    if (trial % 2 == 0) {
      bytes.resize(rng.below(300));
      for (auto& x : bytes) x = std::byte(rng.below(256));
    } else {
      // Valid header with garbage counts and body; exercises the size guards.
      bytes.assign(clean.begin(), clean.begin() + 8 + rng.below(clean.size() - 8));
      for (std::size_t i = 12; i < bytes.size(); ++i)
        if (rng.below(4) == 0) bytes[i] = std::byte(rng.below(256));
    }
    EXPECT_THROW(decode_container(bytes), Error);
  }
  // Huge declared sizes must not allocate before failing.
  std::vector<std::byte> huge(clean.begin(), clean.begin() + 24);
  const std::uint32_t big = 0xFFFFFFFFu;
  std::memcpy(huge.data() + 12, &big, 4);
  std::memcpy(huge.data() + 16, &big, 4);
  EXPECT_THROW(decode_container(huge), CorruptionError);
}

TEST(Validate, ValidBatchHasNoDiagnostics) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_TRUE(validate(gen_synthetic(small_spec(seed))).empty());
}

TEST(Validate, MissingVideoIdIsReported) {
  EmbeddingBatch b = gen_synthetic(small_spec());
  b.texts[3].video_id = 99;
  const auto d = validate(b);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].kind, Diagnostic::Kind::Reference);
  EXPECT_NE(d[0].message.find("99"), std::string::npos) << d[0].message;
}

TEST(Validate, NanFrameNamesVideo) {
  EmbeddingBatch b = gen_synthetic(small_spec());
  b.videos[2].frames[4] = std::numeric_limits<float>::quiet_NaN();
  const auto d = validate(b);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].kind, Diagnostic::Kind::Finiteness);
  EXPECT_EQ(d[0].record_id, b.videos[2].id);
}

TEST(Validate, ReportsEveryViolation) {
  EmbeddingBatch b = gen_synthetic(small_spec());
  b.videos[1].id = b.videos[0].id;
  b.texts[0].pooled = Tensor<float>(Shape{3});
  b.texts[1].tokens[0] = std::numeric_limits<float>::infinity();
  const auto d = validate(b);
  bool dup = false, shape = false, fin = false;
  for (const auto& x : d) {
    dup |= x.kind == Diagnostic::Kind::Duplicate;
    shape |= x.kind == Diagnostic::Kind::Shape;
    fin |= x.kind == Diagnostic::Kind::Finiteness;
  }
  EXPECT_TRUE(dup && shape && fin);
}

TEST(Synthetic, SameSpecSameBatch) {
  const auto a = gen_synthetic(small_spec(9));
  const auto b = gen_synthetic(small_spec(9));
  expect_equal(a, b);
  EXPECT_NE(encode_container(a), encode_container(gen_synthetic(small_spec(10))));
}

TEST(Synthetic, ShapesAndIds) {
  const auto s = small_spec();
  const auto b = gen_synthetic(s);
  EXPECT_EQ(b.dim, s.dim);
  ASSERT_EQ(b.videos.size(), s.num_videos);
  ASSERT_EQ(b.texts.size(), s.num_videos * s.captions_per_video);
  for (std::size_t v = 0; v < b.videos.size(); ++v) {
    EXPECT_EQ(b.videos[v].id, v);
    EXPECT_EQ(b.videos[v].frames.shape(), (Shape{s.frames_per_video, s.dim}));
  }
  for (std::size_t t = 0; t < b.texts.size(); ++t) {
    EXPECT_EQ(b.texts[t].id, t);
    EXPECT_EQ(b.texts[t].video_id, t / s.captions_per_video);
    EXPECT_EQ(b.texts[t].tokens.shape(), (Shape{s.token_len, s.dim}));
  }
}

TEST(Synthetic, NoiselessCaptionsAlignWithFrameMean) {
  SynthSpec s = small_spec();
  s.cluster_noise = 0.0;
  const auto b = gen_synthetic(s);
  for (const auto& t : b.texts) {
    const auto m = frame_mean(b.videos[t.video_id]);
    std::vector<float> mf(m.begin(), m.end());
    EXPECT_NEAR(cosine(t.pooled.data(), mf), 1.0, 1e-6);
  }
}

TEST(Synthetic, WithinPairCloserThanCrossPair) {
  SynthSpec s;
  s.num_videos = 16;
  s.cluster_noise = 0.1;
  s.seed = 5;
  const auto b = gen_synthetic(s);
  double within = 0, cross = 0;
  std::size_t nw = 0, nc = 0;
  for (const auto& t : b.texts)
    for (std::size_t v = 0; v < b.videos.size(); ++v) {
      const auto m = frame_mean(b.videos[v]);
      std::vector<float> mf(m.begin(), m.end());
      const double c = cosine(t.pooled.data(), mf);
      if (b.videos[v].id == t.video_id) {
        within += c;
        ++nw;
      } else {
        cross += c;
        ++nc;
      }
    }
  EXPECT_GT(within / nw, cross / nc);
}

TEST(Synthetic, SpecValidation) {
  SynthSpec s = small_spec();
  s.cluster_noise = 1.5;
  EXPECT_THROW(s.validate(), ContractError);
  s = small_spec();
  s.num_videos = 0;
  EXPECT_THROW(gen_synthetic(s), ContractError);
}

TEST(Stacking, GathersAndRejectsRaggedFrames) {
  EmbeddingBatch b = gen_synthetic(small_spec());
  const std::vector<std::size_t> sel{2, 0};
  const auto frames = stack_frames(b, sel);
  EXPECT_EQ(frames.shape(), (Shape{2, 3, 5}));
  EXPECT_EQ(frames[0], b.videos[2].frames[0]);
  EXPECT_EQ(text_to_video_index(b)[5], 2u);
  b.videos[0].frames = Tensor<float>(Shape{4, 5}, 0.1f);
  EXPECT_THROW(stack_frames(b, sel), ContractError);
}

}  // namespace
