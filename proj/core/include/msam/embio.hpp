#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "msam/tensor.hpp"

namespace msam {

struct VideoRecord {
  std::uint64_t id = 0;
  Tensor<float> frames;  // [F x D]
  Tensor<float> pooled;  // [D]
};

struct TextRecord {
  std::uint64_t id = 0;
  std::uint64_t video_id = 0;
  Tensor<float> tokens;  // [L x D]
  Tensor<float> pooled;  // [D]
};

// Precomputed frame/token embeddings with ground-truth text -> video pairing.
struct EmbeddingBatch {
  std::uint32_t dim = 0;
  std::vector<VideoRecord> videos;
  std::vector<TextRecord> texts;
};

struct Diagnostic {
  enum class Kind { Shape, Finiteness, Reference, Duplicate };
  Kind kind;
  std::uint64_t record_id;
  std::string message;
};

std::string to_string(Diagnostic::Kind kind);

// Every invariant violation of the batch; empty when valid.
std::vector<Diagnostic> validate(const EmbeddingBatch& batch);

// Container layout (little-endian):
//   "MSAMEMB1" | u32 version=1 | u32 D | u32 V | u32 T
//   V x { u64 id | u32 F | F*D f32 frames | D f32 pooled }
//   T x { u64 id | u64 video_id | u32 L | L*D f32 tokens | D f32 pooled }
//   u32 CRC-32 (IEEE 802.3) of all preceding bytes
inline constexpr char kContainerMagic[8] = {'M', 'S', 'A', 'M', 'E', 'M', 'B', '1'};
inline constexpr std::uint32_t kContainerVersion = 1;

// Throws ValidationError (nothing is produced) if the batch is invalid.
std::vector<std::byte> encode_container(const EmbeddingBatch& batch);

// Bad magic or version -> FormatError; truncation, trailing bytes or CRC
// mismatch -> CorruptionError; dangling video_id -> ReferenceError; any other
// invariant violation -> ValidationError.
EmbeddingBatch decode_container(std::span<const std::byte> bytes);

// Stream wrappers. write_container returns the byte count written.
std::size_t write_container(const EmbeddingBatch& batch, std::ostream& out);
EmbeddingBatch read_container(std::istream& in);

void save_container(const EmbeddingBatch& batch, const std::string& path);
EmbeddingBatch load_container(const std::string& path);

std::uint32_t crc32(std::span<const std::byte> bytes);

struct SynthSpec {
  std::size_t num_videos = 16;
  std::size_t frames_per_video = 12;
  std::size_t captions_per_video = 5;
  std::size_t token_len = 8;
  std::size_t dim = 32;
  double cluster_noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Normalized-Gaussian mixture; one cluster center per video.
//
// Draw order per video: center (D normals), then each frame (D normals).
// Then per video, per caption: pooled noise (D normals) followed by each
// token (D normals). Video ids are 0..V-1; text ids are assigned
// sequentially in caption order. The video pooled vector is the normalized
// mean of its frames.
EmbeddingBatch gen_synthetic(const SynthSpec& spec);

// Index-based view of the ground truth: text position -> video position.
// Throws ReferenceError on a dangling video_id.
std::vector<std::size_t> text_to_video_index(const EmbeddingBatch& batch);

// Gathers per-record tensors into stacked arrays. All selected records must
// share F (or L); otherwise ContractError.
Tensor<float> stack_frames(const EmbeddingBatch& batch, std::span<const std::size_t> videos);
Tensor<float> stack_video_pooled(const EmbeddingBatch& batch, std::span<const std::size_t> videos);
Tensor<float> stack_tokens(const EmbeddingBatch& batch, std::span<const std::size_t> texts);
Tensor<float> stack_text_pooled(const EmbeddingBatch& batch, std::span<const std::size_t> texts);

std::vector<std::size_t> all_indices(std::size_t n);

}  // namespace msam
