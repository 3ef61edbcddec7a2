#include "msam/embio.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "byteio.hpp"
#include "msam/random.hpp"

namespace msam {

std::string to_string(Diagnostic::Kind kind) {
  switch (kind) {
    case Diagnostic::Kind::Shape: return "shape";
    case Diagnostic::Kind::Finiteness: return "finiteness";
    case Diagnostic::Kind::Reference: return "reference";
    case Diagnostic::Kind::Duplicate: return "duplicate";
  }
  return "unknown";
}

std::uint32_t crc32(std::span<const std::byte> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes a uInt length; feed large buffers in slices.
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const uInt n = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, p, n);
    p += n;
    left -= n;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

using detail::Reader;
using detail::Writer;
using Kind = Diagnostic::Kind;

void check_matrix(std::vector<Diagnostic>& out, std::uint64_t id, const char* what,
                  const Tensor<float>& m, std::uint32_t dim) {
  if (m.rank() != 2 || m.dim(1) != dim) {
    out.push_back({Kind::Shape, id, std::string(what) + " must be [n x " + std::to_string(dim) +
                                        "], got " + to_string(m.shape())});
  } else if (!all_finite(m)) {
    out.push_back({Kind::Finiteness, id, std::string(what) + " contains a non-finite value"});
  }
}

void check_pooled(std::vector<Diagnostic>& out, std::uint64_t id, const Tensor<float>& p,
                  std::uint32_t dim) {
  if (p.shape() != Shape{dim}) {
    out.push_back({Kind::Shape, id, "pooled must be [" + std::to_string(dim) + "], got " +
                                        to_string(p.shape())});
  } else if (!all_finite(p)) {
    out.push_back({Kind::Finiteness, id, "pooled contains a non-finite value"});
  }
}

std::string join_diagnostics(const std::vector<Diagnostic>& diags) {
  std::ostringstream out;
  for (std::size_t i = 0; i < diags.size(); ++i) {
    if (i) out << "; ";
    out << to_string(diags[i].kind) << " (id " << diags[i].record_id << "): " << diags[i].message;
  }
  return out.str();
}

constexpr std::size_t kHeaderBytes = 8 + 4 * 4;

}  // namespace

std::vector<Diagnostic> validate(const EmbeddingBatch& batch) {
  std::vector<Diagnostic> out;
  if (batch.dim == 0) {
    out.push_back({Kind::Shape, 0, "embedding dimension must be positive"});
    return out;
  }
  std::set<std::uint64_t> video_ids;
  for (const auto& v : batch.videos) {
    if (!video_ids.insert(v.id).second) out.push_back({Kind::Duplicate, v.id, "duplicate video id"});
    check_matrix(out, v.id, "frames", v.frames, batch.dim);
    check_pooled(out, v.id, v.pooled, batch.dim);
  }
  std::set<std::uint64_t> text_ids;
  for (const auto& t : batch.texts) {
    if (!text_ids.insert(t.id).second) out.push_back({Kind::Duplicate, t.id, "duplicate text id"});
    if (!video_ids.count(t.video_id)) {
      out.push_back({Kind::Reference, t.video_id,
                     "text " + std::to_string(t.id) + " references missing video id " +
                         std::to_string(t.video_id)});
    }
    check_matrix(out, t.id, "tokens", t.tokens, batch.dim);
    check_pooled(out, t.id, t.pooled, batch.dim);
  }
  return out;
}

std::vector<std::byte> encode_container(const EmbeddingBatch& batch) {
  if (auto diags = validate(batch); !diags.empty()) {
    throw ValidationError("refusing to write invalid batch: " + join_diagnostics(diags));
  }
  Writer w;
  w.bytes(kContainerMagic, sizeof(kContainerMagic));
  w.u32(kContainerVersion);
  w.u32(batch.dim);
  w.u32(static_cast<std::uint32_t>(batch.videos.size()));
  w.u32(static_cast<std::uint32_t>(batch.texts.size()));
  for (const auto& v : batch.videos) {
    w.u64(v.id);
    w.u32(static_cast<std::uint32_t>(v.frames.dim(0)));
    w.f32s(v.frames.data());
    w.f32s(v.pooled.data());
  }
  for (const auto& t : batch.texts) {
    w.u64(t.id);
    w.u64(t.video_id);
    w.u32(static_cast<std::uint32_t>(t.tokens.dim(0)));
    w.f32s(t.tokens.data());
    w.f32s(t.pooled.data());
  }
  w.u32(crc32(w.buffer()));
  return std::move(w.buffer());
}

EmbeddingBatch decode_container(std::span<const std::byte> bytes) {
  const std::size_t magic_len = std::min(bytes.size(), sizeof(kContainerMagic));
  if (magic_len == 0 || std::memcmp(bytes.data(), kContainerMagic, magic_len) != 0) {
    throw FormatError("not an msam embedding container (bad magic)");
  }
  if (bytes.size() < kHeaderBytes + 4) throw CorruptionError("container truncated in header");

  const auto payload = bytes.first(bytes.size() - 4);
  Reader trailer(bytes.last(4), "container");
  const std::uint32_t stored_crc = trailer.u32("checksum");
  if (crc32(payload) != stored_crc) throw CorruptionError("container checksum mismatch");

  Reader r(payload, "container");
  r.skip(sizeof(kContainerMagic), "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(version));
  }
  EmbeddingBatch batch;
  batch.dim = r.u32("dimension");
  const std::uint32_t n_videos = r.u32("video count");
  const std::uint32_t n_texts = r.u32("text count");
  if (batch.dim == 0) throw ValidationError("container declares embedding dimension 0");
  const std::size_t d = batch.dim;

  for (std::uint32_t i = 0; i < n_videos; ++i) {
    VideoRecord v;
    v.id = r.u64("video id");
    const std::uint32_t f = r.u32("frame count");
    if (f == 0) throw ValidationError("video " + std::to_string(v.id) + " has zero frames");
    v.frames = r.f32s(Shape{f, d}, "frames");
    v.pooled = r.f32s(Shape{d}, "video pooled");
    batch.videos.push_back(std::move(v));
  }
  for (std::uint32_t i = 0; i < n_texts; ++i) {
    TextRecord t;
    t.id = r.u64("text id");
    t.video_id = r.u64("text video id");
    const std::uint32_t l = r.u32("token count");
    if (l == 0) throw ValidationError("text " + std::to_string(t.id) + " has zero tokens");
    t.tokens = r.f32s(Shape{l, d}, "tokens");
    t.pooled = r.f32s(Shape{d}, "text pooled");
    batch.texts.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw CorruptionError("container has trailing bytes after records");

  const auto diags = validate(batch);
  for (const auto& diag : diags) {
    if (diag.kind == Kind::Reference) throw ReferenceError(join_diagnostics(diags));
  }
  if (!diags.empty()) throw ValidationError(join_diagnostics(diags));
  return batch;
}

std::size_t write_container(const EmbeddingBatch& batch, std::ostream& out) {
  const auto bytes = encode_container(batch);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed to write container bytes");
  return bytes.size();
}

EmbeddingBatch read_container(std::istream& in) {
  std::vector<char> raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_container(std::as_bytes(std::span<const char>(raw)));
}

void save_container(const EmbeddingBatch& batch, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  write_container(batch, out);
}

EmbeddingBatch load_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return read_container(in);
}

void SynthSpec::validate() const {
  if (num_videos == 0 || frames_per_video == 0 || captions_per_video == 0 || token_len == 0 ||
      dim == 0) {
    throw ContractError("synthetic spec counts must all be >= 1");
  }
  if (!(cluster_noise >= 0.0 && cluster_noise <= 1.0)) {
    throw ContractError("cluster_noise must lie in [0, 1]");
  }
}

namespace {

std::vector<double> gaussian(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

void normalize(std::vector<double>& v) {
  double sq = 0;
  for (double x : v) sq += x * x;
  const double norm = std::max(std::sqrt(sq), kNormalizeEps);
  for (double& x : v) x /= norm;
}

std::vector<double> noisy(const std::vector<double>& center, Rng& rng, double noise) {
  auto g = gaussian(rng, center.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = center[i] + noise * g[i];
  return g;
}

}  // namespace

EmbeddingBatch gen_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t d = spec.dim;
  EmbeddingBatch batch;
  batch.dim = static_cast<std::uint32_t>(d);

  std::vector<std::vector<double>> centers;
  for (std::size_t v = 0; v < spec.num_videos; ++v) {
    auto center = gaussian(rng, d);
    normalize(center);
    VideoRecord rec;
    rec.id = v;
    rec.frames = Tensor<float>(Shape{spec.frames_per_video, d});
    std::vector<double> mean(d, 0.0);
    for (std::size_t f = 0; f < spec.frames_per_video; ++f) {
      auto frame = noisy(center, rng, spec.cluster_noise);
      normalize(frame);
      for (std::size_t i = 0; i < d; ++i) {
        rec.frames[f * d + i] = static_cast<float>(frame[i]);
        mean[i] += frame[i];
      }
    }
    normalize(mean);
    rec.pooled = Tensor<float>(Shape{d});
    for (std::size_t i = 0; i < d; ++i) rec.pooled[i] = static_cast<float>(mean[i]);
    batch.videos.push_back(std::move(rec));
    centers.push_back(std::move(center));
  }

  std::uint64_t text_id = 0;
  for (std::size_t v = 0; v < spec.num_videos; ++v) {
    for (std::size_t c = 0; c < spec.captions_per_video; ++c) {
      auto pooled = noisy(centers[v], rng, spec.cluster_noise);
      normalize(pooled);
      TextRecord rec;
      rec.id = text_id++;
      rec.video_id = v;
      rec.pooled = Tensor<float>(Shape{d});
      for (std::size_t i = 0; i < d; ++i) rec.pooled[i] = static_cast<float>(pooled[i]);
      rec.tokens = Tensor<float>(Shape{spec.token_len, d});
      for (std::size_t l = 0; l < spec.token_len; ++l) {
        const auto token = noisy(pooled, rng, spec.cluster_noise);
        for (std::size_t i = 0; i < d; ++i) rec.tokens[l * d + i] = static_cast<float>(token[i]);
      }
      batch.texts.push_back(std::move(rec));
    }
  }
  return batch;
}

std::vector<std::size_t> text_to_video_index(const EmbeddingBatch& batch) {
  std::vector<std::pair<std::uint64_t, std::size_t>> ids;
  ids.reserve(batch.videos.size());
  for (std::size_t i = 0; i < batch.videos.size(); ++i) ids.emplace_back(batch.videos[i].id, i);
  std::sort(ids.begin(), ids.end());
  std::vector<std::size_t> out;
  out.reserve(batch.texts.size());
  for (const auto& t : batch.texts) {
    auto it = std::lower_bound(ids.begin(), ids.end(), std::make_pair(t.video_id, std::size_t{0}));
    if (it == ids.end() || it->first != t.video_id) {
      throw ReferenceError("text " + std::to_string(t.id) + " references missing video id " +
                           std::to_string(t.video_id));
    }
    out.push_back(it->second);
  }
  return out;
}

namespace {

template <typename Get>
Tensor<float> stack(std::size_t count, std::uint32_t dim, const char* what, Get get) {
  if (count == 0) throw ContractError(std::string("cannot stack zero ") + what);
  const Tensor<float>& first = get(0);
  Shape shape{count};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  if (first.shape().back() != dim) throw ShapeError(std::string(what) + " width does not match D");
  Tensor<float> out(shape);
  const std::size_t per = first.size();
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor<float>& t = get(i);
    if (t.shape() != first.shape()) {
      throw ContractError(std::string(what) + ": records have differing shapes " +
                          to_string(first.shape()) + " and " + to_string(t.shape()) +
                          "; stacking needs a uniform length");
    }
    std::copy(t.data().begin(), t.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

}  // namespace

Tensor<float> stack_frames(const EmbeddingBatch& batch, std::span<const std::size_t> videos) {
  return stack(videos.size(), batch.dim, "frames",
               [&](std::size_t i) -> const Tensor<float>& { return batch.videos.at(videos[i]).frames; });
}

Tensor<float> stack_video_pooled(const EmbeddingBatch& batch, std::span<const std::size_t> videos) {
  return stack(videos.size(), batch.dim, "video pooled",
               [&](std::size_t i) -> const Tensor<float>& { return batch.videos.at(videos[i]).pooled; });
}

Tensor<float> stack_tokens(const EmbeddingBatch& batch, std::span<const std::size_t> texts) {
  return stack(texts.size(), batch.dim, "tokens",
               [&](std::size_t i) -> const Tensor<float>& { return batch.texts.at(texts[i]).tokens; });
}

Tensor<float> stack_text_pooled(const EmbeddingBatch& batch, std::span<const std::size_t> texts) {
  return stack(texts.size(), batch.dim, "text pooled",
               [&](std::size_t i) -> const Tensor<float>& { return batch.texts.at(texts[i]).pooled; });
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = i;
  return out;
}

}  // namespace msam
