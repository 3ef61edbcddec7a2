#include "msam/model.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "byteio.hpp"
#include "msam/embio.hpp"
#include "msam/random.hpp"

namespace msam {
namespace {

template <typename U, typename T>
MsalmParams<U> cast_msalm(const MsalmParams<T>& p) {
  MsalmParams<U> out;
  out.queries = p.queries.template cast<U>();
  out.attn_proj_key = p.attn_proj_key.template cast<U>();
  out.attn_proj_value = p.attn_proj_value.template cast<U>();
  out.ln_gamma = p.ln_gamma.template cast<U>();
  out.ln_beta = p.ln_beta.template cast<U>();
  out.ff_weight = p.ff_weight.template cast<U>();
  out.ff_bias = p.ff_bias.template cast<U>();
  out.mu_weight = p.mu_weight.template cast<U>();
  out.mu_bias = p.mu_bias.template cast<U>();
  out.sigma_weight = p.sigma_weight.template cast<U>();
  out.sigma_bias = p.sigma_bias.template cast<U>();
  out.k = p.k;
  out.sigma_floor = U(p.sigma_floor);
  return out;
}

}  // namespace

template <typename T>
void ModelParams<T>::validate() const {
  const std::size_t d = dim();
  if (d == 0) throw ContractError("model: empty gate weight");
  if (ciffp.gate_weight.shape() != Shape{d} || ciffp.gate_bias.shape() != Shape{1}) {
    throw ShapeError("model: gate must be [D] weight and [1] bias");
  }
  if (!all_finite(ciffp.gate_weight) || !all_finite(ciffp.gate_bias)) {
    throw ValidationError("model: gate is not finite");
  }
  msalm_text.validate();
  msalm_video.validate();
  if (msalm_text.dim() != d || msalm_video.dim() != d) {
    throw ShapeError("model: msalm width differs from gate width");
  }
  if (msalm_text.k != msalm_video.k) throw ShapeError("model: text and video k differ");
  if (scale.log_tau_inv.shape() != Shape{1} || !all_finite(scale.log_tau_inv)) {
    throw ValidationError("model: log scale must be one finite value");
  }
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.ciffp.gate_weight = ciffp.gate_weight.template cast<U>();
  out.ciffp.gate_bias = ciffp.gate_bias.template cast<U>();
  out.msalm_text = cast_msalm<U>(msalm_text);
  out.msalm_video = cast_msalm<U>(msalm_video);
  out.scale.log_tau_inv = scale.log_tau_inv.template cast<U>();
  return out;
}

template <typename T>
ModelParams<T> init_params(std::size_t dim, std::size_t k, std::uint64_t seed, T sigma_floor) {
  if (dim == 0) throw ContractError("init_params: dim must be >= 1");
  Rng rng(seed);
  ModelParams<T> p;
  p.ciffp = CiffpParams<T>::zeros(dim);
  p.msalm_text = MsalmParams<T>::init(dim, k, rng, sigma_floor);
  p.msalm_video = MsalmParams<T>::init(dim, k, rng, sigma_floor);
  return p;
}

template <typename T>
bool bit_identical(const ModelParams<T>& a, const ModelParams<T>& b) {
  if (a.k() != b.k()) return false;
  std::vector<const Tensor<T>*> left;
  ModelParams<T>::visit(a, [&](const std::string&, const Tensor<T>& t, bool) { left.push_back(&t); });
  std::size_t i = 0;
  bool same = true;
  ModelParams<T>::visit(b, [&](const std::string&, const Tensor<T>& t, bool) {
    const Tensor<T>& o = *left[i++];
    same = same && o.shape() == t.shape() &&
           std::memcmp(o.data().data(), t.data().data(), t.size() * sizeof(T)) == 0;
  });
  return same;
}

std::vector<std::byte> encode_checkpoint(const ModelParams<float>& params) {
  params.validate();
  detail::Writer w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.dim()));
  w.u32(static_cast<std::uint32_t>(params.k()));
  std::uint32_t sections = 0;
  ModelParams<float>::visit(params, [&](const std::string&, const Tensor<float>&, bool) { ++sections; });
  w.u32(sections);
  ModelParams<float>::visit(params, [&](const std::string& name, const Tensor<float>& t, bool) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (const std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(t.data());
  });
  w.u32(crc32(w.buffer()));
  return std::move(w.buffer());
}

ModelParams<float> decode_checkpoint(std::span<const std::byte> bytes) {
  const std::size_t magic_len = std::min(bytes.size(), sizeof(kCheckpointMagic));
  if (magic_len == 0 || std::memcmp(bytes.data(), kCheckpointMagic, magic_len) != 0) {
    throw FormatError("not an msam checkpoint (bad magic)");
  }
  constexpr std::size_t kHeader = sizeof(kCheckpointMagic) + 4 * 4;
  if (bytes.size() < kHeader + 4) throw CorruptionError("checkpoint truncated in header");
  const auto payload = bytes.first(bytes.size() - 4);
  detail::Reader trailer(bytes.last(4), "checkpoint");
  if (crc32(payload) != trailer.u32("checksum")) throw CorruptionError("checkpoint checksum mismatch");

  detail::Reader r(payload, "checkpoint");
  r.skip(sizeof(kCheckpointMagic), "magic");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t dim = r.u32("dimension");
  const std::uint32_t k = r.u32("k");
  if (dim == 0 || k == 0) throw FormatError("checkpoint declares D or k of 0");
  const std::uint32_t sections = r.u32("section count");
  // Every D x D matrix and the k x D queries must fit in what is left.
  if (std::uint64_t(dim) * dim > r.remaining() / 4 || std::uint64_t(k) * dim > r.remaining() / 4) {
    throw CorruptionError("checkpoint truncated: header declares more values than present");
  }

  ModelParams<float> params = init_params<float>(dim, k, 0);
  std::map<std::string, Tensor<float>*> slots;
  ModelParams<float>::visit(params, [&](const std::string& name, Tensor<float>& t, bool) {
    slots[name] = &t;
  });
  if (sections != slots.size()) {
    throw FormatError("checkpoint has " + std::to_string(sections) + " sections, expected " +
                      std::to_string(slots.size()));
  }
  for (std::uint32_t i = 0; i < sections; ++i) {
    const std::string name = r.str(r.u32("name length"), "section name");
    const auto slot = slots.find(name);
    if (slot == slots.end() || slot->second == nullptr) {
      throw FormatError("checkpoint section '" + name + "' is unknown or repeated");
    }
    const std::uint32_t rank = r.u32("rank");
    if (rank != slot->second->rank()) throw FormatError("checkpoint section '" + name + "' has wrong rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u32("dims");
    if (shape != slot->second->shape()) {
      throw FormatError("checkpoint section '" + name + "' has shape " + to_string(shape) +
                        ", expected " + to_string(slot->second->shape()));
    }
    *slot->second = r.f32s(shape, name.c_str());
    slot->second = nullptr;
  }
  if (r.remaining() != 0) throw CorruptionError("checkpoint has trailing bytes");
  params.validate();
  return params;
}

void save_checkpoint(const ModelParams<float>& params, const std::string& path) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed to write " + path);
}

ModelParams<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<char> raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(std::as_bytes(std::span<const char>(raw)));
}

#define MSAM_INSTANTIATE(T)                                                              \
  template struct ModelParams<T>;                                                        \
  template ModelParams<float> ModelParams<T>::cast<float>() const;                       \
  template ModelParams<double> ModelParams<T>::cast<double>() const;                     \
  template ModelParams<T> init_params(std::size_t, std::size_t, std::uint64_t, T);       \
  template bool bit_identical(const ModelParams<T>&, const ModelParams<T>&);

MSAM_INSTANTIATE(float)
MSAM_INSTANTIATE(double)

#undef MSAM_INSTANTIATE

}  // namespace msam
