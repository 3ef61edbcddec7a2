#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msam/ciffp.hpp"
#include "msam/losses.hpp"
#include "msam/msalm.hpp"

namespace msam {

// Everything the trainer optimizes. The encoders are external.
template <typename T>
struct ModelParams {
  CiffpParams<T> ciffp;
  MsalmParams<T> msalm_text;
  MsalmParams<T> msalm_video;
  LogitScale<T> scale;

  std::size_t dim() const { return ciffp.gate_weight.size(); }
  std::size_t k() const { return msalm_text.k; }

  // Shapes, finiteness and sub-type invariants.
  void validate() const;

  // fn(qualified_name, tensor, decays) over every tensor, in checkpoint
  // order. Names look like "msalm_text.queries".
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    auto prefixed = [&fn](const char* prefix) {
      return [&fn, prefix](const char* name, auto& tensor, bool decays) {
        fn(std::string(prefix) + name, tensor, decays);
      };
    };
    CiffpParams<T>::visit(self.ciffp, prefixed("ciffp."));
    MsalmParams<T>::visit(self.msalm_text, prefixed("msalm_text."));
    MsalmParams<T>::visit(self.msalm_video, prefixed("msalm_video."));
    LogitScale<T>::visit(self.scale, prefixed("scale."));
  }

  template <typename U>
  ModelParams<U> cast() const;
};

// Identity D x D projections, zero biases and gate, unit layer-norm gain,
// log scale ln(100). Queries are N(0, 1) / sqrt(D) from Rng(seed), text
// branch first.
template <typename T>
ModelParams<T> init_params(std::size_t dim, std::size_t k, std::uint64_t seed,
                           T sigma_floor = T(kSigmaFloor));

// Bitwise equality of every tensor and of k.
template <typename T>
bool bit_identical(const ModelParams<T>& a, const ModelParams<T>& b);

// Checkpoint layout (little-endian):
//   "MSAMCKP1" | u32 version=1 | u32 D | u32 k | u32 sections
//   sections x { u32 name_len | name | u32 rank | rank x u32 dims | f32 values }
//   u32 CRC-32 of all preceding bytes
// sigma_floor is not stored; loaded params use kSigmaFloor.
inline constexpr char kCheckpointMagic[8] = {'M', 'S', 'A', 'M', 'C', 'K', 'P', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::byte> encode_checkpoint(const ModelParams<float>& params);
// Bad magic, version or section set -> FormatError; truncation, trailing
// bytes or CRC mismatch -> CorruptionError.
ModelParams<float> decode_checkpoint(std::span<const std::byte> bytes);

void save_checkpoint(const ModelParams<float>& params, const std::string& path);
ModelParams<float> load_checkpoint(const std::string& path);

}  // namespace msam
