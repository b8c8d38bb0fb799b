#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zsa/core/error.hpp"

namespace zsa::backbones {

enum class BackboneKind { transformer, cnn14, vggish };

inline std::string to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::transformer: return "transformer";
    case BackboneKind::cnn14: return "cnn14";
    case BackboneKind::vggish: return "vggish";
  }
  return "?";
}

inline BackboneKind parse_backbone_kind(const std::string& s) {
  if (s == "transformer" || s == "passt") return BackboneKind::transformer;
  if (s == "cnn14") return BackboneKind::cnn14;
  if (s == "vggish") return BackboneKind::vggish;
  throw ConfigError("unknown backbone kind '" + s + "' (expected transformer, cnn14 or vggish)");
}

struct TransformerConfig {
  std::size_t patch_freq = 16;
  std::size_t patch_time = 16;
  std::size_t dim = 768;
  std::size_t heads = 12;
  std::size_t layers = 12;
  std::size_t ffn_mult = 4;
  std::size_t max_freq_patches = 8;
  std::size_t max_time_patches = 62;

  void validate() const {
    require(patch_freq > 0 && patch_time > 0, "transformer: patch size must be positive");
    require(dim > 0 && heads > 0 && dim % heads == 0, "transformer: dim must be divisible by heads");
    require(layers > 0 && ffn_mult > 0, "transformer: layers and ffn_mult must be positive");
    require(max_freq_patches > 0 && max_time_patches > 0, "transformer: positional tables must be non-empty");
  }
  friend bool operator==(const TransformerConfig&, const TransformerConfig&) = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TransformerConfig, patch_freq, patch_time, dim, heads, layers, ffn_mult,
                                   max_freq_patches, max_time_patches)

struct PatchoutConfig {
  std::size_t n_freq_drop = 1;
  std::size_t n_time_drop = 2;
  friend bool operator==(const PatchoutConfig&, const PatchoutConfig&) = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PatchoutConfig, n_freq_drop, n_time_drop)

// Six blocks of two 3x3 conv layers; 2x2 average pooling after blocks 1-5.
struct Cnn14Config {
  std::vector<std::size_t> channels{64, 128, 256, 512, 1024, 2048};
  std::size_t fc_dim = 2048;

  void validate() const {
    require(channels.size() == 6, "cnn14: need exactly 6 block widths");
    for (auto c : channels) require(c > 0, "cnn14: block widths must be positive");
    require(fc_dim > 0, "cnn14: fc_dim must be positive");
  }
  static constexpr std::size_t min_extent = 32;
  friend bool operator==(const Cnn14Config&, const Cnn14Config&) = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Cnn14Config, channels, fc_dim)

// conv1, pool, conv2, pool, conv3, conv4, pool, conv5, conv6, pool, then two
// fully connected layers. Input is exactly 64 mel bins x 96 frames.
struct VggishConfig {
  std::vector<std::size_t> channels{64, 128, 256, 256, 512, 512};
  std::size_t fc_dim = 4096;
  std::size_t chunk_frames = 96;
  std::size_t mel_bins = 64;

  void validate() const {
    require(channels.size() == 6, "vggish: need exactly 6 conv widths");
    for (auto c : channels) require(c > 0, "vggish: conv widths must be positive");
    require(fc_dim > 0, "vggish: fc_dim must be positive");
    require(chunk_frames % 16 == 0 && mel_bins % 16 == 0, "vggish: input extents must be multiples of 16");
  }
  friend bool operator==(const VggishConfig&, const VggishConfig&) = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(VggishConfig, channels, fc_dim, chunk_frames, mel_bins)

struct BackboneConfig {
  BackboneKind kind = BackboneKind::transformer;
  std::size_t embed_dim = 768;
  TransformerConfig transformer;
  PatchoutConfig patchout;
  Cnn14Config cnn14;
  VggishConfig vggish;

  void validate() const {
    require(embed_dim > 0, "backbone: embed_dim must be positive");
    switch (kind) {
      case BackboneKind::transformer: transformer.validate(); break;
      case BackboneKind::cnn14: cnn14.validate(); break;
      case BackboneKind::vggish: vggish.validate(); break;
    }
  }
  friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

inline void to_json(nlohmann::json& j, const BackboneConfig& c) {
  j = {{"kind", to_string(c.kind)},
       {"embed_dim", c.embed_dim},
       {"transformer", c.transformer},
       {"patchout", c.patchout},
       {"cnn14", c.cnn14},
       {"vggish", c.vggish}};
}

inline void from_json(const nlohmann::json& j, BackboneConfig& c) {
  c.kind = parse_backbone_kind(j.at("kind").get<std::string>());
  j.at("embed_dim").get_to(c.embed_dim);
  j.at("transformer").get_to(c.transformer);
  j.at("patchout").get_to(c.patchout);
  j.at("cnn14").get_to(c.cnn14);
  j.at("vggish").get_to(c.vggish);
}

}  // namespace zsa::backbones
