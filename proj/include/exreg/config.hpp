#pragma once

#include <map>
#include <string>
#include <vector>

namespace exreg {

struct MegnetConfig {
  std::size_t width = 64;          // base-path channels, also the length of each alpha/beta
  std::size_t layers = 3;          // modulated 1x1 layers
  std::size_t global_width = 32;
  std::size_t global_layers = 3;   // stride-2 4x4 convs before global average pooling
  std::size_t global_size = 32;    // the global encoder sees the input resized to this square
  std::size_t ev_width = 32;
  std::size_t ev_layers = 3;
  std::size_t head_hidden = 64;
};

struct RegnetConfig {
  std::vector<std::size_t> encoder_channels{16, 32, 32, 32};  // last entry is the token width
  std::size_t predictor_width = 32;
  std::size_t predictor_layers = 7;
  std::size_t attn_width = 128;
  std::size_t heads = 8;
  std::size_t fam_hidden = 8;

  std::size_t token_channels() const { return encoder_channels.back(); }
};

struct ModelConfig {
  std::string profile = "desk";
  std::size_t image_size = 64;
  // Relative EVs MEGNet generates around the input; the input itself sits at 0.
  std::vector<double> stack_evs{-1.5, -1.0, 1.0, 1.5};
  MegnetConfig megnet;
  RegnetConfig regnet;

  void validate() const;
};

// "desk" (64 px), "full" (512 px, 192-channel tokens) or "micro" (tiny widths for gradient checks).
ModelConfig model_profile(const std::string& name);

// Line-oriented "key = value" text; '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;
KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& kv);

KeyValues to_key_values(const ModelConfig& c);
// Starts from the profile named by "profile" (default desk) and applies the remaining keys.
ModelConfig model_config_from(const KeyValues& kv);

std::string format_list(const std::vector<double>& v);
std::vector<double> parse_double_list(const std::string& s);
std::vector<std::size_t> parse_size_list(const std::string& s);

}  // namespace exreg
