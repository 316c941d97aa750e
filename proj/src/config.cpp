#include "exreg/config.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

#include "exreg/dataset.hpp"

namespace exreg {

void ModelConfig::validate() const {
  if (image_size == 0 || image_size % 16 != 0) {
    throw std::invalid_argument("image_size must be a positive multiple of 16, got " + std::to_string(image_size));
  }
  if (regnet.encoder_channels.size() != 4) throw std::invalid_argument("regnet needs exactly 4 encoder widths");
  if (regnet.heads == 0 || regnet.attn_width % regnet.heads != 0) {
    throw std::invalid_argument("attention heads must divide the attention width");
  }
  if (regnet.predictor_layers < 2) throw std::invalid_argument("exposure predictor needs at least 2 layers");
  if (megnet.layers < 1 || megnet.global_layers < 1 || megnet.ev_layers < 1) {
    throw std::invalid_argument("megnet layer counts must be >= 1");
  }
  if (megnet.global_size >> megnet.global_layers == 0 || megnet.global_size % (1u << megnet.global_layers) != 0) {
    throw std::invalid_argument("megnet global_size must be divisible by 2^global_layers");
  }
  for (std::size_t i = 0; i < stack_evs.size(); ++i) {
    if (stack_evs[i] == 0) throw std::invalid_argument("stack_evs must exclude 0 (the input occupies it)");
    for (std::size_t j = i + 1; j < stack_evs.size(); ++j)
      if (stack_evs[i] == stack_evs[j]) throw std::invalid_argument("stack_evs contains a duplicate");
  }
}

ModelConfig model_profile(const std::string& name) {
  ModelConfig c;
  c.profile = name;
  if (name == "desk") return c;
  if (name == "full") {
    c.image_size = 512;
    c.regnet.encoder_channels = {48, 96, 144, 192};
    c.regnet.attn_width = 256;
    c.megnet.global_size = 64;
    return c;
  }
  if (name == "micro") {
    c.image_size = 16;
    c.megnet = MegnetConfig{4, 3, 3, 3, 8, 3, 3, 4};
    c.regnet.encoder_channels = {3, 3, 3, 4};
    c.regnet.predictor_width = 3;
    c.regnet.attn_width = 8;
    c.regnet.heads = 2;
    c.regnet.fam_hidden = 2;
    return c;
  }
  throw std::invalid_argument("unknown profile '" + name + "' (expected desk, full or micro)");
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    kv[trim(line.substr(0, eq))] = value;
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string format_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_ev(v[i]);
  return s;
}

namespace {

template <class T>
T parse_number(const std::string& s) {
  T v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

template <class T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(" []");
    const auto e = item.find_last_not_of(" []");
    if (b == std::string::npos) continue;
    out.push_back(parse_number<T>(item.substr(b, e - b + 1)));
  }
  return out;
}

std::string size_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

std::vector<double> parse_double_list(const std::string& s) { return parse_list<double>(s); }
std::vector<std::size_t> parse_size_list(const std::string& s) { return parse_list<std::size_t>(s); }

KeyValues to_key_values(const ModelConfig& c) {
  const auto n = [](std::size_t v) { return std::to_string(v); };
  return {
      {"profile", c.profile},
      {"image_size", n(c.image_size)},
      {"stack_evs", format_list(c.stack_evs)},
      {"megnet.width", n(c.megnet.width)},
      {"megnet.layers", n(c.megnet.layers)},
      {"megnet.global_width", n(c.megnet.global_width)},
      {"megnet.global_layers", n(c.megnet.global_layers)},
      {"megnet.global_size", n(c.megnet.global_size)},
      {"megnet.ev_width", n(c.megnet.ev_width)},
      {"megnet.ev_layers", n(c.megnet.ev_layers)},
      {"megnet.head_hidden", n(c.megnet.head_hidden)},
      {"regnet.encoder_channels", size_list(c.regnet.encoder_channels)},
      {"regnet.predictor_width", n(c.regnet.predictor_width)},
      {"regnet.predictor_layers", n(c.regnet.predictor_layers)},
      {"regnet.attn_width", n(c.regnet.attn_width)},
      {"regnet.heads", n(c.regnet.heads)},
      {"regnet.fam_hidden", n(c.regnet.fam_hidden)},
  };
}

ModelConfig model_config_from(const KeyValues& kv) {
  auto it = kv.find("profile");
  ModelConfig c = model_profile(it == kv.end() ? "desk" : it->second);
  const auto size = [&](const char* key, std::size_t& dst) {
    if (auto f = kv.find(key); f != kv.end()) dst = parse_number<std::size_t>(f->second);
  };
  size("image_size", c.image_size);
  if (auto f = kv.find("stack_evs"); f != kv.end()) c.stack_evs = parse_double_list(f->second);
  size("megnet.width", c.megnet.width);
  size("megnet.layers", c.megnet.layers);
  size("megnet.global_width", c.megnet.global_width);
  size("megnet.global_layers", c.megnet.global_layers);
  size("megnet.global_size", c.megnet.global_size);
  size("megnet.ev_width", c.megnet.ev_width);
  size("megnet.ev_layers", c.megnet.ev_layers);
  size("megnet.head_hidden", c.megnet.head_hidden);
  if (auto f = kv.find("regnet.encoder_channels"); f != kv.end()) c.regnet.encoder_channels = parse_size_list(f->second);
  size("regnet.predictor_width", c.regnet.predictor_width);
  size("regnet.predictor_layers", c.regnet.predictor_layers);
  size("regnet.attn_width", c.regnet.attn_width);
  size("regnet.heads", c.regnet.heads);
  size("regnet.fam_hidden", c.regnet.fam_hidden);
  c.validate();
  return c;
}

}  // namespace exreg
