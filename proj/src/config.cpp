#include "cmwnet/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <set>

#include "cmwnet/architecture.hpp"
#include "cmwnet/errors.hpp"

namespace cmwnet {

void NetworkConfig::validate() const {
  if (input_resolution == 0 || input_resolution % 16 != 0) {
    throw ConfigError("input_resolution must be a positive multiple of 16, got " +
                      std::to_string(input_resolution));
  }
  for (std::size_t c : block_channels) {
    if (c == 0) throw ConfigError("block_channels entries must be >= 1");
  }
  for (std::size_t c : decoder_channels) {
    if (c == 0) throw ConfigError("decoder_channels entries must be >= 1");
  }
}

NetworkConfig NetworkConfig::toy(std::size_t resolution) {
  NetworkConfig c;
  c.input_resolution = resolution;
  c.block_channels = {4, 8, 8, 8, 8};
  c.decoder_channels = {8, 8, 4};
  return c;
}

void AblationSpec::validate() const {
  if (!use_depth && direction == Direction::ReD) {
    throw ConfigError("ReD direction needs the depth stream (use_depth=false)");
  }
  if (!use_depth && !use_weighting) {
    throw ConfigError("concatenation fusion (use_weighting=false) needs the depth stream");
  }
  if (!use_weighting && (!use_rw || rw_global_filters || !dw_global_filters)) {
    throw ConfigError("RW/DW filter switches have no effect when use_weighting=false");
  }
  if (rw_global_filters && !use_rw) {
    throw ConfigError("rw_global_filters requires use_rw");
  }
  if (scale_mode != ScaleMode::cross_adjacent && (!use_cmw_lm || !use_depth || !use_weighting)) {
    throw ConfigError("scale_mode only applies when CMW-L&M depth weighting is active");
  }
  if (!dw_global_filters && !use_depth) {
    throw ConfigError("dw_global_filters=false has no effect without the depth stream");
  }
}

namespace {

std::string normalize_variant(std::string_view name) {
  std::string out;
  for (char ch : name) {
    const auto c = static_cast<unsigned char>(ch);
    if (c == ' ' || c == '-' || c == '_' || c == '.') continue;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

}  // namespace

const std::vector<std::string>& ablation_variant_names() {
  static const std::vector<std::string> names = {
      "full",     "ReD",      "w/o-depth", "w/o-CMW-L&M", "w/o-CMW-H", "w/o-RW",
      "w/o-Wei",  "DW-w/o-GF", "RW-w/-GF", "w/o-CS",      "C2S",       "w/o-DS"};
  return names;
}

AblationSpec ablation_from_name(std::string_view name) {
  const std::string n = normalize_variant(name);
  AblationSpec a;
  if (n == "full" || n == "der" || n == "ours") return a;
  if (n == "red") {
    a.direction = Direction::ReD;
  } else if (n == "w/odepth" || n == "w/odw") {
    a.use_depth = false;
  } else if (n == "w/ocmwl&m" || n == "w/ocmwlm") {
    a.use_cmw_lm = false;
  } else if (n == "w/ocmwh") {
    a.use_cmw_h = false;
  } else if (n == "w/orw") {
    a.use_rw = false;
  } else if (n == "w/owei") {
    a.use_weighting = false;
  } else if (n == "dww/ogf") {
    a.dw_global_filters = false;
  } else if (n == "rww/gf") {
    a.rw_global_filters = true;
  } else if (n == "w/ocs") {
    a.scale_mode = ScaleMode::same_scale;
  } else if (n == "c2s") {
    a.scale_mode = ScaleMode::cross_two;
  } else if (n == "w/ods") {
    a.deep_supervision = false;
  } else {
    throw ConfigError("unknown ablation variant '" + std::string(name) + "'");
  }
  return a;
}

std::string to_string(Direction d) { return d == Direction::DeR ? "DeR" : "ReD"; }

std::string to_string(ScaleMode m) {
  switch (m) {
    case ScaleMode::cross_adjacent: return "cross_adjacent";
    case ScaleMode::same_scale: return "same_scale";
    case ScaleMode::cross_two: return "cross_two";
  }
  return "cross_adjacent";
}

std::string to_string(DType d) { return d == DType::f32 ? "f32" : "f64"; }

json to_json(const NetworkConfig& c) {
  return json{{"input_resolution", c.input_resolution},
              {"block_channels", c.block_channels},
              {"decoder_channels", c.decoder_channels},
              {"response_channels_policy", "match_target_block"},
              {"seed", c.seed},
              {"dtype", to_string(c.dtype)}};
}

json to_json(const AblationSpec& a) {
  return json{{"direction", to_string(a.direction)},
              {"use_depth", a.use_depth},
              {"use_cmw_lm", a.use_cmw_lm},
              {"use_cmw_h", a.use_cmw_h},
              {"use_rw", a.use_rw},
              {"use_weighting", a.use_weighting},
              {"dw_global_filters", a.dw_global_filters},
              {"rw_global_filters", a.rw_global_filters},
              {"scale_mode", to_string(a.scale_mode)},
              {"deep_supervision", a.deep_supervision}};
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) {
      throw ConfigError(std::string("unknown key '") + key + "' in " + section);
    }
  }
}

template <typename V>
V get_or(const json& j, const char* key, V fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

NetworkConfig network_config_from_json(const json& j) {
  reject_unknown(j,
                 {"input_resolution", "block_channels", "decoder_channels",
                  "response_channels_policy", "seed", "dtype"},
                 "network config");
  NetworkConfig c;
  c.input_resolution = get_or(j, "input_resolution", c.input_resolution);
  c.block_channels = get_or(j, "block_channels", c.block_channels);
  c.decoder_channels = get_or(j, "decoder_channels", c.decoder_channels);
  c.seed = get_or(j, "seed", c.seed);
  const auto policy = get_or<std::string>(j, "response_channels_policy", "match_target_block");
  if (policy != "match_target_block") {
    throw ConfigError("response_channels_policy must be 'match_target_block'");
  }
  const auto dtype = get_or<std::string>(j, "dtype", "f32");
  if (dtype == "f32") {
    c.dtype = DType::f32;
  } else if (dtype == "f64") {
    c.dtype = DType::f64;
  } else {
    throw ConfigError("dtype must be f32 or f64");
  }
  c.validate();
  return c;
}

AblationSpec ablation_from_json(const json& j) {
  reject_unknown(j,
                 {"direction", "use_depth", "use_cmw_lm", "use_cmw_h", "use_rw", "use_weighting",
                  "dw_global_filters", "rw_global_filters", "scale_mode", "deep_supervision"},
                 "ablation spec");
  AblationSpec a;
  const auto dir = get_or<std::string>(j, "direction", "DeR");
  if (dir == "DeR") {
    a.direction = Direction::DeR;
  } else if (dir == "ReD") {
    a.direction = Direction::ReD;
  } else {
    throw ConfigError("direction must be DeR or ReD");
  }
  a.use_depth = get_or(j, "use_depth", a.use_depth);
  a.use_cmw_lm = get_or(j, "use_cmw_lm", a.use_cmw_lm);
  a.use_cmw_h = get_or(j, "use_cmw_h", a.use_cmw_h);
  a.use_rw = get_or(j, "use_rw", a.use_rw);
  a.use_weighting = get_or(j, "use_weighting", a.use_weighting);
  a.dw_global_filters = get_or(j, "dw_global_filters", a.dw_global_filters);
  a.rw_global_filters = get_or(j, "rw_global_filters", a.rw_global_filters);
  a.deep_supervision = get_or(j, "deep_supervision", a.deep_supervision);
  const auto mode = get_or<std::string>(j, "scale_mode", "cross_adjacent");
  if (mode == "cross_adjacent") {
    a.scale_mode = ScaleMode::cross_adjacent;
  } else if (mode == "same_scale") {
    a.scale_mode = ScaleMode::same_scale;
  } else if (mode == "cross_two") {
    a.scale_mode = ScaleMode::cross_two;
  } else {
    throw ConfigError("scale_mode must be cross_adjacent, same_scale or cross_two");
  }
  a.validate();
  return a;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t config_hash(const json& j) { return fnv1a64(j.dump()); }

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void ShapeTable::add(std::string name, std::vector<std::size_t> shape) {
  if (contains(name)) throw ShapeError("duplicate shape entry " + name);
  entries_.emplace_back(std::move(name), std::move(shape));
}

bool ShapeTable::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

const std::vector<std::size_t>& ShapeTable::at(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw ShapeError("no shape entry named " + std::string(name));
}

ShapeTable expected_shapes(const NetworkConfig& config, const AblationSpec& ablation) {
  config.validate();
  ablation.validate();
  ShapeTable t;
  auto block_shape = [&](int l) {
    const std::size_t r = config.block_resolution(l);
    return std::vector<std::size_t>{config.channels(l), r, r};
  };
  for (int l = 1; l <= 5; ++l) t.add("R-E" + std::to_string(l), block_shape(l));
  if (ablation.use_depth) {
    for (int l = 1; l <= 5; ++l) t.add("D-E" + std::to_string(l), block_shape(l));
  }
  for (int l = 1; l <= 5; ++l) {
    if (!arch::cmw_active(ablation, l) || !ablation.use_weighting) continue;
    if (ablation.use_depth) {
      t.add("r_dw" + std::to_string(l), block_shape(arch::dw_target(ablation, l)));
    }
    if (ablation.use_rw) t.add("r_rw" + std::to_string(l), block_shape(l));
  }
  for (int l = 1; l <= 5; ++l) t.add("f_de" + std::to_string(l), block_shape(l));
  for (int k = 1; k <= 2; ++k) {
    const std::size_t r = config.block_resolution(2 * k - 1);
    t.add("f_cmw" + std::to_string(k),
          {config.channels(2 * k - 1) + config.channels(2 * k), r, r});
  }
  const std::size_t r = config.input_resolution;
  t.add("D5", {config.decoder_channels[0], r / 16, r / 16});
  t.add("D34", {config.decoder_channels[1], r / 4, r / 4});
  t.add("D12", {config.decoder_channels[2], r, r});
  t.add("S1", {r, r});
  if (ablation.deep_supervision) {
    t.add("S2", {r / 4, r / 4});
    t.add("S3", {r / 16, r / 16});
    t.add("S4", {r / 16, r / 16});
  }
  return t;
}

}  // namespace cmwnet
