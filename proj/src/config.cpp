#include "gava/config.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

namespace gava {

std::string variant_id(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoInteraction: return "no_iam";
    case Variant::NoVisual: return "no_vam";
    case Variant::PlusUnmasked: return "plus_nvm";
  }
  return "full";
}

std::string variant_label(Variant v) {
  switch (v) {
    case Variant::Full: return "GaVa";
    case Variant::NoInteraction: return "GaVa(-IaM)";
    case Variant::NoVisual: return "GaVa(-VaM)";
    case Variant::PlusUnmasked: return "GaVa(+NVM)";
  }
  return "GaVa";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : kAllVariants)
    if (s == variant_id(v) || s == variant_label(v)) return v;
  throw ConfigError("unknown variant '" + s + "'");
}

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    std::size_t used = 0;
    unsigned long long d = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(to_double(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt_double(v[i]);
  return out;
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <class M>
Field dbl(M TrainConfig::*m) {
  return {[m](const TrainConfig& c) { return fmt_double(c.*m); },
          [m](TrainConfig& c, const std::string& v) { c.*m = to_double("", v); }};
}

template <class M>
Field uns(M TrainConfig::*m) {
  return {[m](const TrainConfig& c) { return std::to_string(c.*m); },
          [m](TrainConfig& c, const std::string& v) { c.*m = static_cast<M>(to_uint("", v)); }};
}

Field boolean(bool TrainConfig::*m) {
  return {[m](const TrainConfig& c) { return std::string(c.*m ? "true" : "false"); },
          [m](TrainConfig& c, const std::string& v) { c.*m = to_bool("", v); }};
}

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    f["dt"] = dbl(&TrainConfig::dt);
    f["T"] = uns(&TrainConfig::T);
    f["F"] = uns(&TrainConfig::F);
    f["stride"] = uns(&TrainConfig::stride);
    f["protocol_override"] = boolean(&TrainConfig::protocol_override);
    f["grid.slots"] = {[](const TrainConfig& c) { return std::to_string(c.grid.slots); },
                       [](TrainConfig& c, const std::string& v) { c.grid.slots = to_uint("grid.slots", v); }};
    f["grid.lanes"] = {[](const TrainConfig& c) { return std::to_string(c.grid.lanes); },
                       [](TrainConfig& c, const std::string& v) { c.grid.lanes = to_uint("grid.lanes", v); }};
    f["grid.slot_length"] = {[](const TrainConfig& c) { return fmt_double(c.grid.slot_length); },
                             [](TrainConfig& c, const std::string& v) { c.grid.slot_length = to_double("grid.slot_length", v); }};
    f["grid.lane_width"] = {[](const TrainConfig& c) { return fmt_double(c.grid.lane_width); },
                            [](TrainConfig& c, const std::string& v) { c.grid.lane_width = to_double("grid.lane_width", v); }};
    f["model.dim"] = uns(&TrainConfig::dim);
    f["model.heads"] = uns(&TrainConfig::heads);
    f["model.layers"] = uns(&TrainConfig::layers);
    f["model.conv_channels"] = uns(&TrainConfig::conv_channels);
    f["model.interaction_hidden"] = uns(&TrainConfig::interaction_hidden);
    f["model.ffn_mult"] = uns(&TrainConfig::ffn_mult);
    f["model.dropout"] = dbl(&TrainConfig::dropout);
    f["model.elu_alpha"] = dbl(&TrainConfig::elu_alpha);
    f["model.leaky_slope"] = dbl(&TrainConfig::leaky_slope);
    f["model.norm_after_elu"] = boolean(&TrainConfig::norm_after_elu);
    f["model.bn_momentum"] = dbl(&TrainConfig::bn_momentum);
    f["model.bn_eps"] = dbl(&TrainConfig::bn_eps);
    f["model.variant"] = {[](const TrainConfig& c) { return variant_id(c.variant); },
                          [](TrainConfig& c, const std::string& v) { c.variant = parse_variant(v); }};
    f["model.point_mode"] = {
        [](const TrainConfig& c) { return std::string(c.point_mode == PointMode::BestMode ? "best_mode" : "weighted_mean"); },
        [](TrainConfig& c, const std::string& v) {
          if (v == "best_mode") c.point_mode = PointMode::BestMode;
          else if (v == "weighted_mean") c.point_mode = PointMode::WeightedMean;
          else throw ConfigError("model.point_mode: expected best_mode or weighted_mean, got '" + v + "'");
        }};
    auto vlist = [](std::vector<double> VisionConfig::*m) {
      return Field{[m](const TrainConfig& c) { return fmt_list(c.vision.*m); },
                   [m](TrainConfig& c, const std::string& v) { c.vision.*m = to_list("vision", v); }};
    };
    auto vdbl = [](double VisionConfig::*m) {
      return Field{[m](const TrainConfig& c) { return fmt_double(c.vision.*m); },
                   [m](TrainConfig& c, const std::string& v) { c.vision.*m = to_double("vision", v); }};
    };
    f["vision.thresholds_kmh"] = vlist(&VisionConfig::thresholds_kmh);
    f["vision.radii_m"] = vlist(&VisionConfig::radii_m);
    f["vision.apex_deg"] = vlist(&VisionConfig::apex_deg);
    f["vision.fringe_weight"] = vdbl(&VisionConfig::fringe_weight);
    f["vision.peripheral_weight"] = vdbl(&VisionConfig::peripheral_weight);
    f["vision.safety_time_s"] = vdbl(&VisionConfig::safety_time_s);
    f["vision.safety_floor_m"] = vdbl(&VisionConfig::safety_floor_m);
    f["vision.nearby_bias"] = vdbl(&VisionConfig::nearby_bias);
    f["vision.heading_min_speed"] = vdbl(&VisionConfig::heading_min_speed);
    f["vision.rowsum_attention"] = {[](const TrainConfig& c) { return std::string(c.vision.rowsum_attention ? "true" : "false"); },
                               [](TrainConfig& c, const std::string& v) { c.vision.rowsum_attention = to_bool("vision.rowsum_attention", v); }};
    f["train.learning_rate"] = dbl(&TrainConfig::learning_rate);
    f["train.batch_size"] = uns(&TrainConfig::batch_size);
    f["train.epochs"] = uns(&TrainConfig::epochs);
    f["train.seed"] = uns(&TrainConfig::seed);
    f["train.lambda_nll"] = dbl(&TrainConfig::lambda_nll);
    f["train.lambda_man"] = dbl(&TrainConfig::lambda_man);
    f["train.clip_norm"] = dbl(&TrainConfig::clip_norm);
    f["train.lr_decay"] = dbl(&TrainConfig::lr_decay);
    f["train.train_fraction"] = dbl(&TrainConfig::train_fraction);
    f["train.val_fraction"] = dbl(&TrainConfig::val_fraction);
    f["data.units"] = {[](const TrainConfig& c) { return std::string(c.units == LengthUnit::Feet ? "feet" : "meters"); },
                       [](TrainConfig& c, const std::string& v) {
                         if (v == "feet") c.units = LengthUnit::Feet;
                         else if (v == "meters") c.units = LengthUnit::Meters;
                         else throw ConfigError("data.units: expected feet or meters, got '" + v + "'");
                       }};
    f["data.frame_dt"] = dbl(&TrainConfig::frame_dt);
    f["data.label_horizon_s"] = dbl(&TrainConfig::label_horizon_s);
    return f;
  }();
  return fields;
}

}  // namespace

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, field] : registry()) out.push_back(name);
    return out;
  }();
  return k;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  auto it = registry().find(key);
  if (it == registry().end()) throw ConfigError("unknown config key '" + key + "'");
  try {
    it->second.set(*this, trim(value));
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    if (what.rfind(key, 0) == 0) throw;
    throw ConfigError(key + (what.rfind(":", 0) == 0 ? "" : ": ") + what);
  }
}

std::string TrainConfig::get(const std::string& key) const {
  auto it = registry().find(key);
  if (it == registry().end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second.get(*this);
}

std::string TrainConfig::serialize() const {
  std::string out;
  for (const auto& [name, field] : registry()) out += name + " = " + field.get(*this) + "\n";
  return out;
}

std::string TrainConfig::fingerprint() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : serialize()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << h;
  return o.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(no) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(dt > 0.0, "dt must be positive");
  require(T > 0 && F > 0, "T and F must be positive");
  require(stride > 0, "stride must be positive");
  if (!protocol_override) {
    require(std::abs(static_cast<double>(T) * dt - 3.0) < 1e-9,
            "T*dt must be 3 s (got " + fmt_double(static_cast<double>(T) * dt) + "); set protocol_override = true to change");
    require(std::abs(static_cast<double>(F) * dt - 5.0) < 1e-9,
            "F*dt must be 5 s (got " + fmt_double(static_cast<double>(F) * dt) + "); set protocol_override = true to change");
  }
  require(grid.slots % 2 == 1 && grid.lanes % 2 == 1, "grid dims must be odd so the target sits in the center cell");
  require(grid.slot_length > 0.0 && grid.lane_width > 0.0, "grid spacings must be positive");
  require(dim > 0 && heads > 0 && dim % heads == 0, "model.dim must be a positive multiple of model.heads");
  require(layers > 0 && conv_channels > 0 && interaction_hidden > 0 && ffn_mult > 0, "model sizes must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "model.dropout must lie in [0, 1)");
  require(elu_alpha > 0.0 && leaky_slope >= 0.0, "activation parameters out of range");
  require(bn_momentum >= 0.0 && bn_momentum < 1.0 && bn_eps > 0.0, "batch norm parameters out of range");
  const auto& v = vision;
  require(v.radii_m.size() == v.thresholds_kmh.size() + 1 && v.apex_deg.size() == v.radii_m.size(),
          "vision: need one more radius/apex entry than thresholds");
  for (std::size_t i = 0; i < v.radii_m.size(); ++i) {
    require(v.radii_m[i] > 0.0, "vision.radii_m entries must be positive");
    require(v.apex_deg[i] > 0.0 && v.apex_deg[i] <= 360.0, "vision.apex_deg entries must lie in (0, 360]");
  }
  for (std::size_t i = 1; i < v.thresholds_kmh.size(); ++i)
    require(v.thresholds_kmh[i] > v.thresholds_kmh[i - 1], "vision.thresholds_kmh must be increasing");
  require(1.0 >= v.fringe_weight && v.fringe_weight >= v.peripheral_weight && v.peripheral_weight >= 0.0,
          "vision weights must satisfy 1 >= fringe >= peripheral >= 0");
  require(v.safety_time_s >= 0.0 && v.safety_floor_m >= 0.0, "vision safety distance parameters must be >= 0");
  require(learning_rate > 0.0, "train.learning_rate must be positive");
  require(lr_decay > 0.0 && lr_decay <= 1.0, "train.lr_decay must lie in (0, 1]");
  require(batch_size > 0, "train.batch_size must be positive");
  require(lambda_nll >= 0.0 && lambda_man >= 0.0, "loss weights must be >= 0");
  require(train_fraction > 0.0 && val_fraction >= 0.0 && train_fraction + val_fraction <= 1.0,
          "train/val fractions out of range");
  require(frame_dt > 0.0 && label_horizon_s > 0.0, "data timing parameters must be positive");
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.dim = 16;
  c.heads = 2;
  c.layers = 1;
  c.conv_channels = 4;
  c.interaction_hidden = 4;
  c.dropout = 0.0;
  c.batch_size = 8;
  c.epochs = 5;
  c.learning_rate = 3e-3;
  return c;
}

}  // namespace gava
