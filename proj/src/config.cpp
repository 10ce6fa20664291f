#include "recovermark/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace recovermark {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T v{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define RM_INT(KEY, EXPR)                                                                             \
  {                                                                                                   \
    KEY, {[](RunConfig& c, const std::string& v) { EXPR = parse_number<int>(KEY, v); },              \
          [](const RunConfig& c) { return std::to_string(EXPR); } }                                  \
  }
#define RM_REAL(KEY, EXPR)                                                                            \
  {                                                                                                   \
    KEY, {[](RunConfig& c, const std::string& v) { EXPR = parse_number<double>(KEY, v); },           \
          [](const RunConfig& c) { return fmt(EXPR); } }                                             \
  }
#define RM_BOOL(KEY, EXPR)                                                                            \
  {                                                                                                   \
    KEY, {[](RunConfig& c, const std::string& v) { EXPR = parse_bool(KEY, v); },                     \
          [](const RunConfig& c) { return std::string(EXPR ? "true" : "false"); } }                  \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      RM_INT("image_side", c.train.arch.image_side),
      RM_INT("latent_channels", c.train.arch.latent_channels),
      RM_INT("codec_width", c.train.arch.codec_width),
      RM_INT("codec_blocks", c.train.arch.codec_blocks),
      RM_INT("hnet_width", c.train.arch.hnet_width),
      RM_INT("hnet_depth", c.train.arch.hnet_depth),
      RM_INT("hnet_max_width", c.train.arch.hnet_max_width),
      RM_INT("enet_width", c.train.arch.enet_width),
      RM_INT("enet_depth", c.train.arch.enet_depth),
      RM_INT("enet_max_width", c.train.arch.enet_max_width),
      RM_INT("denoiser_width", c.train.arch.denoiser_width),
      RM_INT("masked_extraction", c.train.arch.masked_extraction),
      RM_INT("relay", c.train.arch.relay),
      RM_INT("epochs", c.train.epochs),
      RM_INT("batch_size", c.train.batch_size),
      RM_REAL("learning_rate", c.train.learning_rate),
      RM_REAL("final_learning_rate", c.train.final_learning_rate),
      {"seed",
       {[](RunConfig& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>("seed", v); },
        [](const RunConfig& c) { return std::to_string(c.train.seed); }}},
      RM_REAL("alpha_fidelity", c.train.weights.fidelity),
      RM_REAL("alpha_watermark", c.train.weights.watermark),
      RM_REAL("alpha_clean", c.train.weights.clean),
      RM_BOOL("fidelity_background_only", c.train.fidelity_background_only),
      {"distortion_order",
       {[](RunConfig& c, const std::string& v) {
          c.train.distortion_order.clear();
          for (const auto& t : split(v, ',')) {
            try {
              c.train.distortion_order.push_back(parse_distortion_kind(t));
            } catch (const AttackError& e) {
              throw ConfigError(std::string("config key 'distortion_order': ") + e.what());
            }
          }
        },
        [](const RunConfig& c) {
          std::string out;
          for (auto k : c.train.distortion_order) out += (out.empty() ? "" : ",") + to_token(k);
          return out;
        }}},
      RM_BOOL("cumulative", c.train.cumulative),
      RM_REAL("identity_probability", c.train.identity_probability),
      RM_REAL("regen_noise", c.train.ranges.regen_noise),
      RM_REAL("noise_min", c.train.ranges.noise_min),
      RM_REAL("noise_max", c.train.ranges.noise_max),
      RM_INT("jpeg_min", c.train.ranges.jpeg_min),
      RM_INT("jpeg_max", c.train.ranges.jpeg_max),
      RM_REAL("blur_min", c.train.ranges.blur_min),
      RM_REAL("blur_max", c.train.ranges.blur_max),
      RM_REAL("patch_min", c.train.ranges.patch_min),
      RM_REAL("patch_max", c.train.ranges.patch_max),
      RM_INT("denoiser_epochs", c.train.denoiser_epochs),
      RM_REAL("denoiser_learning_rate", c.train.denoiser_learning_rate),
      RM_REAL("localization_threshold", c.eval.localization.threshold),
      {"localization_channels",
       {[](RunConfig& c, const std::string& v) {
          if (v != "mean" && v != "max") throw ConfigError("config key 'localization_channels': expected mean or max");
          c.eval.localization.max_over_channels = v == "max";
        },
        [](const RunConfig& c) { return std::string(c.eval.localization.max_over_channels ? "max" : "mean"); }}},
      RM_BOOL("median_filter", c.eval.localization.median_filter),
      RM_REAL("ncc_threshold", c.eval.ncc_threshold),
      {"tamper",
       {[](RunConfig& c, const std::string& v) {
          try {
            c.eval.tamper = parse_tamper_kind(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config key 'tamper': ") + e.what());
          }
        },
        [](const RunConfig& c) { return to_string(c.eval.tamper); }}},
      RM_REAL("tamper_extent", c.eval.tamper_extent),
      {"capacity_fractions",
       {[](RunConfig& c, const std::string& v) {
          c.capacity_fractions.clear();
          for (const auto& t : split(v, ',')) c.capacity_fractions.push_back(parse_number<double>("capacity_fractions", t));
        },
        [](const RunConfig& c) {
          std::string out;
          for (double f : c.capacity_fractions) out += (out.empty() ? "" : ",") + fmt(f);
          return out;
        }}},
  };
  return table;
}

#undef RM_INT
#undef RM_REAL
#undef RM_BOOL

void validate(const RunConfig& c) {
  try {
    c.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(c.eval.localization.threshold > 0.0 && c.eval.localization.threshold < 1.0)) {
    throw ConfigError("localization_threshold must be in (0,1)");
  }
  if (!(c.eval.ncc_threshold > -1.0 && c.eval.ncc_threshold < 1.0)) throw ConfigError("ncc_threshold must be in (-1,1)");
  if (!(c.eval.tamper_extent > 0.0 && c.eval.tamper_extent <= 1.0)) throw ConfigError("tamper_extent must be in (0,1]");
  for (double f : c.capacity_fractions)
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("capacity_fractions must lie in (0,1)");
  for (const auto& [name, chain] : c.attacks) {
    try {
      parse_attack_chain(chain);
    } catch (const AttackError& e) {
      throw ConfigError("attack." + name + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<std::pair<std::string, std::string>> default_attacks() {
  return {{"none", ""},           {"regeneration", "regen"}, {"noise", "noise:0.05"},
          {"jpeg", "jpeg:75"},    {"lowpass", "lowpass:1.0"}, {"patch_remove", "patch:0.1"}};
}

std::string RunConfig::canonical() const {
  std::ostringstream os;
  for (const auto& [key, field] : fields()) os << key << '=' << field.get(*this) << '\n';
  for (const auto& [name, chain] : attacks) os << "attack." << name << '=' << chain << '\n';
  for (const auto& [name, path] : plugins) os << "plugin." << name << '=' << path << '\n';
  return os.str();
}

std::string RunConfig::digest() const { return sha256_hex(canonical()); }

std::vector<NamedAttack> RunConfig::attack_list() const {
  std::vector<NamedAttack> out;
  for (const auto& [name, chain] : attacks.empty() ? default_attacks() : attacks) {
    out.push_back({name, parse_attack_chain(chain)});
  }
  return out;
}

AttackContext RunConfig::attack_context(const RegenerationProxy* regeneration) const {
  AttackContext ctx;
  ctx.regeneration = regeneration;
  for (const auto& [name, path] : plugins) ctx.plugins[name] = AttackPlugin{name, path};
  return ctx;
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::vector<std::string> unknown;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");
    if (key.rfind("attack.", 0) == 0 && key.size() > 7) {
      c.attacks.emplace_back(key.substr(7), value);
    } else if (key.rfind("plugin.", 0) == 0 && key.size() > 7) {
      c.plugins[key.substr(7)] = value;
    } else if (const auto it = fields().find(key); it != fields().end()) {
      it->second.set(c, value);
    } else {
      unknown.push_back(key);
    }
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config keys: " + list);
  }
  c.eval.seed = c.train.seed;
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace recovermark
