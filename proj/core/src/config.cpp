#include "cdvae/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "cdvae/errors.hpp"

namespace cdvae {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_uint(const std::string& key, const std::string& v) {
  T out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_uint<std::size_t>(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define CDVAE_UINT(expr)                                                                                  \
  Field {                                                                                                 \
    [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_uint<decltype(expr)>(k, v); }, \
        [](const RunConfig& c) { return std::to_string(expr); }                                          \
  }
#define CDVAE_REAL(expr)                                                                              \
  Field {                                                                                             \
    [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_double(k, v); },     \
        [](const RunConfig& c) { return fmt(expr); }                                                 \
  }
#define CDVAE_TEXT(expr)                                                                  \
  Field {                                                                                 \
    [](RunConfig& c, const std::string&, const std::string& v) { expr = v; },            \
        [](const RunConfig& c) { return expr; }                                          \
  }

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"model.kind", {[](RunConfig& c, const std::string& k, const std::string& v) {
                        try {
                          c.train.kind = parse_model_kind(v);
                        } catch (const Error&) {
                          throw ConfigError(k + ": expected uncoded, coded or hier, got '" + v + "'");
                        }
                      },
                      [](const RunConfig& c) { return std::string(model_kind_name(c.train.kind)); }}},
      {"model.M", CDVAE_UINT(c.train.info_bits)},
      {"model.L", CDVAE_UINT(c.train.repeat)},
      {"model.L2", CDVAE_UINT(c.train.repeat2)},
      {"model.beta", CDVAE_REAL(c.train.beta)},
      {"model.nu", CDVAE_REAL(c.train.prior_nu)},
      {"model.encoder_hidden", {[](RunConfig& c, const std::string& k, const std::string& v) {
                                  c.train.encoder_hidden = parse_list(k, v);
                                },
                                [](const RunConfig& c) { return fmt_list(c.train.encoder_hidden); }}},
      {"model.decoder_hidden", {[](RunConfig& c, const std::string& k, const std::string& v) {
                                  c.train.decoder_hidden = parse_list(k, v);
                                },
                                [](const RunConfig& c) { return fmt_list(c.train.decoder_hidden); }}},
      {"train.epochs", CDVAE_UINT(c.train.epochs)},
      {"train.batch_size", CDVAE_UINT(c.train.batch_size)},
      {"train.lr", CDVAE_REAL(c.train.learning_rate)},
      {"train.seed", CDVAE_UINT(c.train.seed)},
      {"train.objective", {[](RunConfig& c, const std::string& k, const std::string& v) {
                             if (v == "elbo") {
                               c.train.objective = Objective::kElbo;
                             } else if (v == "iwae") {
                               c.train.objective = Objective::kIwae;
                             } else {
                               throw ConfigError(k + ": expected elbo or iwae, got '" + v + "'");
                             }
                           },
                           [](const RunConfig& c) {
                             return std::string(c.train.objective == Objective::kElbo ? "elbo" : "iwae");
                           }}},
      {"train.iwae_k", CDVAE_UINT(c.train.iwae_k)},
      {"train.patience", CDVAE_UINT(c.train.patience)},
      {"data.source", {[](RunConfig& c, const std::string& k, const std::string& v) {
                         if (v == "synthetic") {
                           c.data.source = DataSource::kSynthetic;
                         } else if (v == "idx") {
                           c.data.source = DataSource::kIdx;
                         } else {
                           throw ConfigError(k + ": expected synthetic or idx, got '" + v + "'");
                         }
                       },
                       [](const RunConfig& c) {
                         return std::string(c.data.source == DataSource::kSynthetic ? "synthetic" : "idx");
                       }}},
      {"data.train_images", CDVAE_TEXT(c.data.train_images)},
      {"data.train_labels", CDVAE_TEXT(c.data.train_labels)},
      {"data.test_images", CDVAE_TEXT(c.data.test_images)},
      {"data.test_labels", CDVAE_TEXT(c.data.test_labels)},
      {"data.downsample", {[](RunConfig& c, const std::string& k, const std::string& v) {
                             c.data.downsample = parse_bool(k, v);
                           },
                           [](const RunConfig& c) { return std::string(c.data.downsample ? "true" : "false"); }}},
      {"data.train_count", CDVAE_UINT(c.data.train_count)},
      {"data.test_count", CDVAE_UINT(c.data.test_count)},
      {"data.cache", CDVAE_TEXT(c.data.cache)},
      {"synth.M", CDVAE_UINT(c.synth.info_bits)},
      {"synth.L", CDVAE_UINT(c.synth.repeat)},
      {"synth.beta", CDVAE_REAL(c.synth.beta)},
      {"synth.hidden", CDVAE_UINT(c.synth.hidden)},
      {"synth.noise", CDVAE_REAL(c.synth.noise_scale)},
      {"synth.count", CDVAE_UINT(c.synth.count)},
      {"synth.test_count", CDVAE_UINT(c.data.synth_test_count)},
      {"synth.seed", CDVAE_UINT(c.synth.seed)},
      {"synth.height", CDVAE_UINT(c.synth.height)},
      {"synth.width", CDVAE_UINT(c.synth.width)},
      {"synth.gain", CDVAE_REAL(c.synth.gain)},
      {"eval.trials", CDVAE_UINT(c.eval.trials)},
      {"eval.ll_samples", CDVAE_UINT(c.eval.ll_samples)},
      {"eval.max_items", CDVAE_UINT(c.eval.max_items)},
      {"eval.seed", CDVAE_UINT(c.eval_seed)},
      {"output.dir", CDVAE_TEXT(c.output_dir)},
  };
  return table;
}

#undef CDVAE_UINT
#undef CDVAE_REAL
#undef CDVAE_TEXT

void assign(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, key, value);
}

std::pair<std::string, std::string> split_assignment(const std::string& line, std::size_t lineno) {
  const auto eq = line.find('=');
  const std::string where = lineno ? " on line " + std::to_string(lineno) : std::string();
  if (eq == std::string::npos) throw ConfigError("expected key = value" + where + ": '" + line + "'");
  std::string key = trim(line.substr(0, eq));
  std::string value = trim(line.substr(eq + 1));
  if (key.empty()) throw ConfigError("empty key" + where);
  return {std::move(key), std::move(value)};
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    auto [key, value] = split_assignment(line, lineno);
    if (!seen.insert(key).second) throw ConfigError("duplicate config key '" + key + "' on line " + std::to_string(lineno));
    assign(cfg, key, value);
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  auto [key, value] = split_assignment(assignment, 0);
  assign(cfg, key, value);
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& kv : fields()) keys.push_back(kv.first);
  return keys;
}

}  // namespace cdvae
