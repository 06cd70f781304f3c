#include "patchgeo/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace patchgeo {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument("trailing characters");
  return d;
}

long long to_integer(const std::string& v) {
  std::size_t used = 0;
  const long long i = std::stoll(v, &used);
  if (used != v.size()) throw std::invalid_argument("trailing characters");
  return i;
}

std::uint64_t to_unsigned(const std::string& v) {
  if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
  std::size_t used = 0;
  const std::uint64_t u = std::stoull(v, &used);
  if (used != v.size()) throw std::invalid_argument("trailing characters");
  return u;
}

std::array<double, 4> to_rho(const std::string& v) {
  std::string s = v;
  for (char& ch : s) {
    if (ch == ',') ch = ' ';
  }
  std::istringstream is(s);
  std::array<double, 4> rho{};
  for (double& r : rho) {
    std::string tok;
    if (!(is >> tok)) throw std::invalid_argument("rho needs four values");
    r = to_double(tok);
  }
  std::string extra;
  if (is >> extra) throw std::invalid_argument("rho needs four values");
  return rho;
}

using Setter = std::function<void(TrainConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"rho", [](TrainConfig& c, const std::string& v) { c.grid.rho = to_rho(v); }},
      {"learning_rate", [](TrainConfig& c, const std::string& v) { c.learning_rate = to_double(v); }},
      {"lr_schedule", [](TrainConfig& c, const std::string& v) { c.lr_schedule = v; }},
      {"weight_decay", [](TrainConfig& c, const std::string& v) { c.weight_decay = to_double(v); }},
      {"clip_norm", [](TrainConfig& c, const std::string& v) { c.clip_norm = to_double(v); }},
      {"iterations", [](TrainConfig& c, const std::string& v) { c.iterations = static_cast<int>(to_integer(v)); }},
      {"seed", [](TrainConfig& c, const std::string& v) { c.seed = to_unsigned(v); }},
      {"lambda_depth", [](TrainConfig& c, const std::string& v) { c.loss.depth = to_double(v); }},
      {"lambda_normal", [](TrainConfig& c, const std::string& v) { c.loss.normal = to_double(v); }},
      {"lambda_grad", [](TrainConfig& c, const std::string& v) { c.loss.grad = to_double(v); }},
      {"lambda_mse", [](TrainConfig& c, const std::string& v) { c.loss.mse = to_double(v); }},
      {"blocks", [](TrainConfig& c, const std::string& v) { c.arch.blocks = static_cast<int>(to_integer(v)); }},
      {"width", [](TrainConfig& c, const std::string& v) { c.arch.width = static_cast<int>(to_integer(v)); }},
      {"heads", [](TrainConfig& c, const std::string& v) { c.arch.heads = static_cast<int>(to_integer(v)); }},
      {"cell", [](TrainConfig& c, const std::string& v) { c.arch.cell = static_cast<int>(to_integer(v)); }},
      {"attention", [](TrainConfig& c, const std::string& v) { c.arch.layout = parse_attention_layout(v); }},
      {"rope", [](TrainConfig& c, const std::string& v) { c.arch.rope = parse_rope_frame(v); }},
      {"dataset", [](TrainConfig& c, const std::string& v) { c.dataset = v; }},
      {"checkpoint_every",
       [](TrainConfig& c, const std::string& v) { c.checkpoint_every = static_cast<int>(to_integer(v)); }},
      {"token_budget", [](TrainConfig& c, const std::string& v) { c.token_budget = to_integer(v); }},
  };
  return table;
}

}  // namespace

void TrainConfig::validate() const {
  grid.validate();
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (lr_schedule != "constant" && lr_schedule != "cosine") {
    throw ConfigError("lr_schedule must be 'constant' or 'cosine', got '" + lr_schedule + "'");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (token_budget < 0) throw ConfigError("token_budget must be non-negative");
  loss.validate();
  arch.validate();
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "rho = " << grid.rho[0] << ", " << grid.rho[1] << ", " << grid.rho[2] << ", " << grid.rho[3] << '\n'
     << "learning_rate = " << learning_rate << '\n'
     << "lr_schedule = " << lr_schedule << '\n'
     << "weight_decay = " << weight_decay << '\n'
     << "clip_norm = " << clip_norm << '\n'
     << "iterations = " << iterations << '\n'
     << "seed = " << seed << '\n'
     << "lambda_depth = " << loss.depth << '\n'
     << "lambda_normal = " << loss.normal << '\n'
     << "lambda_grad = " << loss.grad << '\n'
     << "lambda_mse = " << loss.mse << '\n'
     << "blocks = " << arch.blocks << '\n'
     << "width = " << arch.width << '\n'
     << "heads = " << arch.heads << '\n'
     << "cell = " << arch.cell << '\n'
     << "attention = " << to_string(arch.layout) << '\n'
     << "rope = " << to_string(arch.rope) << '\n';
  if (!dataset.empty()) os << "dataset = " << dataset << '\n';
  os << "checkpoint_every = " << checkpoint_every << '\n' << "token_budget = " << token_budget << '\n';
  return os.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    try {
      it->second(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception&) {
      throw ConfigError("config line " + std::to_string(lineno) + ": bad value '" + value + "' for " + key);
    }
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace patchgeo
