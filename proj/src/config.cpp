#include "fex4d/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace fex4d {

namespace {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
T parse_value(const std::string& key, const std::string& raw);

template <>
int parse_value<int>(const std::string& key, const std::string& raw) {
  size_t pos = 0;
  int v;
  try {
    v = std::stoi(raw, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad integer for " + key + ": '" + raw + "'");
  }
  if (pos != raw.size())
    throw std::invalid_argument("config: bad integer for " + key + ": '" + raw + "'");
  return v;
}

template <>
double parse_value<double>(const std::string& key, const std::string& raw) {
  size_t pos = 0;
  double v;
  try {
    v = std::stod(raw, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad real for " + key + ": '" + raw + "'");
  }
  if (pos != raw.size())
    throw std::invalid_argument("config: bad real for " + key + ": '" + raw + "'");
  return v;
}

std::string fmt(int v) { return std::to_string(v); }
std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

#define FEX4D_FIELD(name)                                                       \
  Field{#name, [](const RunConfig& c) { return fmt(c.name); },                  \
        [](RunConfig& c, const std::string& raw) {                              \
          c.name = parse_value<decltype(c.name)>(#name, raw);                   \
        }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      FEX4D_FIELD(schedule_T),      FEX4D_FIELD(beta_start),
      FEX4D_FIELD(beta_end),        FEX4D_FIELD(n_landmarks),
      FEX4D_FIELD(seq_len),         FEX4D_FIELD(seq_len_min),
      FEX4D_FIELD(seq_len_max),     FEX4D_FIELD(denoiser_layers),
      FEX4D_FIELD(denoiser_heads),  FEX4D_FIELD(denoiser_dim),
      FEX4D_FIELD(denoiser_ff_dim), FEX4D_FIELD(denoiser_dropout),
      FEX4D_FIELD(max_len),         FEX4D_FIELD(lr),
      FEX4D_FIELD(batch_size),      FEX4D_FIELD(train_iters),
      FEX4D_FIELD(guidance_layers), FEX4D_FIELD(guidance_heads),
      FEX4D_FIELD(guidance_dim),    FEX4D_FIELD(guidance_ff_dim),
      FEX4D_FIELD(lambda),          FEX4D_FIELD(opt_steps),
      FEX4D_FIELD(opt_lr),          FEX4D_FIELD(harmonization_iters),
      FEX4D_FIELD(spiral_len),      FEX4D_FIELD(retarget_dim),
      FEX4D_FIELD(retarget_landmark_weight),
      FEX4D_FIELD(ic_hidden),       FEX4D_FIELD(ic_epochs),
  };
  return f;
}

#undef FEX4D_FIELD

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

std::string RunConfig::to_text() const {
  std::ostringstream os;
  for (const auto& f : fields()) os << f.key << "=" << f.get(*this) << "\n";
  return os.str();
}

uint64_t RunConfig::hash() const {
  const std::string text = to_text();
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
  if (schedule_T < 2) fail("schedule_T must be >= 2");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
    fail("need 0 < beta_start <= beta_end < 1");
  if (n_landmarks < 1) fail("n_landmarks must be positive");
  if (seq_len < 2 || seq_len_min < 2 || seq_len_max < seq_len_min)
    fail("bad sequence length range");
  if (denoiser_dim % denoiser_heads != 0) fail("denoiser_dim must be divisible by heads");
  if (guidance_dim % guidance_heads != 0) fail("guidance_dim must be divisible by heads");
  if (denoiser_dropout < 0 || denoiser_dropout >= 1) fail("dropout must be in [0,1)");
  if (max_len < seq_len_max) fail("max_len must cover seq_len_max");
  if (lr <= 0) fail("lr must be positive");
  if (batch_size < 1 || train_iters < 1) fail("batch_size and train_iters must be positive");
  if (lambda <= 0) fail("lambda must be positive");
  if (opt_steps < 1) fail("opt_steps must be >= 1");
  if (opt_lr <= 0) fail("opt_lr must be positive");
  if (harmonization_iters < 1) fail("harmonization_iters must be >= 1");
  if (spiral_len < 1) fail("spiral_len must be >= 1");
  if (retarget_dim < 1) fail("retarget_dim must be positive");
  if (ic_hidden < 1 || ic_epochs < 1) fail("bad independent-classifier settings");
}

RunConfig desk_profile() {
  RunConfig c;
  c.schedule_T = 200;
  // width must stay >= the 204-dim frame vector or the noise estimate is
  // squeezed through a lossy per-frame bottleneck and the loss floors early
  c.denoiser_layers = 2;
  c.denoiser_heads = 4;
  c.denoiser_dim = 256;
  c.denoiser_ff_dim = 512;
  c.denoiser_dropout = 0.0;
  c.batch_size = 32;
  c.train_iters = 5000;
  c.lr = 3e-4;
  c.guidance_layers = 2;
  c.guidance_heads = 4;
  c.guidance_dim = 64;
  c.guidance_ff_dim = 128;
  c.retarget_dim = 64;
  c.ic_hidden = 64;
  c.ic_epochs = 30;
  return c;
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;

  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not key=value");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end())
      throw std::invalid_argument("config: unknown key '" + key + "'");
    it->second->set(cfg, val);
  }

  for (const auto& f : fields()) {
    if (const char* env = std::getenv(("FEX4D_" + upper(f.key)).c_str())) f.set(cfg, env);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config_text(os.str());
}

}  // namespace fex4d
