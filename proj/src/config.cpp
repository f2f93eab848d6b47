#include "rescal/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rescal::config {

namespace {

struct KeyDefault {
  const char* key;
  const char* value;
};

// Registry of every run-configurable default.
constexpr KeyDefault kDefaults[] = {
    {"seed", "42"},
    {"out", "out"},
    {"data.dir", ""},

    // synthetic generation
    {"gen.length", "10000"},
    {"gen.period", "50"},
    {"gen.p_zero", "0.1"},
    {"gen.nodes", "1"},
    {"gen.lag", "5"},
    {"gen.hop_meters", "1000"},

    // base forecaster
    {"base.kind", "seq2seq"},
    {"base.input_len", "24"},
    {"base.output_len", "24"},
    {"base.hidden", "128"},
    {"base.mlp_hidden", "16"},
    {"base.epochs", "50"},
    {"base.batch", "100"},
    {"base.lr", "0.001"},
    {"base.teacher_forcing", "0.5"},
    {"base.blocks", "4"},
    {"base.channels", "32"},
    {"base.kernel", "2"},
    {"base.dilations", "1,2,4,4"},
    {"base.graph_epochs", "20"},
    {"base.graph_batch", "64"},

    // graph construction
    {"graph.kappa", "0.1"},
    {"graph.diffusion_order", "2"},
    {"graph.node_embed_dim", "10"},
    {"graph.use_adaptive", "1"},

    // residual estimator
    {"rescal.layers", "4"},
    {"rescal.d_h", "32"},
    {"rescal.d_c", "32"},
    {"rescal.n_c", "16"},
    {"rescal.d_e", "16"},
    {"rescal.tau", "1.0"},
    {"rescal.batch", "256"},
    {"rescal.epochs", "50"},
    {"rescal.lr", "0.001"},
    {"rescal.kernel", "3"},
    {"rescal.dilations", ""},
    {"rescal.use_quantizer", "1"},
    {"rescal.hard_eval", "0"},

    // diagnostics
    {"diag.max_lag", "12"},
    {"diag.event_q", "0.8"},
    {"diag.horizons", "1,6,12,24"},
    {"diag.acf_horizon", "1"},
    {"diag.mape_threshold", "1e-6"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  for (const auto& [key, value] : kDefaults) c.values_[key] = value;
  return c;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    line_no += 1;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("config: expected 'key = value' at line " +
                               std::to_string(line_no) + " of " + path);
    }
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (values_.find(key) == values_.end()) {
    throw std::runtime_error("config: unknown key '" + key + "'");
  }
  values_[key] = value;
}

bool RunConfig::has(const std::string& key) const {
  auto it = values_.find(key);
  return it != values_.end() && !it->second.empty();
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) {
    throw std::runtime_error("config: unknown key '" + key + "'");
  }
  return it->second;
}

int64_t RunConfig::get_int(const std::string& key) const {
  try {
    return std::stoll(get(key));
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' is not an integer");
  }
}

double RunConfig::get_double(const std::string& key) const {
  try {
    return std::stod(get(key));
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key + "' is not a number");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "1" || v == "true" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "no") return false;
  throw std::runtime_error("config: key '" + key + "' is not a boolean");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<int> out;
  if (v.empty()) return out;
  std::istringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(std::stoi(trim(item)));
  }
  return out;
}

std::string RunConfig::snapshot() const {
  std::ostringstream os;
  for (const auto& [key, value] : values_) {
    os << key << " = " << value << '\n';
  }
  return os.str();
}

void RunConfig::write_snapshot(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("config: cannot open " + path);
  out << snapshot();
}

uint64_t RunConfig::content_hash() const {
  const std::string s = snapshot();
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x00000100000001b3ull;
  }
  return h;
}

}  // namespace rescal::config
