#include "nspark/config.hpp"

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nspark {

ModelConfig ModelConfig::reference() {
  ModelConfig c;
  c.d_model = 896;
  c.n_state = 8;
  c.k_steps = 16;
  c.n_layers = 20;
  c.d_ff = 2688;
  c.vocab_size = 6144;
  c.context_len = 512;
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw std::invalid_argument(std::string("model config: ") + name + " must be >= 1");
  };
  positive(d_model, "d_model");
  positive(n_state, "n_state");
  positive(k_steps, "k_steps");
  positive(n_layers, "n_layers");
  positive(d_ff, "d_ff");
  positive(vocab_size, "vocab_size");
  positive(context_len, "context_len");
  if (!(v_min > 0)) throw std::invalid_argument("model config: v_min must be > 0");
  if (lambda_ponder < 0) throw std::invalid_argument("model config: lambda_ponder must be >= 0");
  if (!(surrogate_alpha > 0)) throw std::invalid_argument("model config: surrogate_alpha must be > 0");
  if (!(tau0 > 1)) throw std::invalid_argument("model config: tau0 must be > 1");
  if (!(v0 > 0)) throw std::invalid_argument("model config: v0 must be > 0");
  if (!(c_max >= 1)) throw std::invalid_argument("model config: c_max must be >= 1");
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

int parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long out = 0;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size() || out < INT32_MIN || out > INT32_MAX) throw std::invalid_argument("bad integer for " + key + ": " + v);
  return static_cast<int>(out);
}

std::uint64_t parse_seed(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] != '-') out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (v.empty() || pos != v.size()) throw std::invalid_argument("bad unsigned integer for " + key + ": " + v);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = std::string::npos;
  }
  if (pos != v.size()) throw std::invalid_argument("bad number for " + key + ": " + v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw std::invalid_argument("bad boolean for " + key + ": " + v);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"d_model", std::to_string(d_model)},
      {"n_state", std::to_string(n_state)},
      {"k_steps", std::to_string(k_steps)},
      {"n_layers", std::to_string(n_layers)},
      {"d_ff", std::to_string(d_ff)},
      {"vocab_size", std::to_string(vocab_size)},
      {"context_len", std::to_string(context_len)},
      {"v_min", format_double(v_min)},
      {"lambda_ponder", format_double(lambda_ponder)},
      {"surrogate_alpha", format_double(surrogate_alpha)},
      {"tau0", format_double(tau0)},
      {"v0", format_double(v0)},
      {"c_max", format_double(c_max)},
      {"seed", std::to_string(seed)},
  };
}

bool ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "d_model") d_model = parse_int(key, value);
  else if (key == "n_state") n_state = parse_int(key, value);
  else if (key == "k_steps") k_steps = parse_int(key, value);
  else if (key == "n_layers") n_layers = parse_int(key, value);
  else if (key == "d_ff") d_ff = parse_int(key, value);
  else if (key == "vocab_size") vocab_size = parse_int(key, value);
  else if (key == "context_len") context_len = parse_int(key, value);
  else if (key == "v_min") v_min = parse_double(key, value);
  else if (key == "lambda_ponder") lambda_ponder = parse_double(key, value);
  else if (key == "surrogate_alpha") surrogate_alpha = parse_double(key, value);
  else if (key == "tau0") tau0 = parse_double(key, value);
  else if (key == "v0") v0 = parse_double(key, value);
  else if (key == "c_max") c_max = parse_double(key, value);
  else if (key == "seed") seed = parse_seed(key, value);
  else return false;
  return true;
}

void ModelConfig::apply(const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    if (!set(k, v)) throw std::invalid_argument("unknown model config key: " + k);
  }
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
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
      throw std::invalid_argument("line " + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("line " + std::to_string(lineno) + ": empty key");
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> read_key_value_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

std::string format_key_values(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

}  // namespace nspark
