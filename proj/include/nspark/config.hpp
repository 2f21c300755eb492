#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace nspark {

/// Dimensional and hyperparameter knobs of the model. Defaults are the
/// desk-scale configuration; `reference()` is the 0.9B configuration.
struct ModelConfig {
  int d_model = 64;      // D
  int n_state = 4;       // N, hidden neurons per channel in the selective block
  int k_steps = 4;       // K, SNN frames per token
  int n_layers = 4;      // L
  int d_ff = 192;        // FFN width
  int vocab_size = 258;  // byte-level: 256 bytes + BOS + PAD
  int context_len = 128;
  double v_min = 0.1;
  double lambda_ponder = 0.01;
  double surrogate_alpha = 4.0;
  double tau0 = 2.0;
  double v0 = 1.0;
  double c_max = 100.0;
  std::uint64_t seed = 42;

  static ModelConfig reference();

  /// Throws std::invalid_argument naming the first invalid field.
  void validate() const;

  std::map<std::string, std::string> to_map() const;
  /// Applies `key=value` pairs; unknown keys throw std::invalid_argument.
  void apply(const std::map<std::string, std::string>& kv);
  /// Applies one pair; returns false if the key is not a model field.
  bool set(const std::string& key, const std::string& value);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Strict scalar parsing for config values; the key is used in error messages.
int parse_int(const std::string& key, const std::string& value);
std::uint64_t parse_seed(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
/// Round-trippable decimal form.
std::string format_double(double v);

/// Parses `key = value` lines; '#' starts a comment. Throws on malformed lines.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> read_key_value_file(const std::string& path);
std::string format_key_values(const std::map<std::string, std::string>& kv);

}  // namespace nspark
