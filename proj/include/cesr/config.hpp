#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cesr/channel.hpp"
#include "cesr/error.hpp"
#include "cesr/eval.hpp"
#include "cesr/train.hpp"

namespace cesr {

/// Flat `key = value` settings grouped by `[section]`; keys are addressed as
/// `section.key`. Only known keys are accepted.
class RunConfig {
 public:
  RunConfig() : values_(defaults()) {}

  static std::map<std::string, std::string> defaults() {
    return {
        {"ofdm.subcarriers", "128"},
        {"ofdm.timeslots", "28"},
        {"ofdm.subcarrier_spacing", "15000"},
        {"ofdm.carrier_frequency", "2e9"},
        {"ofdm.cp_fraction", "0.07"},
        {"pilots.freq_interval", "9"},
        {"pilots.time_interval", "5"},
        {"channel.delay_spread", "1e-7"},
        {"channel.speed_kmh", "50"},
        {"channel.los_angle_deg", "45"},
        {"channel.task1", "tdl-a"},
        {"channel.task2", "tdl-d"},
        {"data.train_size", "4000"},
        {"data.val_size", "500"},
        {"data.test_size", "500"},
        {"data.train_snr", "10"},
        {"train.batch_size", "32"},
        {"train.epochs", "30"},
        {"train.learning_rate", "0.001"},
        {"train.lambda", "1"},
        {"train.alpha", "1"},
        {"train.clip_norm", "10"},
        {"train.attention", "true"},
        {"eval.snr_list", "0,3,6,9,12,15"},
        {"eval.mc", "500"},
        {"eval.forgetting_snr_list", "0,3,6,9,10,12,15"},
        {"run.seed", "1"},
        {"run.precision", "f32"},
    };
  }

  void parse(std::istream& in, const std::string& source) {
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw UsageError(source + ":" + std::to_string(line_no) + ": malformed section");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos) throw UsageError(source + ":" + std::to_string(line_no) + ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      if (!section.empty()) key = section + "." + key;
      set(key, trim(line.substr(eq + 1)));
    }
  }

  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    parse(in, path);
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw UsageError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  /// Applies `key=value`.
  void set_assignment(const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos) throw UsageError("expected key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
    return it->second;
  }

  double number(const std::string& key) const {
    const auto& s = get(key);
    try {
      std::size_t used = 0;
      double v = std::stod(s, &used);
      if (used == s.size() && std::isfinite(v)) return v;
    } catch (const std::logic_error&) {
    }
    throw UsageError("config key '" + key + "' is not a finite number: '" + s + "'");
  }

  std::size_t count(const std::string& key) const {
    const double v = number(key);
    if (v < 0 || v != std::floor(v)) throw UsageError("config key '" + key + "' must be a non-negative integer");
    return static_cast<std::size_t>(v);
  }

  bool flag(const std::string& key) const {
    const auto& s = get(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw UsageError("config key '" + key + "' is not a boolean: '" + s + "'");
  }

  std::vector<double> list(const std::string& key) const {
    std::vector<double> out;
    std::stringstream ss(get(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      try {
        out.push_back(std::stod(item));
      } catch (const std::logic_error&) {
        throw UsageError("config key '" + key + "' has a bad list entry '" + item + "'");
      }
    }
    if (out.empty()) throw UsageError("config key '" + key + "' is empty");
    return out;
  }

  /// Sectioned dump of every resolved value; parses back to the same config.
  std::string echo() const {
    std::ostringstream os;
    std::string current;
    for (const auto& [key, value] : values_) {
      const auto dot = key.find('.');
      const std::string section = key.substr(0, dot);
      if (section != current) {
        os << (current.empty() ? "" : "\n") << '[' << section << "]\n";
        current = section;
      }
      os << key.substr(dot + 1) << " = " << value << '\n';
    }
    return os.str();
  }

  OfdmConfig ofdm() const {
    OfdmConfig c;
    c.subcarriers = count("ofdm.subcarriers");
    c.timeslots = count("ofdm.timeslots");
    c.subcarrier_spacing = number("ofdm.subcarrier_spacing");
    c.carrier_frequency = number("ofdm.carrier_frequency");
    c.cp_fraction = number("ofdm.cp_fraction");
    c.validate();
    return c;
  }

  PilotPattern pilots() const {
    auto p = PilotPattern::uniform(ofdm(), count("pilots.freq_interval"), count("pilots.time_interval"));
    p.validate(ofdm());
    return p;
  }

  TdlProfile profile(const std::string& name_or_path) const {
    TdlProfile p = load_tdl_profile(name_or_path);
    p.delay_spread = number("channel.delay_spread");
    p.max_doppler = doppler_from_speed(number("channel.speed_kmh"), number("ofdm.carrier_frequency"));
    p.los_angle = number("channel.los_angle_deg") * std::numbers::pi / 180.0;
    return p;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.batch_size = count("train.batch_size");
    t.epochs = count("train.epochs");
    t.learning_rate = number("train.learning_rate");
    t.lambda = number("train.lambda");
    t.alpha = number("train.alpha");
    t.clip_norm = number("train.clip_norm");
    t.attention = flag("train.attention");
    t.seed = seed();
    t.validate();
    return t;
  }

  SweepSettings sweep() const {
    SweepSettings s;
    s.snr_db = list("eval.snr_list");
    s.mc = count("eval.mc");
    s.seed = seed();
    return s;
  }

  std::uint64_t seed() const {
    const auto& s = get("run.seed");
    if (s.empty() || !std::isdigit(static_cast<unsigned char>(s.front())))
      throw UsageError("run.seed must be an unsigned integer");
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used == s.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw UsageError("run.seed must be an unsigned integer");
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace cesr
