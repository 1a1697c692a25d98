#include "sage3d/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "sage3d/errors.hpp"
#include "sage3d/io.hpp"

namespace sage3d {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::defaults() {
  Config c;
  c.declare("seed", "0");
  c.declare("threads", "4");

  c.declare("data.flat_box", "67");
  c.declare("data.gable", "67");
  c.declare("data.hip", "66");
  c.declare("data.points", "256");
  c.declare("data.noise", "0.01");
  c.declare("data.walls", "true");

  c.declare("model.points", "256");
  c.declare("model.factors", "4,2,2,4");
  c.declare("model.msg_k", "16,32");
  c.declare("model.sa4_k", "16");
  c.declare("model.gnn_k", "16");
  c.declare("model.widths", "32,64,128,256");
  c.declare("model.decoder_width", "128");
  c.declare("model.head_hidden", "64");
  c.declare("model.point_transformer", "true");
  c.declare("model.sa4_guided", "true");
  c.declare("model.cgnn_sa2", "true");
  c.declare("model.cgnn_sa4", "true");
  c.declare("model.guide_eps", "0.01");
  c.declare("model.fp_eps", "1e-8");

  c.declare("loss.alpha", "0.25");
  c.declare("loss.gamma", "2");
  c.declare("loss.beta", "2");
  c.declare("loss.d_thresh", "0.05");
  c.declare("loss.delta", "1");
  c.declare("loss.cls_weight", "1");
  c.declare("loss.offset_weight", "1");

  c.declare("train.epochs", "30");
  c.declare("train.batch", "8");
  c.declare("train.max_lr", "0.01");
  c.declare("train.weight_decay", "0.01");
  c.declare("train.warmup", "0.1");
  c.declare("train.initial_div", "25");
  c.declare("train.final_div", "10000");
  c.declare("train.eval_every", "5");
  c.declare("train.holdout", "0.2");

  c.declare("post.tau", "0.3");
  c.declare("post.eps", "0.05");
  c.declare("post.min_pts", "1");

  c.declare("eval.match_threshold", "0.1");
  return c;
}

void Config::declare(std::string key, std::string value) {
  entries_.emplace_back(std::move(key), std::move(value));
}

std::size_t Config::slot(const std::string& key) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first == key) return i;
  }
  std::string valid;
  for (const auto& e : entries_) valid += "\n  " + e.first;
  throw InvalidArgument("unknown config key '" + key + "'; valid keys:" + valid);
}

bool Config::has(const std::string& key) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == key; });
}

void Config::set(const std::string& key, const std::string& value) { entries_[slot(key)].second = value; }

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InvalidArgument("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::merge_text(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, number, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!has(key)) {
      try {
        slot(key);
      } catch (const InvalidArgument& e) {
        throw ParseError(source, number, e.what());
      }
    }
    set(key, trim(line.substr(eq + 1)));
  }
}

void Config::merge_file(const std::filesystem::path& path) { merge_text(read_text(path), path.string()); }

const std::string& Config::get(const std::string& key) const { return entries_[slot(key)].second; }

double Config::get_real(const std::string& key) const {
  const std::string& s = get(key);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw InvalidArgument("config '" + key + "': expected a number, got '" + s + "'");
  }
  return v;
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const std::string& s = get(key);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw InvalidArgument("config '" + key + "': expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

std::size_t Config::get_count(const std::string& key) const {
  return static_cast<std::size_t>(get_u64(key));
}

bool Config::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw InvalidArgument("config '" + key + "': expected true/false, got '" + s + "'");
}

std::vector<std::size_t> Config::get_counts(const std::string& key) const {
  std::vector<std::size_t> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
      throw InvalidArgument("config '" + key + "': expected comma-separated integers, got '" + get(key) + "'");
    }
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> Config::keys() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace sage3d
