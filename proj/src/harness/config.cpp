// Copyright 2026 The gcdkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "gcdkit/harness/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

#include "gcdkit/error.hpp"

namespace gcdkit {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

template <typename T>
T parse_int(const std::string& key, const std::string& text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ValidationError("config: " + key + " expects an integer, got '" + text + "'");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("config: " + key + " expects a number, got '" + text + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ValidationError("config: " + key + " expects true/false, got '" + text + "'");
}

std::vector<int> parse_list(const std::string& key, const std::string& text) {
  std::vector<int> out;
  if (text.empty()) return out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_int<int>(key, trim(item)));
  return out;
}

std::string list_text(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Key {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define GCD_INT(field) \
  Key { [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_int<decltype(c.field)>(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); } }
#define GCD_DOUBLE(field) \
  Key { [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_double(k, v); }, \
        [](const RunConfig& c) { return fmt_double(c.field); } }
#define GCD_BOOL(field) \
  Key { [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); }, \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); } }
#define GCD_LIST(field) \
  Key { [](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_list(k, v); }, \
        [](const RunConfig& c) { return list_text(c.field); } }
#define GCD_STRING(field) \
  Key { [](RunConfig& c, const std::string&, const std::string& v) { c.field = v; }, \
        [](const RunConfig& c) { return c.field; } }

const std::map<std::string, Key>& registry() {
  static const std::map<std::string, Key> keys = {
      {"backbone.num_blocks", GCD_INT(backbone.num_blocks)},
      {"backbone.embed_dim", GCD_INT(backbone.embed_dim)},
      {"backbone.num_heads", GCD_INT(backbone.num_heads)},
      {"backbone.token_count", GCD_INT(backbone.token_count)},
      {"backbone.input_dim", GCD_INT(backbone.input_dim)},
      {"backbone.mlp_hidden", GCD_INT(backbone.mlp_hidden)},
      {"backbone.seed", GCD_INT(backbone.seed)},
      {"backbone.unfreeze_last_block", GCD_BOOL(backbone.unfreeze_last_block)},
      {"mea.enabled", GCD_BOOL(use_adapter)},
      {"mea.experts", GCD_INT(mea.experts)},
      {"mea.bottleneck", GCD_INT(mea.bottleneck)},
      {"mea.scale", GCD_DOUBLE(mea.scale)},
      {"mea.adapted_blocks", GCD_INT(mea.adapted_blocks)},
      {"mea.router_temperature", GCD_DOUBLE(mea.router_temperature)},
      {"mea.old_group", GCD_LIST(mea.old_group)},
      {"mea.new_group", GCD_LIST(mea.new_group)},
      {"loss.lambda", GCD_DOUBLE(loss.lambda)},
      {"loss.entropy", GCD_DOUBLE(loss.entropy)},
      {"loss.tau_u", GCD_DOUBLE(loss.tau_u)},
      {"loss.tau_c", GCD_DOUBLE(loss.tau_c)},
      {"loss.tau_s", GCD_DOUBLE(loss.tau_s)},
      {"loss.tau_teacher", GCD_DOUBLE(loss.tau_teacher)},
      {"loss.head_hidden", GCD_INT(head_hidden)},
      {"loss.proj_dim", GCD_INT(proj_dim)},
      {"constraint.alpha", GCD_DOUBLE(constraint.alpha)},
      {"constraint.beta", GCD_DOUBLE(constraint.beta)},
      {"constraint.route_temperature", GCD_DOUBLE(constraint.route_temperature)},
      {"constraint.target_smoothing", GCD_DOUBLE(constraint.target_smoothing)},
      {"constraint.oracle_labels", GCD_BOOL(oracle_labels)},
      {"data.num_classes", GCD_INT(data.num_classes)},
      {"data.old_classes", GCD_INT(data.old_classes)},
      {"data.labeled_fraction", GCD_DOUBLE(data.labeled_fraction)},
      {"data.samples_per_class", GCD_INT(data.samples_per_class)},
      {"data.separation", GCD_DOUBLE(data.separation)},
      {"data.noise", GCD_DOUBLE(data.noise)},
      {"data.imbalance", GCD_DOUBLE(data.imbalance)},
      {"data.seed", GCD_INT(data.seed)},
      {"data.file", GCD_STRING(data_file)},
      {"data.augment", GCD_DOUBLE(augment)},
      {"opt.lr", GCD_DOUBLE(opt.lr)},
      {"opt.momentum", GCD_DOUBLE(opt.momentum)},
      {"opt.weight_decay", GCD_DOUBLE(opt.weight_decay)},
      {"opt.epochs", GCD_INT(opt.epochs)},
      {"opt.batch_size", GCD_INT(opt.batch_size)},
      {"run.seed", GCD_INT(seed)},
      {"run.out_dir", GCD_STRING(out_dir)},
  };
  return keys;
}

#undef GCD_INT
#undef GCD_DOUBLE
#undef GCD_BOOL
#undef GCD_LIST
#undef GCD_STRING

const Key& lookup(const std::string& key) {
  auto it = registry().find(key);
  if (it == registry().end()) throw ValidationError("config: unknown key '" + key + "'");
  return it->second;
}

struct PresetRow {
  const char* name;
  double s;
  int p, t, d_hat;
  double alpha, beta, tau_r, tau_g;
  int classes, old_classes;
  double imbalance;
};

// Hyperparameter rows per benchmark, plus its class split.
constexpr PresetRow kDatasetRows[] = {
    {"cub", 0.4, 6, 8, 64, 0.03, 0.1, 5, 0.1, 200, 100, 1.0},
    {"aircraft", 0.4, 8, 8, 64, 0.1, 0.1, 10, 0.1, 100, 50, 1.0},
    {"scars", 0.4, 6, 8, 64, 0.1, 0.1, 10, 0.1, 196, 98, 1.0},
    {"cifar10", 0.2, 6, 8, 64, 0.05, 0.05, 10, 0.1, 10, 5, 1.0},
    {"cifar100", 0.8, 8, 8, 64, 0.05, 0.05, 10, 0.1, 100, 80, 1.0},
    {"imagenet100", 0.4, 8, 8, 64, 0.06, 0.2, 10, 0.1, 100, 50, 1.0},
    {"herbarium19", 0.4, 8, 8, 64, 0.05, 0.05, 10, 0.1, 683, 341, 10.0},
};

RunConfig desk_preset() {
  RunConfig c;
  c.backbone = BackboneConfig::desk();
  c.mea.experts = 4;
  c.mea.adapted_blocks = 3;
  c.mea.bottleneck = 16;
  c.mea.scale = 0.2;
  c.data = DatasetSpec::desk();
  return c;
}

RunConfig tiny_preset() {
  RunConfig c;
  c.backbone.num_blocks = 2;
  c.backbone.embed_dim = 8;
  c.backbone.num_heads = 2;
  c.backbone.token_count = 4;
  c.backbone.input_dim = 4;
  c.backbone.mlp_hidden = 8;
  c.mea.experts = 4;
  c.mea.bottleneck = 4;
  c.mea.adapted_blocks = 2;
  c.head_hidden = 8;
  c.proj_dim = 8;
  c.data.num_classes = 4;
  c.data.old_classes = 2;
  c.data.samples_per_class = 4;
  c.opt.batch_size = 8;
  c.opt.epochs = 2;
  return c;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(lr >= 0)) throw ValidationError("opt: lr must be >= 0");
  if (!(momentum >= 0 && momentum < 1)) throw ValidationError("opt: momentum must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ValidationError("opt: weight decay must be >= 0");
  if (epochs < 0) throw ValidationError("opt: epochs must be >= 0");
  if (batch_size < 2) throw ValidationError("opt: batch size must be >= 2");
}

void RunConfig::validate() const {
  backbone.validate();
  if (use_adapter) {
    MeaConfig m = mea;
    m.resolve_groups().validate(backbone.embed_dim, backbone.num_blocks);
  }
  loss.validate();
  constraint.validate();
  opt.validate();
  if (head_hidden < 1 || proj_dim < 1) throw ValidationError("loss: head dims must be >= 1");
  if (!(augment >= 0)) throw ValidationError("data: augment strength must be >= 0");
  if (data_file.empty()) dataset_spec().validate();
}

void RunConfig::set(const std::string& key, const std::string& value) { lookup(key).set(*this, key, trim(value)); }

std::string RunConfig::get(const std::string& key) const { return lookup(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [k, unused] : registry()) out.push_back(k);
    return out;
  }();
  return names;
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, key] : registry()) out += k + "=" + key.get(*this) + "\n";
  return out;
}

std::string RunConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical()) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void RunConfig::apply(const std::string& text, bool allow_preset) {
  std::stringstream in(text);
  std::string line;
  bool first = true;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config line " + std::to_string(number) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "preset") {
      if (!first) throw ValidationError("config: preset must come before other keys");
      if (allow_preset) *this = preset(value);
    } else {
      set(key, value);
    }
    first = false;
  }
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  cfg.apply(text, true);
  return cfg;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return parse(read_text(path)); }

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << canonical();
}

RunConfig RunConfig::preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "tiny") return tiny_preset();
  for (const auto& row : kDatasetRows) {
    if (name != row.name) continue;
    RunConfig c;
    c.backbone = BackboneConfig::vit_b16();
    c.mea.scale = row.s;
    c.mea.adapted_blocks = row.p;
    c.mea.experts = row.t;
    c.mea.bottleneck = row.d_hat;
    c.mea.router_temperature = row.tau_r;
    c.constraint.alpha = row.alpha;
    c.constraint.beta = row.beta;
    c.constraint.route_temperature = row.tau_g;
    c.head_hidden = 2048;
    c.proj_dim = 256;
    c.opt.batch_size = 128;
    c.opt.epochs = 200;
    c.opt.lr = 0.1;
    c.data.num_classes = row.classes;
    c.data.old_classes = row.old_classes;
    c.data.imbalance = row.imbalance;
    c.data.samples_per_class = 4;
    return c;
  }
  throw ValidationError("unknown preset '" + name + "'");
}

const std::vector<std::string>& RunConfig::preset_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out = {"desk", "tiny"};
    for (const auto& row : kDatasetRows) out.emplace_back(row.name);
    return out;
  }();
  return names;
}

DatasetSpec RunConfig::dataset_spec() const {
  DatasetSpec s = data;
  s.token_count = backbone.token_count;
  s.feature_dim = backbone.input_dim;
  return s;
}

double cosine_lr(double lr0, std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return lr0;
  const double t = static_cast<double>(std::clamp<std::int64_t>(step, 0, total_steps));
  return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * t / static_cast<double>(total_steps)));
}

}  // namespace gcdkit
