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

#include "gcdkit/gcddata.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "gcdkit/numkernel/random.hpp"

namespace gcdkit {

namespace {

constexpr const char* kMagic = "gcdkit-dataset 1";
constexpr const char* kEndHeader = "end_header";

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(b, 4);
}

void put_f64(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  out.write(b, 8);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("dataset: truncated record");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw IoError("dataset: truncated record");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  if constexpr (std::is_floating_point_v<T>) {
    try {
      std::size_t used = 0;
      value = static_cast<T>(std::stod(text, &used));
      if (used != text.size()) throw std::invalid_argument(text);
    } catch (const std::exception&) {
      throw IoError("dataset header: bad value for " + key + ": " + text);
    }
  } else {
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
      throw IoError("dataset header: bad value for " + key + ": " + text);
    }
  }
  return value;
}

}  // namespace

void DatasetSpec::validate() const {
  if (num_classes < 2) throw ValidationError("dataset: need at least 2 classes");
  if (old_classes < 1 || old_classes >= num_classes) {
    throw ValidationError("dataset: old classes must be a proper, non-empty subset of all classes");
  }
  if (!(labeled_fraction > 0 && labeled_fraction <= 1)) {
    throw ValidationError("dataset: labeled fraction must lie in (0, 1]");
  }
  if (samples_per_class < 2) throw ValidationError("dataset: need at least 2 samples per class");
  if (token_count < 1 || feature_dim < 1) throw ValidationError("dataset: token_count and feature_dim must be >= 1");
  if (!(separation > 0)) throw ValidationError("dataset: separation must be > 0");
  if (!(noise >= 0)) throw ValidationError("dataset: noise must be >= 0");
  if (!(imbalance >= 1)) throw ValidationError("dataset: imbalance must be >= 1");
}

std::vector<int> DatasetSpec::class_sizes() const {
  std::vector<int> sizes(static_cast<std::size_t>(num_classes), samples_per_class);
  if (imbalance > 1) {
    for (int k = 0; k < num_classes; ++k) {
      const double ratio = std::pow(imbalance, -static_cast<double>(k) / (num_classes - 1));
      sizes[static_cast<std::size_t>(k)] = std::max(2, static_cast<int>(std::lround(samples_per_class * ratio)));
    }
  }
  return sizes;
}

DatasetSpec DatasetSpec::cifar100_style(int num_classes) {
  DatasetSpec s;
  s.num_classes = num_classes;
  s.old_classes = static_cast<int>(std::lround(0.8 * num_classes));
  return s;
}

DatasetSpec DatasetSpec::long_tailed(int num_classes, double imbalance) {
  DatasetSpec s;
  s.num_classes = num_classes;
  s.old_classes = num_classes / 2;
  s.imbalance = imbalance;
  return s;
}

std::vector<const Sample*> GcdSplit::all() const {
  std::vector<const Sample*> out;
  out.reserve(size());
  for (const auto& s : labeled) out.push_back(&s);
  for (const auto& s : unlabeled) out.push_back(&s);
  return out;
}

void GcdSplit::validate() const {
  std::set<int> ids;
  std::set<int> labeled_old, unlabeled_old;
  for (const auto& s : labeled) {
    if (!s.labeled) throw ValidationError("split: labeled set holds an unlabeled sample");
    if (!old_classes.count(s.label)) throw ValidationError("split: labeled sample from a new class");
    if (!ids.insert(s.id).second) throw ValidationError("split: duplicate sample id " + std::to_string(s.id));
    labeled_old.insert(s.label);
  }
  for (const auto& s : unlabeled) {
    if (s.labeled) throw ValidationError("split: unlabeled set holds a labeled sample");
    if (!all_classes.count(s.label)) throw ValidationError("split: label outside the class set");
    if (!ids.insert(s.id).second) throw ValidationError("split: duplicate sample id " + std::to_string(s.id));
    if (old_classes.count(s.label)) unlabeled_old.insert(s.label);
  }
  if (labeled_old != old_classes || unlabeled_old != old_classes) {
    throw ValidationError("split: every old class needs labeled and unlabeled samples");
  }
}

GcdSplit generate(const DatasetSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, {0xDA7Au});
  GcdSplit split;
  split.spec = spec;
  for (int k = 0; k < spec.num_classes; ++k) {
    split.all_classes.insert(k);
    (k < spec.old_classes ? split.old_classes : split.new_classes).insert(k);
  }

  std::vector<Matrix> archetypes;
  for (int k = 0; k < spec.num_classes; ++k) {
    archetypes.push_back(gaussian_matrix(spec.token_count, spec.feature_dim, spec.separation, rng));
  }

  const auto sizes = spec.class_sizes();
  int next_id = 0;
  std::vector<Sample> samples;
  for (int k = 0; k < spec.num_classes; ++k) {
    const int n = sizes[static_cast<std::size_t>(k)];
    std::vector<std::uint8_t> flags(static_cast<std::size_t>(n), 0);
    if (k < spec.old_classes) {
      const int n_labeled = std::clamp(static_cast<int>(std::lround(spec.labeled_fraction * n)), 1, n - 1);
      std::vector<int> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (int i = 0; i < n_labeled; ++i) flags[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    }
    for (int i = 0; i < n; ++i) {
      Sample s;
      s.id = next_id++;
      s.label = k;
      s.labeled = flags[static_cast<std::size_t>(i)] != 0;
      s.tokens = archetypes[static_cast<std::size_t>(k)];
      if (spec.noise > 0) s.tokens += gaussian_matrix(spec.token_count, spec.feature_dim, spec.noise, rng);
      samples.push_back(std::move(s));
    }
  }
  for (auto& s : samples) (s.labeled ? split.labeled : split.unlabeled).push_back(std::move(s));
  split.validate();
  return split;
}

std::pair<Matrix, Matrix> augment_two_views(const Sample& sample, double strength, std::uint64_t seed) {
  if (!(strength >= 0)) throw ValidationError("augment: strength must be >= 0");
  if (strength == 0) return {sample.tokens, sample.tokens};
  Rng rng = make_rng(seed, {static_cast<std::uint64_t>(sample.id), 0xA06u});
  const double drop = std::min(0.5, 0.2 * strength);
  const Vector token_mean = sample.tokens.colwise().mean();
  std::bernoulli_distribution dropped(drop);
  auto view = [&] {
    Matrix v = sample.tokens + gaussian_matrix(sample.tokens.rows(), sample.tokens.cols(), strength, rng);
    for (Index t = 0; t < v.rows(); ++t) {
      if (dropped(rng)) v.row(t) = token_mean;
    }
    return v;
  };
  Matrix first = view();
  Matrix second = view();
  return {std::move(first), std::move(second)};
}

std::vector<std::vector<const Sample*>> epoch_batches(const GcdSplit& split, int batch_size,
                                                      std::uint64_t epoch_seed) {
  if (batch_size < 2) throw ValidationError("batch size must be >= 2, got " + std::to_string(batch_size));
  auto order = split.all();
  if (order.size() < 2) throw ValidationError("batch_iter: need at least 2 samples");
  Rng rng = make_rng(epoch_seed, {0xE90Cu});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<const Sample*>> batches;
  for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

Matrix stack_tokens(std::span<const Sample* const> samples) {
  if (samples.empty()) return Matrix();
  const Index v = samples.front()->tokens.rows();
  Matrix out(static_cast<Index>(samples.size()) * v, samples.front()->tokens.cols());
  for (std::size_t i = 0; i < samples.size(); ++i) out.middleRows(static_cast<Index>(i) * v, v) = samples[i]->tokens;
  return out;
}

BatchViews make_batch_views(std::span<const Sample* const> samples, double strength, std::uint64_t seed) {
  if (samples.empty()) throw ValidationError("make_batch_views: empty batch");
  const Index v = samples.front()->tokens.rows();
  const Index dim = samples.front()->tokens.cols();
  Matrix first(static_cast<Index>(samples.size()) * v, dim);
  Matrix second(first.rows(), dim);
  BatchViews out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = *samples[i];
    auto [a, b] = augment_two_views(s, strength, seed);
    first.middleRows(static_cast<Index>(i) * v, v) = a;
    second.middleRows(static_cast<Index>(i) * v, v) = b;
    out.ids.push_back(s.id);
    out.labels.push_back(s.labeled ? s.label : -1);
    out.labeled.push_back(s.labeled ? 1 : 0);
    out.truths.push_back(s.label);
  }
  out.view1 = Tensor(std::move(first));
  out.view2 = Tensor(std::move(second));
  return out;
}

BatchStream::BatchStream(const GcdSplit& split, int batch_size, std::uint64_t epoch_seed, double strength)
    : batches_(epoch_batches(split, batch_size, epoch_seed)), seed_(epoch_seed), strength_(strength) {}

std::optional<BatchViews> BatchStream::next() {
  if (cursor_ >= batches_.size()) return std::nullopt;
  const auto& batch = batches_[cursor_];
  auto views = make_batch_views(batch, strength_, seed_ * 1000003u + cursor_);
  ++cursor_;
  return views;
}

void save_dataset(const GcdSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto& s = split.spec;
  out << kMagic << '\n'
      << "num_classes=" << s.num_classes << '\n'
      << "old_classes=" << s.old_classes << '\n'
      << "labeled_fraction=" << format_double(s.labeled_fraction) << '\n'
      << "samples_per_class=" << s.samples_per_class << '\n'
      << "token_count=" << s.token_count << '\n'
      << "feature_dim=" << s.feature_dim << '\n'
      << "separation=" << format_double(s.separation) << '\n'
      << "noise=" << format_double(s.noise) << '\n'
      << "imbalance=" << format_double(s.imbalance) << '\n'
      << "seed=" << s.seed << '\n'
      << "records=" << split.size() << '\n'
      << "layout=int32le id,int32le label,int32le labeled,float64le[token_count*feature_dim] row-major\n"
      << kEndHeader << '\n';
  std::vector<const Sample*> ordered = split.all();
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->id < b->id; });
  for (const Sample* sample : ordered) {
    put_u32(out, static_cast<std::uint32_t>(sample->id));
    put_u32(out, static_cast<std::uint32_t>(sample->label));
    put_u32(out, sample->labeled ? 1u : 0u);
    for (Index i = 0; i < sample->tokens.size(); ++i) put_f64(out, sample->tokens.data()[i]);
  }
  if (!out) throw IoError("failed writing " + path.string());
}

GcdSplit load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw IoError(path.string() + ": not a gcdkit dataset file");
  std::map<std::string, std::string> header;
  bool terminated = false;
  while (std::getline(in, line)) {
    if (line == kEndHeader) {
      terminated = true;
      break;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(path.string() + ": malformed header line: " + line);
    header[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!terminated) throw IoError(path.string() + ": header not terminated");
  auto take = [&](const std::string& key) {
    auto it = header.find(key);
    if (it == header.end()) throw IoError(path.string() + ": header missing " + key);
    std::string v = it->second;
    header.erase(it);
    return v;
  };
  DatasetSpec spec;
  spec.num_classes = parse_number<int>("num_classes", take("num_classes"));
  spec.old_classes = parse_number<int>("old_classes", take("old_classes"));
  spec.labeled_fraction = parse_number<double>("labeled_fraction", take("labeled_fraction"));
  spec.samples_per_class = parse_number<int>("samples_per_class", take("samples_per_class"));
  spec.token_count = parse_number<int>("token_count", take("token_count"));
  spec.feature_dim = parse_number<int>("feature_dim", take("feature_dim"));
  spec.separation = parse_number<double>("separation", take("separation"));
  spec.noise = parse_number<double>("noise", take("noise"));
  spec.imbalance = parse_number<double>("imbalance", take("imbalance"));
  spec.seed = parse_number<std::uint64_t>("seed", take("seed"));
  const auto records = parse_number<std::size_t>("records", take("records"));
  take("layout");
  if (!header.empty()) throw IoError(path.string() + ": unknown header key " + header.begin()->first);
  try {
    spec.validate();
  } catch (const ValidationError& e) {
    throw IoError(path.string() + ": " + e.what());
  }

  GcdSplit split;
  split.spec = spec;
  for (int k = 0; k < spec.num_classes; ++k) {
    split.all_classes.insert(k);
    (k < spec.old_classes ? split.old_classes : split.new_classes).insert(k);
  }
  for (std::size_t r = 0; r < records; ++r) {
    Sample s;
    s.id = static_cast<int>(get_u32(in));
    s.label = static_cast<int>(get_u32(in));
    const std::uint32_t flag = get_u32(in);
    if (flag > 1) throw IoError(path.string() + ": bad labeled flag");
    s.labeled = flag == 1;
    if (s.label < 0 || s.label >= spec.num_classes) throw IoError(path.string() + ": label out of range");
    s.tokens.resize(spec.token_count, spec.feature_dim);
    for (Index i = 0; i < s.tokens.size(); ++i) s.tokens.data()[i] = get_f64(in);
    (s.labeled ? split.labeled : split.unlabeled).push_back(std::move(s));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + ": trailing bytes after records");
  try {
    split.validate();
  } catch (const ValidationError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return split;
}

}  // namespace gcdkit
