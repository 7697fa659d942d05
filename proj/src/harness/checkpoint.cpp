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

#include "gcdkit/harness/checkpoint.hpp"

#include <spdlog/spdlog.h>

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gcdkit {

namespace {

namespace fs = std::filesystem;

constexpr const char* kMagic = "gcdkit-checkpoint 1";

fs::path with_ext(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void save_checkpoint(const Model& model, const CheckpointRecord& record, const fs::path& stem) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  std::ofstream manifest(with_ext(stem, ".txt"));
  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!manifest || !bin) throw IoError("cannot write checkpoint " + stem.string());

  manifest << kMagic << '\n'
           << "step " << record.step << '\n'
           << "config_hash " << model.config.hash() << '\n'
           << "num_classes " << model.prototypes.num_classes() << '\n'
           << "old_classes";
  for (int k : model.old_classes) manifest << ' ' << k;
  manifest << '\n';
  for (const auto& [name, value] : record.metrics) manifest << "metric " << name << ' ' << g17(value) << '\n';

  std::int64_t offset = 0;
  for (const auto& p : model.trainable()) {
    manifest << "param " << p.name << ' ' << offset << ' ' << p.tensor.rows() << 'x' << p.tensor.cols() << '\n';
    const Matrix& v = p.tensor.value();
    for (Index i = 0; i < v.size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(v.data()[i]);
      char b[8];
      for (int k = 0; k < 8; ++k) b[k] = static_cast<char>((bits >> (8 * k)) & 0xFFu);
      bin.write(b, 8);
    }
    offset += v.size();
  }
  manifest << "config_begin\n" << model.config.canonical() << "config_end\n";
  if (!manifest || !bin) throw IoError("failed writing checkpoint " + stem.string());
}

Model load_checkpoint(const fs::path& stem, CheckpointRecord* record_out) {
  std::ifstream manifest(with_ext(stem, ".txt"));
  if (!manifest) throw IoError("cannot open checkpoint " + with_ext(stem, ".txt").string());
  std::string line;
  if (!std::getline(manifest, line) || line != kMagic) throw IoError(stem.string() + ": not a gcdkit checkpoint");

  CheckpointRecord record;
  int num_classes = 0;
  std::set<int> old_classes;
  struct Entry {
    std::string name;
    std::int64_t offset;
    Index rows, cols;
  };
  std::vector<Entry> entries;
  std::string config_text;
  bool in_config = false, config_done = false;
  while (std::getline(manifest, line)) {
    if (in_config) {
      if (line == "config_end") {
        in_config = false;
        config_done = true;
      } else {
        config_text += line + "\n";
      }
      continue;
    }
    std::istringstream in(line);
    std::string tag;
    in >> tag;
    if (tag == "step") {
      in >> record.step;
    } else if (tag == "config_hash") {
      in >> record.config_hash;
    } else if (tag == "num_classes") {
      in >> num_classes;
    } else if (tag == "old_classes") {
      for (int k; in >> k;) old_classes.insert(k);
      in.clear();
    } else if (tag == "metric") {
      std::string name, value;
      in >> name >> value;
      record.metrics[name] = std::stod(value);
    } else if (tag == "param") {
      Entry e;
      std::string extent;
      in >> e.name >> e.offset >> extent;
      const auto x = extent.find('x');
      if (x == std::string::npos) throw IoError(stem.string() + ": bad extent " + extent);
      e.rows = std::stol(extent.substr(0, x));
      e.cols = std::stol(extent.substr(x + 1));
      entries.push_back(e);
    } else if (tag == "config_begin") {
      in_config = true;
    } else {
      throw IoError(stem.string() + ": unknown manifest line: " + line);
    }
    if (in.fail()) throw IoError(stem.string() + ": malformed manifest line: " + line);
  }
  if (!config_done) throw IoError(stem.string() + ": manifest has no embedded config");

  RunConfig config = RunConfig::parse(config_text);
  if (config.hash() != record.config_hash) {
    spdlog::warn("checkpoint {}: stored config hash {} differs from embedded config {}", stem.string(),
                 record.config_hash, config.hash());
  }
  Model model = Model::build(config, num_classes, old_classes);

  std::ifstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!bin) throw IoError("cannot open " + with_ext(stem, ".bin").string());
  std::vector<double> values;
  for (unsigned char b[8]; bin.read(reinterpret_cast<char*>(b), 8);) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    values.push_back(std::bit_cast<double>(bits));
  }
  if (bin.gcount() != 0) throw IoError(stem.string() + ".bin: trailing partial value");

  auto params = model.trainable();
  if (params.size() != entries.size()) {
    throw IoError(stem.string() + ": checkpoint holds " + std::to_string(entries.size()) +
                  " tensors, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Entry& e = entries[i];
    Tensor& t = params[i].tensor;
    if (e.name != params[i].name || e.rows != t.rows() || e.cols != t.cols()) {
      throw IoError(stem.string() + ": parameter " + e.name + " does not match model tensor " + params[i].name);
    }
    if (e.offset < 0 || static_cast<std::size_t>(e.offset + t.numel()) > values.size()) {
      throw IoError(stem.string() + ": parameter " + e.name + " runs past the end of the data");
    }
    std::copy_n(values.begin() + e.offset, t.numel(), t.mutable_value().data());
  }
  if (record_out) *record_out = record;
  return model;
}

}  // namespace gcdkit
