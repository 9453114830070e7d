// Copyright 2025 The diffmss Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstring>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "diffmss/harness/config.hpp"
#include "diffmss/nn/params.hpp"

namespace diffmss {

// Checkpoint file: magic, u64 manifest length, JSON manifest, then one raw
// little-endian float32 blob per parameter in manifest order. Save/load
// round-trips are bit-identical.

inline constexpr char kCheckpointMagic[8] = {'D', 'M', 'S', 'S', 'C', 'K', 'P', 'T'};
inline constexpr int kCheckpointSchemaVersion = 1;

template <class T>
void save_checkpoint(const std::string& path, const nn::ParamStore<T>& store,
                     const RunConfig& cfg, int64_t step_count) {
  nlohmann::json manifest;
  manifest["schema_version"] = kCheckpointSchemaVersion;
  manifest["step_count"] = step_count;
  manifest["dtype"] = "f32";
  manifest["byte_order"] = "little";
  nlohmann::json jcfg;
  for (const auto& [k, v] : config_entries(cfg)) jcfg[k] = v;
  manifest["config"] = jcfg;
  nlohmann::json jparams = nlohmann::json::array();
  for (int i = 0; i < store.size(); ++i) {
    const auto& e = store.entry(i);
    jparams.push_back({{"name", e.name}, {"shape", e.value.shape}});
  }
  manifest["params"] = jparams;
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot write " + path);
  out.write(kCheckpointMagic, 8);
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  std::vector<float> buf;
  for (int i = 0; i < store.size(); ++i) {
    const auto& v = store.entry(i).value;
    buf.resize(static_cast<size_t>(v.numel()));
    for (int64_t j = 0; j < v.numel(); ++j) buf[static_cast<size_t>(j)] = static_cast<float>(v[j]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

struct LoadedCheckpoint {
  nlohmann::json manifest;
  std::vector<std::pair<std::string, Tensor<float>>> params;

  RunConfig config() const {
    RunConfig c;
    for (auto it = manifest.at("config").begin(); it != manifest.at("config").end(); ++it)
      apply_config_entry(c, it.key(), it.value().template get<std::string>());
    return c;
  }

  int64_t step_count() const { return manifest.at("step_count").get<int64_t>(); }

  template <class T>
  void apply_to(nn::ParamStore<T>& store) const {
    check(static_cast<int>(params.size()) == store.size(),
          "checkpoint: parameter count mismatch");
    for (const auto& [name, tensor] : params) {
      const int idx = store.find(name);
      check(idx >= 0, "checkpoint: unknown parameter " + name);
      Tensor<T>& dst = store.value(idx);
      check(dst.shape == tensor.shape, "checkpoint: shape mismatch for " + name);
      for (int64_t j = 0; j < tensor.numel(); ++j) dst[j] = static_cast<T>(tensor[j]);
    }
  }
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot read " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error("load_checkpoint: truncated manifest");
  LoadedCheckpoint ck;
  ck.manifest = nlohmann::json::parse(text);
  if (ck.manifest.at("schema_version").get<int>() != kCheckpointSchemaVersion)
    throw std::runtime_error("load_checkpoint: unsupported schema version");
  for (const auto& jp : ck.manifest.at("params")) {
    Tensor<float> t(jp.at("shape").get<std::vector<int>>());
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!in) throw std::runtime_error("load_checkpoint: truncated blob");
    ck.params.emplace_back(jp.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

}  // namespace diffmss
