// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

namespace strata {

namespace fs = std::filesystem;

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

}  // namespace

const Tensor<float>& Checkpoint::at(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw Error("checkpoint has no tensor named " + name);
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::json index = nlohmann::json::array();
  std::set<std::string> seen;
  std::ofstream bin(fs::path(dir) / "weights.bin", std::ios::binary | std::ios::trunc);
  STRATA_CHECK(bin.good(), "cannot write ", (fs::path(dir) / "weights.bin").string());
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    STRATA_CHECK(seen.insert(name).second, "duplicate tensor name ", name);
    index.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape()}, {"byte_offset", offset}});
    std::vector<std::uint32_t> words(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) words[i] = to_le(std::bit_cast<std::uint32_t>(t[i]));
    bin.write(reinterpret_cast<const char*>(words.data()),
              static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
    offset += words.size() * sizeof(std::uint32_t);
  }
  STRATA_CHECK(bin.good(), "short write to weights.bin in ", dir);
  const nlohmann::json manifest{{"version", kCheckpointVersion},
                                {"kind", ckpt.kind},
                                {"config", ckpt.config},
                                {"tensors", index}};
  std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
  STRATA_CHECK(mf.good(), "cannot write manifest.json in ", dir);
  mf << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "manifest.json");
  STRATA_CHECK(mf.good(), "no manifest.json in ", dir);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw Error("manifest.json in " + dir + ": " + e.what());
  }
  const int version = manifest.value("version", 0);
  STRATA_CHECK(version == kCheckpointVersion, "unsupported checkpoint version ", version);

  std::ifstream bin(fs::path(dir) / "weights.bin", std::ios::binary);
  STRATA_CHECK(bin.good(), "no weights.bin in ", dir);
  const std::vector<char> bytes{std::istreambuf_iterator<char>(bin), std::istreambuf_iterator<char>()};

  Checkpoint out;
  out.kind = manifest.value("kind", "");
  out.config = manifest.value("config", nlohmann::json::object());
  for (const auto& e : manifest.at("tensors")) {
    const auto name = e.at("name").get<std::string>();
    STRATA_CHECK(e.at("dtype").get<std::string>() == "f32", "tensor ", name, " has dtype ",
                 e.at("dtype").get<std::string>(), ", only f32 is supported");
    const auto shape = e.at("shape").get<Shape>();
    const auto offset = e.at("byte_offset").get<std::size_t>();
    const std::size_t n = numel(shape);
    STRATA_CHECK(offset + n * 4 <= bytes.size(), "tensor ", name, " runs past the end of weights.bin");
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t w;
      std::memcpy(&w, bytes.data() + offset + i * 4, 4);
      data[i] = std::bit_cast<float>(to_le(w));
    }
    out.add(name, Tensor<float>(shape, std::move(data)));
  }
  return out;
}

Checkpoint checkpoint_from_params(const ParameterStore<float>& store, std::string kind,
                                  nlohmann::json config) {
  Checkpoint out{std::move(kind), std::move(config), {}};
  for (const auto* p : store.all()) out.add(p->name, p->value);
  return out;
}

void load_params(ParameterStore<float>& store, const Checkpoint& ckpt) {
  const auto params = store.all();
  STRATA_CHECK(params.size() == ckpt.tensors.size(), "checkpoint holds ", ckpt.tensors.size(),
               " tensors but the model has ", params.size(), " parameters");
  for (auto* p : params) {
    const Tensor<float>& t = ckpt.at(p->name);
    STRATA_CHECK_SHAPE(t.shape() == p->value.shape(), "tensor ", p->name, " has shape ",
                       to_string(t.shape()), " but the model expects ", to_string(p->value.shape()));
    p->value = t;
  }
}

Checkpoint latents_to_checkpoint(const LatentGrid& z) {
  Checkpoint c;
  c.kind = "latents";
  c.config = {{"grid", {{"t", z.grid.t}, {"h", z.grid.h}, {"w", z.grid.w}}},
              {"levels", z.levels},
              {"dim", z.dim},
              {"budget", z.budget.levels}};
  c.add("values", z.values);
  return c;
}

LatentGrid latents_from_checkpoint(const Checkpoint& ckpt) {
  STRATA_CHECK(ckpt.kind == "latents", "checkpoint kind is '", ckpt.kind, "', expected 'latents'");
  const auto& c = ckpt.config;
  const GridDims g{c.at("grid").at("t").get<int>(), c.at("grid").at("h").get<int>(), c.at("grid").at("w").get<int>()};
  const auto n = c.at("levels").get<std::uint32_t>();
  LevelBudget budget{c.at("budget").get<std::vector<std::uint32_t>>(), n};
  budget.validate();
  LatentGrid z(g, n, c.at("dim").get<std::size_t>(), std::move(budget));
  const Tensor<float>& v = ckpt.at("values");
  STRATA_CHECK_SHAPE(v.size() == z.values.size(), "latent values hold ", v.size(), " entries, expected ",
                     z.values.size());
  std::copy(v.data(), v.data() + v.size(), z.values.data());
  return z;
}

}  // namespace strata
