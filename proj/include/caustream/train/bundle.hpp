#pragma once

// Model bundle (codec, runoff generator, forecaster, shared parameters) and
// its checkpoint format: bundle.json + params.bin + manifest.json with
// SHA-256 digests of both payload files.

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "caustream/core/io.hpp"
#include "caustream/core/nn.hpp"
#include "caustream/forecast/forecaster.hpp"
#include "caustream/graph/aggregate.hpp"
#include "caustream/repr/codec.hpp"
#include "caustream/repr/runoff.hpp"
#include "caustream/train/data.hpp"
#include "json.hpp"

namespace caustream::train {

struct BundleSpec {
  Index n_stations = 0;
  Index n_forcings = 0;
  Index runoff_dim = 2;
  Index max_lag = 1;
  Matrix river_mask;
  forecast::WindowConfig window;
  repr::RunoffMode runoff_mode = repr::RunoffMode::kLocal;
  repr::CodecOptions codec;
  repr::RunoffOptions runoff;
  forecast::ForecasterOptions forecaster;
  std::uint64_t seed = 0;
};

struct ModelBundle {
  BundleSpec spec;
  nn::ParameterSet params;
  repr::ForcingCodec codec;
  repr::RunoffGenerator runoff;
  forecast::Forecaster forecaster;
  Standardization stats;
};

inline ModelBundle make_bundle(const BundleSpec& spec) {
  ModelBundle b;
  b.spec = spec;
  nn::Rng rng(spec.seed * 7919ULL + 17ULL);
  b.codec = repr::ForcingCodec(b.params, spec.n_forcings, rng, spec.codec);
  b.runoff = repr::RunoffGenerator(b.params, spec.runoff_mode, spec.n_stations, spec.n_forcings,
                                   spec.runoff_dim, rng, spec.runoff);
  b.forecaster = forecast::Forecaster(b.params, spec.n_stations, spec.runoff_dim, spec.max_lag,
                                      spec.river_mask, spec.window, rng, spec.forecaster);
  return b;
}

// ---------------------------------------------------------------------------
// Serialization.

inline nlohmann::json vector_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

inline nlohmann::json spec_json(const BundleSpec& s) {
  nlohmann::json j;
  j["n_stations"] = s.n_stations;
  j["n_forcings"] = s.n_forcings;
  j["runoff_dim"] = s.runoff_dim;
  j["max_lag"] = s.max_lag;
  j["river_mask"] = graph::matrix_json(s.river_mask);
  j["window"] = {{"history_len", s.window.history_len},
                 {"horizon", s.window.horizon},
                 {"preset", forecast::to_string(s.window.preset)}};
  j["runoff_mode"] = repr::to_string(s.runoff_mode);
  j["codec"] = {{"hidden", s.codec.hidden},
                {"depth", s.codec.depth},
                {"activation", s.codec.activation == nn::Activation::kTanh ? "tanh" : "softplus"},
                {"scale_floor", s.codec.scale_floor},
                {"init_gain", s.codec.init_gain},
                {"init_log_scale", s.codec.init_log_scale},
                {"recon_weight", s.codec.recon_weight}};
  j["runoff"] = {{"hidden", s.runoff.hidden}, {"embed_dim", s.runoff.embed_dim}};
  j["forecaster"] = {{"channels", s.forecaster.channels},
                     {"kernel", s.forecaster.kernel},
                     {"hidden", s.forecaster.hidden},
                     {"embed_dim", s.forecaster.embed_dim},
                     {"out_gain", s.forecaster.out_gain},
                     {"mode", forecast::to_string(s.forecaster.mode)}};
  j["seed"] = s.seed;
  return j;
}

inline BundleSpec spec_from_json(const nlohmann::json& j) {
  BundleSpec s;
  s.n_stations = j.at("n_stations").get<Index>();
  s.n_forcings = j.at("n_forcings").get<Index>();
  s.runoff_dim = j.at("runoff_dim").get<Index>();
  s.max_lag = j.at("max_lag").get<Index>();
  s.river_mask = graph::matrix_from_json(j.at("river_mask"));
  const auto& w = j.at("window");
  s.window = {w.at("history_len").get<Index>(), w.at("horizon").get<Index>(),
              forecast::parse_preset(w.at("preset").get<std::string>())};
  s.runoff_mode = j.at("runoff_mode").get<std::string>() == "shared" ? repr::RunoffMode::kShared
                                                                      : repr::RunoffMode::kLocal;
  const auto& c = j.at("codec");
  s.codec.hidden = c.at("hidden").get<Index>();
  s.codec.depth = c.at("depth").get<Index>();
  s.codec.activation = c.at("activation").get<std::string>() == "tanh" ? nn::Activation::kTanh
                                                                       : nn::Activation::kSoftplus;
  s.codec.scale_floor = c.at("scale_floor").get<double>();
  s.codec.init_gain = c.at("init_gain").get<double>();
  s.codec.init_log_scale = c.at("init_log_scale").get<double>();
  s.codec.recon_weight = c.at("recon_weight").get<double>();
  s.runoff.hidden = j.at("runoff").at("hidden").get<Index>();
  s.runoff.embed_dim = j.at("runoff").at("embed_dim").get<Index>();
  const auto& f = j.at("forecaster");
  s.forecaster.channels = f.at("channels").get<Index>();
  s.forecaster.kernel = f.at("kernel").get<Index>();
  s.forecaster.hidden = f.at("hidden").get<Index>();
  s.forecaster.embed_dim = f.at("embed_dim").get<Index>();
  s.forecaster.out_gain = f.at("out_gain").get<double>();
  s.forecaster.mode = forecast::parse_conditioning(f.at("mode").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

/// Binary parameter dump: count, then per tensor name, rows, cols, values.
inline std::string params_blob(const nn::ParameterSet& p) {
  std::string out;
  auto put = [&out](const void* src, std::size_t n) { out.append(static_cast<const char*>(src), n); };
  const std::uint64_t count = p.size();
  put(&count, sizeof count);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& name = p.name(static_cast<int>(i));
    const auto& v = p.value(static_cast<int>(i));
    const std::uint64_t len = name.size(), r = static_cast<std::uint64_t>(v.rows()),
                        c = static_cast<std::uint64_t>(v.cols());
    put(&len, sizeof len);
    put(name.data(), name.size());
    put(&r, sizeof r);
    put(&c, sizeof c);
    put(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double));
  }
  return out;
}

inline void load_params_blob(nn::ParameterSet& p, const std::string& blob) {
  std::size_t pos = 0;
  auto get = [&](void* dst, std::size_t n) {
    if (pos + n > blob.size()) throw IntegrityError("truncated parameter archive");
    std::memcpy(dst, blob.data() + pos, n);
    pos += n;
  };
  std::uint64_t count = 0;
  get(&count, sizeof count);
  if (count != p.size()) throw IntegrityError("parameter count does not match the bundle schema");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t len = 0, r = 0, c = 0;
    get(&len, sizeof len);
    if (len > 4096) throw IntegrityError("corrupt parameter name");
    std::string name(len, '\0');
    get(name.data(), len);
    get(&r, sizeof r);
    get(&c, sizeof c);
    const int id = p.find(name);
    if (id < 0) throw IntegrityError("unknown parameter " + name);
    Matrix& v = p.value(id);
    if (static_cast<std::uint64_t>(v.rows()) != r || static_cast<std::uint64_t>(v.cols()) != c)
      throw IntegrityError("shape mismatch for parameter " + name);
    get(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double));
  }
  if (pos != blob.size()) throw IntegrityError("trailing bytes in parameter archive");
}

inline nlohmann::json bundle_json(const ModelBundle& b) {
  nlohmann::json j;
  j["spec"] = spec_json(b.spec);
  j["standardization"] = {{"forcing_mean", vector_json(b.stats.forcing_mean)},
                          {"forcing_std", vector_json(b.stats.forcing_std)},
                          {"flow_mean", vector_json(b.stats.flow_mean)},
                          {"flow_std", vector_json(b.stats.flow_std)}};
  nlohmann::json gate = nlohmann::json::array();
  for (const auto& g : b.forecaster.gate()) gate.push_back(graph::matrix_json(g));
  j["gate"] = gate;
  j["mode"] = forecast::to_string(b.forecaster.mode());
  return j;
}

/// Writes the three checkpoint files atomically; the manifest goes last so
/// a checkpoint is only valid once complete.
inline void checkpoint(const ModelBundle& b, const std::filesystem::path& dir) {
  const std::string meta = bundle_json(b).dump(2) + "\n";
  const std::string blob = params_blob(b.params);
  io::write_atomic(dir / "bundle.json", meta);
  io::write_atomic(dir / "params.bin", blob);
  nlohmann::json m;
  m["format"] = 1;
  m["files"] = {{"bundle.json", io::sha256_hex(meta)}, {"params.bin", io::sha256_hex(blob)}};
  io::write_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

inline std::string checkpoint_id(const std::filesystem::path& dir) {
  return io::sha256_hex(io::read_file(dir / "manifest.json")).substr(0, 16);
}

inline ModelBundle restore(const std::filesystem::path& dir, const BundleSpec* expected = nullptr) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("unreadable manifest: ") + e.what());
  }
  const std::string meta = io::read_file(dir / "bundle.json");
  const std::string blob = io::read_file(dir / "params.bin");
  if (!m.contains("files") || m["files"].value("bundle.json", "") != io::sha256_hex(meta) ||
      m["files"].value("params.bin", "") != io::sha256_hex(blob))
    throw IntegrityError("checkpoint hash mismatch in " + dir.string());
  nlohmann::json j = nlohmann::json::parse(meta);
  BundleSpec spec = spec_from_json(j.at("spec"));
  if (expected) {
    if (spec.n_stations != expected->n_stations || spec.n_forcings != expected->n_forcings ||
        spec.runoff_dim != expected->runoff_dim || spec.max_lag != expected->max_lag ||
        spec.river_mask != expected->river_mask)
      throw IntegrityError("checkpoint schema does not match the expected bundle");
  }
  ModelBundle b = make_bundle(spec);
  load_params_blob(b.params, blob);
  const auto& s = j.at("standardization");
  b.stats.forcing_mean = vector_from_json(s.at("forcing_mean"));
  b.stats.forcing_std = vector_from_json(s.at("forcing_std"));
  b.stats.flow_mean = vector_from_json(s.at("flow_mean"));
  b.stats.flow_std = vector_from_json(s.at("flow_std"));
  std::vector<Matrix> gate;
  for (const auto& g : j.at("gate")) gate.push_back(graph::matrix_from_json(g));
  b.forecaster.set_gate(gate);
  b.forecaster.set_mode(forecast::parse_conditioning(j.at("mode").get<std::string>()));
  return b;
}

}  // namespace caustream::train
