#pragma once

// On-disk formats. Datasets and ensembles are a JSON metadata file plus a CSV of states;
// checkpoints and metrics are JSON; series and densities are plain CSV. Every JSON file
// carries the format version and the hash of the config that produced it.

#include "sgfnn/eval.hpp"
#include "sgfnn/model.hpp"
#include "sgfnn/sde.hpp"
#include "sgfnn/systems.hpp"
#include "sgfnn/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sgfnn::io {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Hash of the canonical (sorted-key, compact) dump of a config.
inline std::string config_hash(const json& config) { return fnv1a_hex(config.dump()); }

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw IoError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

// ---- systems and regions ----

inline json system_to_json(const SystemSpec& s) {
  json c = json::object();
  for (const auto& [k, v] : s.constants) c[k] = v;
  return {{"name", std::string(system_name(s.kind))}, {"d", s.d}, {"r", s.r}, {"constants", c}};
}

inline SystemSpec system_from_json(const json& j) {
  std::map<std::string, double> overrides;
  if (j.contains("constants"))
    for (const auto& [k, v] : j.at("constants").items()) overrides[k] = v.get<double>();
  return make_system(j.at("name").get<std::string>(), overrides);
}

inline json region_to_json(const Region& r) {
  if (r.kind == Region::Kind::Disc) return {{"kind", "disc"}, {"radius", r.radius}};
  return {{"kind", "point"}, {"point", std::vector<double>(r.point.data(), r.point.data() + r.point.size())}};
}

inline Region region_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "disc") return Region::disc(j.at("radius").get<double>());
  if (kind == "point") {
    const auto v = j.at("point").get<std::vector<double>>();
    return Region::at(PhaseState(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()))));
  }
  throw IoError("unknown region kind '" + kind + "'");
}

// ---- datasets and ensembles ----

inline std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}

inline json dataset_metadata(const Dataset& ds, const std::string& hash) {
  json tags = json::object();
  for (const auto& [k, v] : ds.tags) tags[k] = v;
  return {{"format_version", kFormatVersion},
          {"config_hash", hash},
          {"system", system_to_json(ds.system)},
          {"d", ds.dim()},
          {"r", ds.system.r},
          {"N", ds.n_traj()},
          {"L", ds.n_steps()},
          {"delta", ds.delta},
          {"record_stride", ds.record_stride},
          {"seed", ds.seed},
          {"region", region_to_json(ds.region)},
          {"tags", tags}};
}

/// Writes `<stem>.json` and `<stem>.csv` (header traj,step,p0..,q0..; 17 significant digits).
inline void write_dataset(const std::filesystem::path& stem, const Dataset& ds, const std::string& hash) {
  const int d = ds.dim();
  std::string csv = "traj,step";
  for (int i = 0; i < d; ++i) csv += ",p" + std::to_string(i);
  for (int i = 0; i < d; ++i) csv += ",q" + std::to_string(i);
  csv += '\n';
  for (long t = 0; t < ds.n_traj(); ++t) {
    const auto& S = ds.trajectories[t].states;
    for (long j = 0; j < S.cols(); ++j) {
      csv += std::to_string(t);
      csv += ',';
      csv += std::to_string(j);
      for (Eigen::Index k = 0; k < S.rows(); ++k) {
        csv += ',';
        csv += format_double(S(k, j));
      }
      csv += '\n';
    }
  }
  write_text(with_suffix(stem, ".csv"), csv);
  write_json(with_suffix(stem, ".json"), dataset_metadata(ds, hash));
}

inline Dataset read_dataset(const std::filesystem::path& stem) {
  const json meta = read_json(with_suffix(stem, ".json"));
  if (meta.value("format_version", 0) != kFormatVersion)
    throw IoError("'" + stem.string() + ".json': unsupported format version");
  Dataset ds;
  long N = 0, L = 0;
  try {
    N = meta.at("N").get<long>();
    L = meta.at("L").get<long>();
    ds.system = system_from_json(meta.at("system"));
    ds.delta = meta.at("delta").get<double>();
    ds.record_stride = meta.value("record_stride", 1L);
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.region = region_from_json(meta.at("region"));
    for (const auto& [k, v] : meta.at("tags").items()) ds.tags[k] = v.get<std::string>();
  } catch (const json::exception& e) {
    throw IoError("'" + stem.string() + ".json': " + e.what());
  }
  const int n = 2 * ds.system.d;
  ds.trajectories.assign(static_cast<std::size_t>(N), Trajectory{Eigen::MatrixXd(n, L + 1), ds.delta, 0.0});

  const std::string text = read_text(with_suffix(stem, ".csv"));
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  long rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const char* p = line.c_str();
    char* end = nullptr;
    const long t = std::strtol(p, &end, 10);
    if (*end != ',') throw IoError("malformed dataset row " + std::to_string(rows + 2));
    const long j = std::strtol(end + 1, &end, 10);
    if (t < 0 || t >= N || j < 0 || j > L) throw IoError("dataset row " + std::to_string(rows + 2) + " out of range");
    for (int k = 0; k < n; ++k) {
      if (*end != ',') throw IoError("malformed dataset row " + std::to_string(rows + 2));
      ds.trajectories[t].states(k, j) = std::strtod(end + 1, &end);
    }
    ++rows;
  }
  if (rows != N * (L + 1)) throw IoError("'" + stem.string() + ".csv' has " + std::to_string(rows) + " rows, expected " +
                                         std::to_string(N * (L + 1)));
  return ds;
}

// ---- checkpoints ----

inline json mlp_to_json(const nn::MlpParams& p) {
  json layers = json::array();
  for (int l = 0; l < p.num_layers(); ++l) {
    const auto W = p.weight(l);
    json rows = json::array();
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(W.cols()));
      for (Eigen::Index k = 0; k < W.cols(); ++k) row[k] = W(i, k);
      rows.push_back(row);
    }
    const auto b = p.bias(l);
    layers.push_back({{"W", rows}, {"b", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  return {{"layer_sizes", p.layer_sizes}, {"elu_alpha", p.elu_alpha}, {"layers", layers}};
}

inline nn::MlpParams mlp_from_json(const json& j) {
  nn::MlpParams p(j.at("layer_sizes").get<std::vector<int>>(), j.at("elu_alpha").get<double>());
  const auto& layers = j.at("layers");
  if (static_cast<int>(layers.size()) != p.num_layers()) throw IoError("checkpoint: layer count mismatch");
  for (int l = 0; l < p.num_layers(); ++l) {
    auto W = p.weight(l);
    const auto& rows = layers[l].at("W");
    if (static_cast<Eigen::Index>(rows.size()) != W.rows()) throw IoError("checkpoint: weight shape mismatch");
    for (Eigen::Index i = 0; i < W.rows(); ++i) {
      const auto row = rows[i].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(row.size()) != W.cols()) throw IoError("checkpoint: weight shape mismatch");
      for (Eigen::Index k = 0; k < W.cols(); ++k) W(i, k) = row[k];
    }
    const auto b = layers[l].at("b").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(b.size()) != p.bias(l).size()) throw IoError("checkpoint: bias shape mismatch");
    for (std::size_t k = 0; k < b.size(); ++k) p.bias(l)[static_cast<Eigen::Index>(k)] = b[k];
  }
  return p;
}

template <class Model>
json model_to_json(const Model& m, const std::string& hash) {
  return {{"format_version", kFormatVersion},
          {"config_hash", hash},
          {"model", Model::kind_name},
          {"system", system_to_json(m.system)},
          {"d", m.dim},
          {"n_z", m.latent_dim},
          {"delta", m.delta},
          {"encoder_input", std::string(encoder_input_name(m.encoder_input))},
          {"output_scale", m.output_scale},
          {"encoder", mlp_to_json(m.encoder)},
          {"decoder", mlp_to_json(m.decoder)}};
}

template <class Model>
Model model_from_json(const json& j) {
  if (j.value("format_version", 0) != kFormatVersion) throw IoError("checkpoint: unsupported format version");
  if (j.at("model").get<std::string>() != Model::kind_name)
    throw IoError("checkpoint holds a '" + j.at("model").get<std::string>() + "' model, expected '" +
                  Model::kind_name + "'");
  Model m;
  try {
    m.system = system_from_json(j.at("system"));
    m.dim = j.at("d").get<int>();
    m.latent_dim = j.at("n_z").get<int>();
    m.delta = j.at("delta").get<double>();
    m.encoder_input = parse_encoder_input(j.value("encoder_input", std::string("raw")));
    m.output_scale = j.value("output_scale", 1.0);
    m.encoder = mlp_from_json(j.at("encoder"));
    m.decoder = mlp_from_json(j.at("decoder"));
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("checkpoint: ") + e.what());
  }
  if (m.encoder.input_size() != 4 * m.dim || m.encoder.output_size() != m.latent_dim ||
      m.decoder.input_size() != 2 * m.dim + m.latent_dim)
    throw IoError("checkpoint: network shapes do not match d and n_z");
  return m;
}

template <class Model>
void save_model(const std::filesystem::path& path, const Model& m, const std::string& hash) {
  write_json(path, model_to_json(m, hash));
}

template <class Model>
Model load_model(const std::filesystem::path& path) {
  return model_from_json<Model>(read_json(path));
}

/// "sgfnn" or "sfml".
inline std::string checkpoint_kind(const std::filesystem::path& path) {
  return read_json(path).at("model").get<std::string>();
}

// ---- training and evaluation tables ----

inline void write_loss_history(const std::filesystem::path& path, const std::vector<LossRecord>& history) {
  std::string csv = "epoch,batch,loss_mse,loss_dist,loss_moment,loss_total\n";
  for (const auto& r : history) {
    csv += std::to_string(r.epoch) + ',' + std::to_string(r.batch) + ',' + format_double(r.loss.mse) + ',' +
           format_double(r.loss.distance) + ',' + format_double(r.loss.moment) + ',' + format_double(r.loss.total) +
           '\n';
  }
  write_text(path, csv);
}

/// t,mean_p,mean_q,std_p,std_q,second_moment (one mean/std column per coordinate for d > 1).
inline void write_timeseries(const std::filesystem::path& path, const EnsembleStats& st) {
  const int d = st.dim();
  auto names = [d](const char* prefix, char pq) {
    std::string s;
    for (int i = 0; i < d; ++i) s += std::string(",") + prefix + pq + (d > 1 ? std::to_string(i) : "");
    return s;
  };
  std::string csv = "t" + names("mean_", 'p') + names("mean_", 'q') + names("std_", 'p') + names("std_", 'q') +
                    ",second_moment\n";
  for (long j = 0; j < st.size(); ++j) {
    csv += format_double(st.times[j]);
    for (Eigen::Index k = 0; k < st.mean.cols(); ++k) csv += ',' + format_double(st.mean(j, k));
    for (Eigen::Index k = 0; k < st.stddev.cols(); ++k) csv += ',' + format_double(st.stddev(j, k));
    csv += ',' + format_double(st.second_moment[j]) + '\n';
  }
  write_text(path, csv);
}

/// Long-format density table: component,x,kde_predicted,kde_truth (standardised grid).
inline void write_density_table(const std::filesystem::path& path, const std::vector<ComponentDensity>& dens) {
  std::string csv = "component,x,kde_predicted,kde_truth\n";
  for (std::size_t c = 0; c < dens.size(); ++c) {
    const auto& d = dens[c];
    for (Eigen::Index g = 0; g < d.grid.size(); ++g)
      csv += std::to_string(c) + ',' + format_double(d.grid[g]) + ',' + format_double(d.kde_predicted[g]) + ',' +
             format_double(d.kde_truth[g]) + '\n';
  }
  write_text(path, csv);
}

/// component,source,bin_lo,bin_hi,count for the raw-coordinate histograms.
inline void write_histogram_table(const std::filesystem::path& path, const std::vector<ComponentDensity>& dens) {
  std::string csv = "component,source,bin_lo,bin_hi,count\n";
  auto rows = [&csv](std::size_t c, const char* source, const Histogram& h) {
    const double w = h.bin_width();
    for (std::size_t b = 0; b < h.counts.size(); ++b)
      csv += std::to_string(c) + ',' + source + ',' + format_double(h.lo + w * b) + ',' +
             format_double(h.lo + w * (b + 1)) + ',' + std::to_string(h.counts[b]) + '\n';
  };
  for (std::size_t c = 0; c < dens.size(); ++c) {
    rows(c, "predicted", dens[c].hist_predicted);
    rows(c, "truth", dens[c].hist_truth);
  }
  write_text(path, csv);
}

/// dim,bin_lo,bin_hi,count for latent histograms.
inline void write_latent_histograms(const std::filesystem::path& path, const LatentReport& rep) {
  std::string csv = "dim,bin_lo,bin_hi,count\n";
  for (std::size_t k = 0; k < rep.dims.size(); ++k) {
    const auto& h = rep.dims[k].hist;
    const double w = h.bin_width();
    for (std::size_t b = 0; b < h.counts.size(); ++b)
      csv += std::to_string(k) + ',' + format_double(h.lo + w * b) + ',' + format_double(h.lo + w * (b + 1)) + ',' +
             std::to_string(h.counts[b]) + '\n';
  }
  write_text(path, csv);
}

inline json latent_report_to_json(const LatentReport& rep) {
  json dims = json::array();
  for (const auto& d : rep.dims) {
    json jd = {{"mean", d.mean},
               {"std", d.stddev},
               {"central_moments", std::vector<double>(d.central_moments.begin(), d.central_moments.end())},
               {"kde_distance", d.kde_distance}};
    // NaN is not representable in JSON
    jd["excess_kurtosis"] = std::isfinite(d.excess_kurtosis) ? json(d.excess_kurtosis) : json(nullptr);
    dims.push_back(jd);
  }
  json corr = json::array();
  for (const auto& [jk, rho] : rep.correlations) corr.push_back({{"j", jk.first}, {"k", jk.second}, {"rho", rho}});
  return {{"dims", dims}, {"correlations", corr}, {"max_abs_correlation", rep.max_abs_correlation()}};
}

}  // namespace sgfnn::io
