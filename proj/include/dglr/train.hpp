#pragma once

// Training loop, config/manifest parsing and model files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dglr/checkpoint.hpp"
#include "dglr/glrnet.hpp"
#include "dglr/image.hpp"
#include "dglr/model.hpp"
#include "dglr/noise.hpp"
#include "dglr/params.hpp"

namespace dglr::train {

inline const std::vector<double> kDefaultLrValues = {1e-3, 0.5e-3, 0.1e-3,
                                                     0.05e-3, 0.01e-3, 0.005e-3};
inline const std::vector<std::size_t> kDefaultLrEpochs = {2, 5, 20, 50, 150};

struct TrainConfig {
  double sigma_min = 25.0;  // equal bounds = fixed noise level
  double sigma_max = 25.0;
  std::size_t epochs = 200;
  std::size_t batch_size = 4;
  std::vector<double> lr_values = kDefaultLrValues;
  std::vector<std::size_t> lr_epochs = kDefaultLrEpochs;
  std::uint64_t seed = 0;
  glrnet::CascadeConfig cascade{};
  model::NetworkWidths widths{};

  bool blind() const { return sigma_min != sigma_max; }

  void validate() const {
    cascade.validate();
    if (!(sigma_min >= 0.0) || !(sigma_max >= sigma_min)) {
      throw ConfigError("noise range must satisfy 0 <= sigma_min <= sigma_max");
    }
    if (epochs == 0) throw ConfigError("epochs must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (lr_values.size() != lr_epochs.size() + 1) {
      throw ConfigError("lr_schedule needs exactly one more value than lr_epochs (" +
                        std::to_string(lr_values.size()) + " values, " +
                        std::to_string(lr_epochs.size()) + " boundaries)");
    }
    if (!std::is_sorted(lr_epochs.begin(), lr_epochs.end())) {
      throw ConfigError("lr_epochs must be nondecreasing");
    }
    for (double v : lr_values) {
      if (!(v >= 0.0)) throw ConfigError("learning rates must be >= 0");
    }
  }
};

// Learning rate for 1-indexed epoch e: values[number of boundaries <= e].
inline double lr_for_epoch(const TrainConfig& cfg, std::size_t epoch) {
  const auto n = static_cast<std::size_t>(
      std::upper_bound(cfg.lr_epochs.begin(), cfg.lr_epochs.end(), epoch) -
      cfg.lr_epochs.begin());
  return cfg.lr_values[n];
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

inline std::size_t to_count(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d < 0.0 || d != std::floor(d)) {
    throw ConfigError("config: '" + key + "' expects a nonnegative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(d);
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace detail

// key=value lines; '#' starts a comment. Unknown keys are errors.
inline TrainConfig parse_train_config(std::istream& is, const std::string& source = "config") {
  TrainConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  bool has_sigma = false, has_range = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    try {
      if (key == "sigma") {
        cfg.sigma_min = cfg.sigma_max = detail::to_double(key, val);
        has_sigma = true;
      } else if (key == "sigma_min") {
        cfg.sigma_min = detail::to_double(key, val);
        has_range = true;
      } else if (key == "sigma_max") {
        cfg.sigma_max = detail::to_double(key, val);
        has_range = true;
      } else if (key == "cascades") {
        cfg.cascade.cascades = detail::to_count(key, val);
      } else if (key == "epochs") {
        cfg.epochs = detail::to_count(key, val);
      } else if (key == "batch_size") {
        cfg.batch_size = detail::to_count(key, val);
      } else if (key == "lr_schedule") {
        cfg.lr_values.clear();
        for (const auto& s : detail::split_list(val)) {
          cfg.lr_values.push_back(detail::to_double(key, s));
        }
      } else if (key == "lr_epochs") {
        cfg.lr_epochs.clear();
        if (!val.empty()) {
          for (const auto& s : detail::split_list(val)) {
            cfg.lr_epochs.push_back(detail::to_count(key, s));
          }
        }
      } else if (key == "kappa_max") {
        cfg.cascade.kappa_max = detail::to_double(key, val);
      } else if (key == "patch") {
        cfg.cascade.patch = detail::to_count(key, val);
      } else if (key == "stride") {
        cfg.cascade.stride = detail::to_count(key, val);
      } else if (key == "exemplars") {
        cfg.cascade.exemplars = detail::to_count(key, val);
      } else if (key == "seed") {
        cfg.seed = static_cast<std::uint64_t>(detail::to_count(key, val));
      } else if (key == "mode") {
        if (val == "learned") cfg.cascade.mode = glrnet::ExemplarMode::learned;
        else if (val == "classic") cfg.cascade.mode = glrnet::ExemplarMode::classic;
        else throw ConfigError("config: mode must be learned or classic, got '" + val + "'");
      } else if (key == "mu") {
        cfg.cascade.classic_mu = detail::to_double(key, val);
      } else if (key == "epsilon2x") {
        cfg.cascade.classic_two_eps_sq = detail::to_double(key, val);
      } else {
        throw ConfigError("config: unknown key '" + key + "'");
      }
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (has_sigma && has_range) {
    throw ConfigError(source + ": give either sigma or sigma_min/sigma_max, not both");
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config '" + path + "'");
  return parse_train_config(is, path);
}

// One path per line, relative to the manifest's directory. Blank lines and
// '#' comments are skipped.
inline std::vector<image::ImagePlane> load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open manifest '" + path + "'");
  const auto base = std::filesystem::path(path).parent_path();
  std::vector<image::ImagePlane> out;
  std::string line;
  while (std::getline(is, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::filesystem::path p(line);
    if (p.is_relative()) p = base / p;
    out.push_back(image::load_image(p.string()));
  }
  if (out.empty()) throw DataError("manifest '" + path + "' lists no images");
  return out;
}

// Top-left crop to multiples of 4, which the exemplar net requires.
inline image::ImagePlane crop_to_multiple_of_4(const image::ImagePlane& p) {
  const std::size_t h = p.height / 4 * 4, w = p.width / 4 * 4;
  if (h == p.height && w == p.width) return p;
  image::ImagePlane out(h, w, p.channels);
  out.provenance = p.provenance;
  for (std::size_t c = 0; c < p.channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = p.at(c, y, x);
    }
  }
  return out;
}

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

inline std::string format_epoch(const EpochLog& e) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "epoch %zu loss %.10e lr %.6g", e.epoch, e.loss, e.lr);
  return buf;
}

struct TrainResult {
  model::ModelParams model;
  AdamState adam;
  std::vector<EpochLog> log;
};

inline model::ModelShape model_shape_for(const TrainConfig& cfg, std::size_t channels) {
  model::ModelShape s;
  s.channels = channels;
  s.exemplars = cfg.cascade.exemplars;
  s.patch = cfg.cascade.patch;
  s.widths = cfg.widths;
  return s;
}

// Mini-batch Adam on the final-stage MSE. Each image is its own tape; the
// loss is divided by the batch size so accumulated gradients are batch
// means.
inline TrainResult train(const std::vector<image::ImagePlane>& dataset, const TrainConfig& cfg,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  if (cfg.cascade.mode != glrnet::ExemplarMode::learned) {
    throw ConfigError("classic mode has no trainable parameters; use denoise --classic");
  }
  if (dataset.empty()) throw DataError("training set is empty");
  std::vector<image::ImagePlane> images;
  for (const auto& img : dataset) {
    images.push_back(crop_to_multiple_of_4(img));
    if (images.back().channels != images.front().channels) {
      throw DataError("training images mix channel counts ('" + img.provenance + "')");
    }
    if (images.back().height < cfg.cascade.patch || images.back().width < cfg.cascade.patch) {
      throw SizingError("training image '" + img.provenance + "' is smaller than the patch");
    }
  }

  TrainResult res{model::ModelParams(model_shape_for(cfg, images.front().channels), cfg.seed),
                  AdamState{}, {}};
  Rng rng(cfg.seed ^ 0x5851F42D4C957F2DULL);
  std::vector<std::size_t> order(images.size());

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    res.adam.learning_rate = lr_for_epoch(cfg, epoch);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(stop - start);
      res.model.params().zero_grad();
      for (std::size_t b = start; b < stop; ++b) {
        const image::ImagePlane& clean = images[order[b]];
        const double sigma =
            cfg.blind() ? rng.uniform(cfg.sigma_min, cfg.sigma_max) : cfg.sigma_min;
        const auto noisy = noise::add_awgn(clean, {sigma, rng.next_u64()});
        Tape tape;
        auto out = glrnet::cascade_forward(tape, make_var(noisy.to_tensor()), &res.model,
                                           cfg.cascade);
        Var loss = glrnet::loss_mse(tape, clean.to_tensor(), out.output);
        const double l = loss->value[0];
        if (!std::isfinite(l)) {
          std::ostringstream os;
          os << "non-finite loss at epoch " << epoch << ", image '" << clean.provenance
             << "' (sigma " << sigma << ")";
          for (std::size_t t = 0; t < out.blocks.size(); ++t) {
            const auto& s = out.blocks[t];
            const double mu_max =
                s.mu.empty() ? 0.0 : *std::max_element(s.mu.begin(), s.mu.end());
            os << "; block " << t + 1 << ": max mu " << mu_max << ", clamped "
               << s.clamped << "/" << s.patches << ", max cg iters " << s.max_iterations;
          }
          throw Error(os.str());
        }
        loss_sum += l;
        tape.backward(ops::scale(tape, loss, inv_batch));
      }
      adam_update(res.model.params(), res.adam);
    }
    EpochLog e{epoch, loss_sum / static_cast<double>(images.size()), res.adam.learning_rate};
    res.log.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  return res;
}

// Model files: parameters plus "meta/" records describing the network and
// the cascade, and optionally the optimizer state.
inline const std::string kMetaPrefix = "meta/";

struct LoadedModel {
  model::ModelParams model;
  glrnet::CascadeConfig cascade;
};

inline void save_model(const std::string& path, const model::ModelParams& m,
                       const glrnet::CascadeConfig& cascade, const AdamState* adam = nullptr) {
  auto records = checkpoint::param_records(m.params());
  const auto& s = m.shape();
  const auto& w = s.widths;
  auto scalar = [&](const std::string& name, double v) {
    records.push_back({kMetaPrefix + name, Tensor({1}, v)});
  };
  scalar("channels", static_cast<double>(s.channels));
  scalar("exemplars", static_cast<double>(s.exemplars));
  scalar("patch", static_cast<double>(cascade.patch));
  scalar("stride", static_cast<double>(cascade.stride));
  scalar("cascades", static_cast<double>(cascade.cascades));
  scalar("kappa_max", cascade.kappa_max);
  records.push_back(
      {kMetaPrefix + "widths",
       Tensor({7}, std::vector<double>{double(w.exemplar1), double(w.exemplar2),
                                       double(w.exemplar3), double(w.prefilter),
                                       double(w.mu1), double(w.mu2), double(w.mu_hidden)})});
  if (adam) {
    const auto opt = checkpoint::adam_records(*adam);
    records.insert(records.end(), opt.begin(), opt.end());
  }
  checkpoint::save(path, records);
}

inline LoadedModel load_model(const std::string& path) {
  const auto records = checkpoint::load(path);
  std::map<std::string, const Tensor*> meta;
  for (const auto& r : records) {
    if (r.name.rfind(kMetaPrefix, 0) == 0) meta[r.name.substr(kMetaPrefix.size())] = &r.tensor;
  }
  auto get = [&](const std::string& key, std::size_t n = 1) -> const Tensor& {
    auto it = meta.find(key);
    if (it == meta.end() || it->second->size() != n) {
      throw FormatError("model '" + path + "': missing or malformed meta/" + key);
    }
    return *it->second;
  };
  model::ModelShape shape;
  shape.channels = static_cast<std::size_t>(get("channels")[0]);
  shape.exemplars = static_cast<std::size_t>(get("exemplars")[0]);
  shape.patch = static_cast<std::size_t>(get("patch")[0]);
  const Tensor& w = get("widths", 7);
  shape.widths = {static_cast<std::size_t>(w[0]), static_cast<std::size_t>(w[1]),
                  static_cast<std::size_t>(w[2]), static_cast<std::size_t>(w[3]),
                  static_cast<std::size_t>(w[4]), static_cast<std::size_t>(w[5]),
                  static_cast<std::size_t>(w[6])};
  LoadedModel out{model::ModelParams(shape, 0, model::Init::zeros), {}};
  checkpoint::restore_params(out.model.params(), records);
  out.cascade.patch = shape.patch;
  out.cascade.exemplars = shape.exemplars;
  out.cascade.stride = static_cast<std::size_t>(get("stride")[0]);
  out.cascade.cascades = static_cast<std::size_t>(get("cascades")[0]);
  out.cascade.kappa_max = get("kappa_max")[0];
  out.cascade.validate();
  return out;
}

}  // namespace dglr::train
