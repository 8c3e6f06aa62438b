#pragma once

#include <map>
#include <string>
#include <utility>

#include "nmfg/factormer.hpp"
#include "nmfg/rng.hpp"
#include "nmfg/serialize.hpp"

namespace nmfg {

// Model checkpoints are FMPK1 packs: every parameter tensor under its
// canonical name plus a "meta.config" vector pinning the architecture. The
// loader rebuilds the config first and validates every tensor's shape
// against it.

namespace detail {
constexpr double kCheckpointVersion = 1.0;

inline NamedTensors config_record(const ModelConfig& cfg, ModelKind kind) {
  DenseMatrix meta(1, 13);
  meta(0, 0) = kCheckpointVersion;
  meta(0, 1) = cfg.rank;
  meta(0, 2) = cfg.hidden;
  meta(0, 3) = cfg.n_heads;
  meta(0, 4) = cfg.n_rounds;
  meta(0, 5) = cfg.outer_iters;
  meta(0, 6) = cfg.inner_iters;
  meta(0, 7) = cfg.r_in(kind);
  meta(0, 8) = cfg.gamma;
  meta(0, 9) = cfg.rho;
  meta(0, 10) = cfg.ffn_dim();
  meta(0, 11) = cfg.paper_scale ? 1.0 : 0.0;
  meta(0, 12) = cfg.detach_solver ? 1.0 : 0.0;
  return {{"meta.config", std::move(meta)}};
}
}  // namespace detail

struct Checkpoint {
  NFactormerParams params;
  ModelConfig config;
  ModelKind kind = ModelKind::kInit;
};

inline void save_checkpoint(const std::string& path, const NFactormerParams& params,
                            const ModelConfig& cfg, ModelKind kind) {
  NamedTensors tensors = detail::config_record(cfg, kind);
  for_each_param(params, [&](const std::string& name, const DenseMatrix& m) {
    tensors.emplace_back(name, m);
  });
  save_named_tensors(path, tensors);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const NamedTensors tensors = load_named_tensors(path);
  std::map<std::string, const DenseMatrix*> by_name;
  for (const auto& [name, m] : tensors) {
    if (!by_name.emplace(name, &m).second) {
      throw FormatError(path + ": duplicate parameter " + name);
    }
  }

  const auto meta_it = by_name.find("meta.config");
  if (meta_it == by_name.end() || meta_it->second->size() < 13) {
    throw FormatError(path + ": missing or short meta.config record");
  }
  const DenseMatrix& meta = *meta_it->second;
  if (meta(0, 0) != detail::kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version");
  }
  Checkpoint ckpt;
  ModelConfig& cfg = ckpt.config;
  cfg.rank = static_cast<int>(meta(0, 1));
  cfg.hidden = static_cast<int>(meta(0, 2));
  cfg.n_heads = static_cast<int>(meta(0, 3));
  cfg.n_rounds = static_cast<int>(meta(0, 4));
  cfg.outer_iters = static_cast<int>(meta(0, 5));
  cfg.inner_iters = static_cast<int>(meta(0, 6));
  const int r_in = static_cast<int>(meta(0, 7));
  cfg.gamma = meta(0, 8);
  cfg.rho = meta(0, 9);
  cfg.d_ff = static_cast<int>(meta(0, 10));
  cfg.paper_scale = meta(0, 11) != 0.0;
  cfg.detach_solver = meta(0, 12) != 0.0;
  cfg.validate();
  if (r_in == cfg.rank) {
    ckpt.kind = ModelKind::kInit;
  } else if (r_in == 2 * cfg.rank) {
    ckpt.kind = ModelKind::kAccel;
  } else {
    throw FormatError(path + ": embed input dim " + std::to_string(r_in) +
                      " matches neither rank nor 2*rank");
  }
  by_name.erase(meta_it);

  Rng scratch(0);
  ckpt.params = make_nfactormer_params(cfg, ckpt.kind, scratch);
  std::size_t assigned = 0;
  for_each_param(ckpt.params, [&](const std::string& name, DenseMatrix& m) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw FormatError(path + ": missing parameter " + name);
    }
    if (!it->second->same_shape(m)) {
      throw FormatError(path + ": shape mismatch for " + name + ": expected " +
                        std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                        ", found " + std::to_string(it->second->rows()) + "x" +
                        std::to_string(it->second->cols()));
    }
    m = *it->second;
    ++assigned;
  });
  if (assigned != by_name.size()) {
    for (const auto& [name, m] : by_name) {
      bool known = false;
      for_each_param(ckpt.params, [&](const std::string& pname, DenseMatrix&) {
        if (pname == name) known = true;
      });
      if (!known) throw FormatError(path + ": unknown parameter name " + name);
    }
  }
  return ckpt;
}

}  // namespace nmfg
