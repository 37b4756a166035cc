#pragma once

#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spacebond/embedding_store.hpp"
#include "spacebond/rng.hpp"

namespace spacebond::synth {

/// Ground-truth concepts shared by every realized space.
struct LatentWorld {
  Matrix latents;  // N×k, unit rows
  std::vector<std::string> ids;
  std::uint64_t seed = 0;

  std::size_t n() const noexcept { return latents.rows(); }
  std::size_t k() const noexcept { return latents.cols(); }
};

struct SpaceSpec {
  std::string name;
  std::size_t dim = 0;
  std::map<Modality, double> noise_sigma;  // per-coordinate noise std before renormalizing
  std::uint64_t seed = 0;
};

inline std::string item_id(std::size_t i) {
  std::ostringstream os;
  os << "item" << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

inline LatentWorld generate_world(std::size_t n_items, std::size_t k, std::uint64_t seed) {
  if (n_items < 2) throw SpaceBondError("generate_world: n_items must be >= 2");
  if (k < 2) throw SpaceBondError("generate_world: k must be >= 2");
  LatentWorld world{Matrix(n_items, k), {}, seed};
  world.ids.reserve(n_items);
  Rng rng(derive_seed(seed, fnv1a("latents")));
  for (std::size_t i = 0; i < n_items; ++i) {
    auto r = world.latents.row(i);
    double sq = 0.0;
    std::vector<double> tmp(k);
    do {
      sq = 0.0;
      for (auto& v : tmp) {
        v = rng.normal();
        sq += v * v;
      }
    } while (sq == 0.0);
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t j = 0; j < k; ++j) r[j] = static_cast<float>(tmp[j] * inv);
    world.ids.push_back(item_id(i));
  }
  return world;
}

/// dim×k matrix with orthonormal columns (Gram-Schmidt on Gaussian columns).
inline BasicMatrix<double> orthonormal_columns(std::size_t dim, std::size_t k, std::uint64_t seed) {
  if (dim < k) throw SpaceBondError("orthonormal_columns: dim < k");
  Rng rng(seed);
  BasicMatrix<double> q(dim, k);
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> v(dim);
    double norm = 0.0;
    while (norm < 1e-8) {
      for (auto& x : v) x = rng.normal();
      // Two passes of modified Gram-Schmidt for numerical orthogonality.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t p = 0; p < c; ++p) {
          double dot = 0.0;
          for (std::size_t r = 0; r < dim; ++r) dot += q(r, p) * v[r];
          for (std::size_t r = 0; r < dim; ++r) v[r] -= dot * q(r, p);
        }
      }
      norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
    }
    for (std::size_t r = 0; r < dim; ++r) q(r, c) = v[r] / norm;
  }
  return q;
}

/// embedding_i = normalize(R · latent_i + noise), R shared by all of the
/// space's modalities, noise drawn per (space seed, modality, row).
inline SpaceBundle realize_space(const LatentWorld& world, const SpaceSpec& spec) {
  if (spec.dim < world.k()) {
    throw SpaceBondError("realize_space: space '" + spec.name + "' dim " + std::to_string(spec.dim) +
                         " < latent k " + std::to_string(world.k()));
  }
  if (spec.noise_sigma.empty()) throw SpaceBondError("space has no modalities");
  const auto rotation = orthonormal_columns(spec.dim, world.k(), derive_seed(spec.seed, fnv1a("rotation")));

  // Signal part is shared by all modalities.
  BasicMatrix<double> signal(world.n(), spec.dim);
  std::vector<double> z(world.k());
  for (std::size_t i = 0; i < world.n(); ++i) {
    const auto latent = world.latents.row(i);
    for (std::size_t c = 0; c < world.k(); ++c) z[c] = latent[c];
    for (std::size_t r = 0; r < spec.dim; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < world.k(); ++c) acc += rotation(r, c) * z[c];
      signal(i, r) = acc;
    }
  }

  SpaceBundle space{spec.name, spec.dim, {}};
  for (const auto& [m, sigma] : spec.noise_sigma) {
    if (!(sigma >= 0.0)) throw SpaceBondError("realize_space: noise_sigma must be >= 0");
    Matrix out(world.n(), spec.dim);
    std::vector<double> row(spec.dim);
    for (std::size_t i = 0; i < world.n(); ++i) {
      Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(m) + 1, i));
      double sq = 0.0;
      for (std::size_t r = 0; r < spec.dim; ++r) {
        row[r] = signal(i, r) + (sigma > 0.0 ? sigma * rng.normal() : 0.0);
        sq += row[r] * row[r];
      }
      const double inv = 1.0 / std::sqrt(sq);
      for (std::size_t r = 0; r < spec.dim; ++r) out(i, r) = static_cast<float>(row[r] * inv);
    }
    space.modalities.emplace(m, EmbeddingMatrix(world.ids, std::move(out), spec.name));
  }
  space.validate();
  return space;
}

}  // namespace spacebond::synth
