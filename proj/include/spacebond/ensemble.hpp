#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "spacebond/neural.hpp"

namespace spacebond {

/// Mixture of projectors: the members' outputs are mean-pooled, then
/// renormalized.
struct ProjectorEnsemble {
  std::vector<nn::Projector<float>> members;
  std::vector<std::string> tags;

  std::size_t size() const { return members.size(); }
  std::size_t d_in() const { return members.front().d_in(); }
  std::size_t d_out() const { return members.front().d_out(); }

  void validate() const {
    if (members.empty()) throw SpaceBondError("empty projector ensemble");
    if (tags.size() != members.size()) throw SpaceBondError("ensemble tag count mismatch");
    for (const auto& p : members) {
      if (p.d_in() != d_in() || p.d_out() != d_out()) {
        throw SpaceBondError("ensemble members disagree on (d_in, d_out)");
      }
    }
  }

  Matrix apply(const Matrix& x) const {
    validate();
    if (x.cols() != d_in()) {
      throw SpaceBondError("ensemble_apply: input has " + std::to_string(x.cols()) + " columns, expected " +
                           std::to_string(d_in()));
    }
    if (members.size() == 1) return members.front().forward(x);
    BasicMatrix<double> acc(x.rows(), d_out());
    for (const auto& p : members) {
      const Matrix y = p.forward(x);
      auto a = acc.flat();
      auto s = y.flat();
      for (std::size_t k = 0; k < a.size(); ++k) a[k] += s[k];
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    for (double& v : acc.flat()) v *= inv;
    return normalized_rows(acc).cast<float>();
  }

  /// Single-member ensemble, for per-projector ablations.
  ProjectorEnsemble only(std::size_t i) const {
    return ProjectorEnsemble{{members.at(i)}, {tags.at(i)}};
  }
};

inline Matrix ensemble_apply(const ProjectorEnsemble& e, const Matrix& x) { return e.apply(x); }

/// A trained bond: the ensemble plus where it maps from and to.
/// Displacement maps unified → expert geometry; combination maps
/// expert → unified geometry.
struct BondArtifact {
  nn::LossKind kind = nn::LossKind::displacement;
  ProjectorEnsemble ensemble;
  std::string source_space;
  std::string target_space;
  std::vector<std::vector<double>> epoch_losses;  // per member

  std::string direction() const { return source_space + "->" + target_space; }

  /// Name of the expert space this bond brings in.
  const std::string& expert() const {
    return kind == nn::LossKind::displacement ? target_space : source_space;
  }
};

inline void save_bond(const BondArtifact& bond, const std::filesystem::path& dir) {
  bond.ensemble.validate();
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["kind"] = std::string(nn::to_string(bond.kind));
  manifest["direction"] = bond.direction();
  manifest["source_space"] = bond.source_space;
  manifest["target_space"] = bond.target_space;
  manifest["d_in"] = bond.ensemble.d_in();
  manifest["d_out"] = bond.ensemble.d_out();
  manifest["projectors"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < bond.ensemble.size(); ++i) {
    const std::string file = "psi_" + bond.ensemble.tags[i] + ".prj";
    nn::save_projector(bond.ensemble.members[i], dir / file);
    nlohmann::ordered_json entry;
    entry["subset"] = bond.ensemble.tags[i];
    entry["file"] = file;
    if (i < bond.epoch_losses.size()) entry["epoch_losses"] = bond.epoch_losses[i];
    manifest["projectors"].push_back(entry);
  }
  io::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline BondArtifact load_bond(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw SpaceBondError(path.string() + ": bond artifact not found");
  BondArtifact bond;
  try {
    const auto manifest = nlohmann::json::parse(io::read_file(path));
    const auto kind = manifest.at("kind").get<std::string>();
    if (kind == "displacement") bond.kind = nn::LossKind::displacement;
    else if (kind == "combination") bond.kind = nn::LossKind::combination;
    else throw SpaceBondError(path.string() + ": unknown bond kind '" + kind + "'");
    bond.source_space = manifest.at("source_space").get<std::string>();
    bond.target_space = manifest.at("target_space").get<std::string>();
    for (const auto& entry : manifest.at("projectors")) {
      bond.ensemble.tags.push_back(entry.at("subset").get<std::string>());
      bond.ensemble.members.push_back(nn::load_projector(dir / entry.at("file").get<std::string>()));
      bond.epoch_losses.push_back(entry.value("epoch_losses", std::vector<double>{}));
    }
  } catch (const nlohmann::json::exception& e) {
    throw SpaceBondError(path.string() + ": malformed bond manifest: " + e.what());
  }
  bond.ensemble.validate();
  return bond;
}

}  // namespace spacebond
