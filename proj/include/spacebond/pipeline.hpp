#pragma once

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spacebond/bonds.hpp"
#include "spacebond/evaluation.hpp"
#include "spacebond/sweep.hpp"
#include "spacebond/synthetic.hpp"

namespace spacebond::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// Seed scheme: every stage seed is derive_seed(global, fnv1a(stage tag)),
// and sub-stages derive from their stage seed the same way:
//   world          derive(global, "world")
//   space <name>   derive(global, "space", fnv1a(name))
//   split, tasks   derive(global, "split"), derive(global, "tasks")
//   bonds          derive(global, "bonds") unless train.seed is given,
//                  then per expert derive(bonds, fnv1a(expert name)),
//                  per projector derive(bond, "projector", fnv1a(subset)).

struct SynthSpace {
  std::string name;
  std::size_t dim = 0;
  std::map<Modality, double> noise;
};

struct SynthConfig {
  std::size_t n_items = 2000;
  std::size_t k = 64;
  double test_fraction = 0.25;
  std::size_t n_classes = 10;
  std::vector<SynthSpace> spaces;
};

struct BondEntry {
  nn::LossKind kind = nn::LossKind::combination;
  std::string expert;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::optional<SynthConfig> synth;
  std::map<std::string, std::string> space_paths;  // explicit space directories, otherwise <out>/spaces/<name>
  std::string unified = "unified";
  std::vector<BondEntry> bonds;
  CollectionConfig collection;
  nn::TrainConfig train;
  std::optional<std::uint64_t> train_seed;
  std::size_t epochs_displacement = 5;
  std::size_t epochs_combination = 20;
  std::vector<std::string> subsets;
  CombiningFactors factors{0.9, 0.9, 0.0, 0.0};
  bool normalize_channels = true;
  std::vector<double> sweep_x = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> sweep_y = {0.0, 0.25, 0.5, 0.75, 1.0};
  SweepAxes sweep_axes = SweepAxes::sigma;

  std::optional<BondEntry> displacement() const {
    std::optional<BondEntry> d;
    for (const auto& b : bonds) {
      if (b.kind == nn::LossKind::displacement) {
        if (d) throw SpaceBondError("config: at most one displacement bond is supported");
        d = b;
      }
    }
    return d;
  }

  std::vector<std::string> combination_experts() const {
    std::vector<std::string> out;
    for (const auto& b : bonds) {
      if (b.kind == nn::LossKind::combination) out.push_back(b.expert);
    }
    return out;
  }

  std::uint64_t bond_seed() const { return train_seed ? *train_seed : derive_seed(seed, fnv1a("bonds")); }

  BondConfig bond_config(nn::LossKind kind) const {
    BondConfig c{collection, train, subsets};
    c.train.epochs = kind == nn::LossKind::displacement ? epochs_displacement : epochs_combination;
    c.train.batch_size = collection.batch_size;
    c.train.seed = bond_seed();
    return c;
  }

  void validate() const {
    if (bonds.empty() && !synth) throw SpaceBondError("config: nothing to do (no synth section and no bonds)");
    displacement();
    std::set<std::string> seen;
    for (const auto& b : bonds) {
      if (b.expert == unified) throw SpaceBondError("config: bond expert cannot be the unified space");
      if (!seen.insert(b.expert).second) throw SpaceBondError("config: expert '" + b.expert + "' bonded twice");
    }
    if (synth) {
      std::set<std::string> names;
      for (const auto& s : synth->spaces) {
        if (!names.insert(s.name).second) throw SpaceBondError("config: duplicate synthetic space '" + s.name + "'");
        if (s.dim < synth->k) throw SpaceBondError("config: space '" + s.name + "' dim < k");
      }
      if (!(synth->test_fraction > 0.0 && synth->test_fraction < 1.0)) {
        throw SpaceBondError("config: synth.test_fraction must be in (0, 1)");
      }
    }
    factors.validate();
    train.validate();
    if (!(collection.temperature > 0.0)) throw SpaceBondError("config: bond.temperature must be > 0");
  }

  /// The standard desk-scale configuration.
  static PipelineConfig standard() {
    PipelineConfig c;
    SynthConfig s;
    s.spaces = {
        {"unified", 96, {{Modality::audio, 0.45}, {Modality::image, 0.30}, {Modality::text, 0.30}}},
        {"vt", 64, {{Modality::image, 0.12}, {Modality::text, 0.12}}},
        {"at", 80, {{Modality::audio, 0.10}, {Modality::text, 0.22}}},
    };
    c.synth = s;
    c.bonds = {{nn::LossKind::displacement, "vt"}, {nn::LossKind::combination, "at"}};
    return c;
  }
};

// ---------------------------------------------------------------------------
// JSON <-> config.

inline std::vector<Modality> parse_modalities(const nlohmann::json& j) {
  std::vector<Modality> out;
  for (const auto& m : j) out.push_back(parse_modality(m.get<std::string>()));
  return out;
}

inline PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  c.synth.reset();
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      SynthConfig sc;
      sc.n_items = s.value("n_items", sc.n_items);
      sc.k = s.value("k", sc.k);
      sc.test_fraction = s.value("test_fraction", sc.test_fraction);
      sc.n_classes = s.value("n_classes", sc.n_classes);
      for (const auto& sp : s.at("spaces")) {
        SynthSpace ss{sp.at("name").get<std::string>(), sp.at("dim").get<std::size_t>(), {}};
        for (const auto& [m, v] : sp.at("noise").items()) ss.noise[parse_modality(m)] = v.get<double>();
        sc.spaces.push_back(ss);
      }
      c.synth = sc;
    }
    if (j.contains("spaces")) {
      for (const auto& [name, path] : j.at("spaces").items()) c.space_paths[name] = path.get<std::string>();
    }
    c.unified = j.value("unified", c.unified);
    if (j.contains("bonds")) {
      for (const auto& b : j.at("bonds")) {
        const auto kind = b.at("kind").get<std::string>();
        BondEntry e;
        if (kind == "displacement") e.kind = nn::LossKind::displacement;
        else if (kind == "combination") e.kind = nn::LossKind::combination;
        else throw SpaceBondError("config: unknown bond kind '" + kind + "'");
        e.expert = b.at("expert").get<std::string>();
        c.bonds.push_back(e);
      }
    }
    if (j.contains("bond")) {
      const auto& b = j.at("bond");
      c.collection.temperature = b.value("temperature", c.collection.temperature);
      c.collection.pool_size = b.value("pool_size", c.collection.pool_size);
      c.collection.batch_size = b.value("batch_size", c.collection.batch_size);
      if (b.contains("anchors")) c.collection.anchors = parse_modalities(b.at("anchors"));
      if (b.contains("subsets")) c.subsets = b.at("subsets").get<std::vector<std::string>>();
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.train.learning_rate = t.value("lr", c.train.learning_rate);
      if (t.contains("epochs")) c.epochs_displacement = c.epochs_combination = t.at("epochs").get<std::size_t>();
      c.epochs_displacement = t.value("epochs_displacement", c.epochs_displacement);
      c.epochs_combination = t.value("epochs_combination", c.epochs_combination);
      if (t.contains("batch_size")) {
        const auto bs = t.at("batch_size").get<std::size_t>();
        if (j.contains("bond") && j.at("bond").contains("batch_size") && bs != c.collection.batch_size) {
          throw SpaceBondError("config: train.batch_size and bond.batch_size disagree");
        }
        c.collection.batch_size = bs;
      }
      c.train.infonce_temperature = t.value("tau_infonce", c.train.infonce_temperature);
      c.train.hidden = t.value("hidden", c.train.hidden);
      if (t.contains("seed")) c.train_seed = t.at("seed").get<std::uint64_t>();
    }
    if (j.contains("factors")) {
      const auto& f = j.at("factors");
      if (f.contains("preset")) {
        c.factors = CombiningFactors::preset(f.at("preset").get<std::string>(), c.factors.lambda_v, c.factors.lambda_t);
      }
      c.factors.lambda_v = f.value("lambda_v", c.factors.lambda_v);
      c.factors.lambda_t = f.value("lambda_t", c.factors.lambda_t);
      c.factors.sigma_a = f.value("sigma_a", c.factors.sigma_a);
      c.factors.sigma_t = f.value("sigma_t", c.factors.sigma_t);
      c.normalize_channels = f.value("normalize_channels", c.normalize_channels);
    }
    if (j.contains("sweep")) {
      const auto& s = j.at("sweep");
      const auto axes = s.value("axes", std::string("sigma"));
      if (axes == "sigma") c.sweep_axes = SweepAxes::sigma;
      else if (axes == "lambda") c.sweep_axes = SweepAxes::lambda;
      else throw SpaceBondError("config: sweep.axes must be sigma or lambda");
      c.sweep_x = s.value("x", c.sweep_x);
      c.sweep_y = s.value("y", c.sweep_y);
    }
  } catch (const nlohmann::json::exception& e) {
    throw SpaceBondError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline json config_to_json(const PipelineConfig& c) {
  json j;
  j["seed"] = c.seed;
  if (c.synth) {
    json s;
    s["n_items"] = c.synth->n_items;
    s["k"] = c.synth->k;
    s["test_fraction"] = c.synth->test_fraction;
    s["n_classes"] = c.synth->n_classes;
    s["spaces"] = json::array();
    for (const auto& sp : c.synth->spaces) {
      json e;
      e["name"] = sp.name;
      e["dim"] = sp.dim;
      for (const auto& [m, v] : sp.noise) e["noise"][std::string(to_string(m))] = v;
      s["spaces"].push_back(e);
    }
    j["synth"] = s;
  }
  j["spaces"] = json::object();
  for (const auto& [n, p] : c.space_paths) j["spaces"][n] = p;
  j["unified"] = c.unified;
  j["bonds"] = json::array();
  for (const auto& b : c.bonds) j["bonds"].push_back({{"kind", std::string(nn::to_string(b.kind))}, {"expert", b.expert}});
  j["bond"]["temperature"] = c.collection.temperature;
  j["bond"]["pool_size"] = c.collection.pool_size;
  j["bond"]["batch_size"] = c.collection.batch_size;
  j["bond"]["anchors"] = json::array();
  for (Modality m : c.collection.anchors) j["bond"]["anchors"].push_back(std::string(to_string(m)));
  j["bond"]["subsets"] = c.subsets.empty() ? all_subset_tags(c.collection.anchors) : c.subsets;
  j["train"]["lr"] = c.train.learning_rate;
  j["train"]["epochs_displacement"] = c.epochs_displacement;
  j["train"]["epochs_combination"] = c.epochs_combination;
  j["train"]["batch_size"] = c.collection.batch_size;
  j["train"]["tau_infonce"] = c.train.infonce_temperature;
  j["train"]["hidden"] = c.train.hidden;
  j["train"]["seed"] = c.bond_seed();
  j["train"]["adam"] = {{"beta1", c.train.beta1}, {"beta2", c.train.beta2}, {"epsilon", c.train.adam_epsilon}};
  j["factors"] = {{"lambda_v", c.factors.lambda_v}, {"lambda_t", c.factors.lambda_t},
                  {"sigma_a", c.factors.sigma_a}, {"sigma_t", c.factors.sigma_t},
                  {"normalize_channels", c.normalize_channels}};
  j["sweep"] = {{"axes", c.sweep_axes == SweepAxes::sigma ? "sigma" : "lambda"}, {"x", c.sweep_x}, {"y", c.sweep_y}};
  return j;
}

inline PipelineConfig load_config(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw SpaceBondError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

/// SPACEBOND_SEED, when set, replaces the config seed.
inline void apply_env_overrides(PipelineConfig& c) {
  if (const char* s = std::getenv("SPACEBOND_SEED"); s != nullptr && *s != '\0') {
    char* end = nullptr;
    const auto v = std::strtoull(s, &end, 10);
    if (end == nullptr || *end != '\0') throw SpaceBondError("SPACEBOND_SEED is not an unsigned integer");
    c.seed = v;
  }
}

inline void write_json(const fs::path& path, const json& j) { io::write_file(path, j.dump(2) + "\n"); }

inline json read_json(const fs::path& path) {
  try {
    return json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw SpaceBondError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Layout under --out.

struct Layout {
  fs::path root;
  fs::path spaces() const { return root / "spaces"; }
  fs::path split() const { return root / "spaces" / "split.json"; }
  fs::path tasks() const { return root / "spaces" / "tasks.json"; }
  fs::path bonds() const { return root / "bonds"; }
  fs::path bond(const std::string& expert) const { return root / "bonds" / expert; }
  fs::path reports() const { return root / "reports"; }
  fs::path fused() const { return root / "fused"; }
  fs::path sweep() const { return root / "sweep"; }
};

inline fs::path space_dir(const PipelineConfig& c, const Layout& l, const std::string& name) {
  auto it = c.space_paths.find(name);
  return it != c.space_paths.end() ? fs::path(it->second) : l.spaces() / name;
}

/// Replaces `path` with the contents built in a sibling temp directory, so
/// a failing stage leaves earlier outputs untouched.
template <typename Fn>
void write_atomically(const fs::path& path, Fn&& build) {
  const fs::path tmp = path.string() + ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  try {
    build(tmp);
  } catch (...) {
    fs::remove_all(tmp);
    throw;
  }
  fs::remove_all(path);
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// synth

inline std::vector<std::string> ids_of(const json& j) { return j.get<std::vector<std::string>>(); }

inline void cmd_synth(const PipelineConfig& c, const fs::path& out) {
  if (!c.synth) throw SpaceBondError("config has no synth section");
  const Layout l{out};
  fs::create_directories(out);
  const auto& sc = *c.synth;
  const auto world_seed = derive_seed(c.seed, fnv1a("world"));
  const auto world = synth::generate_world(sc.n_items, sc.k, world_seed);

  json provenance;
  provenance["seed"] = c.seed;
  provenance["world_seed"] = world_seed;

  write_atomically(l.spaces(), [&](const fs::path& dir) {
    for (const auto& s : sc.spaces) {
      synth::SpaceSpec spec{s.name, s.dim, s.noise, derive_seed(c.seed, fnv1a("space"), fnv1a(s.name))};
      save_space(synth::realize_space(world, spec), dir / s.name);
      provenance["spaces"][s.name] = spec.seed;
    }

    // Held-out split.
    const auto split_seed = derive_seed(c.seed, fnv1a("split"));
    Rng rng(split_seed);
    const auto perm = rng.permutation(world.n());
    const auto n_test = static_cast<std::size_t>(static_cast<double>(world.n()) * sc.test_fraction);
    std::vector<std::string> test, train;
    for (std::size_t i = 0; i < perm.size(); ++i) (i < n_test ? test : train).push_back(world.ids[perm[i]]);
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    write_json(dir / "split.json", json{{"train", train}, {"test", test}});
    provenance["split_seed"] = split_seed;

    // Zero-shot classification over the test items: the first n_classes
    // test items name the classes; labels come from the ground-truth latents.
    json tasks = json::array();
    if (sc.n_classes >= 2 && test.size() > sc.n_classes) {
      Rng trng(derive_seed(c.seed, fnv1a("tasks")));
      auto order = trng.permutation(test.size());
      std::vector<std::string> class_ids, sample_ids;
      for (std::size_t i = 0; i < order.size(); ++i) {
        (i < sc.n_classes ? class_ids : sample_ids).push_back(test[order[i]]);
      }
      std::sort(sample_ids.begin(), sample_ids.end());
      std::map<std::string, std::size_t> row;
      for (std::size_t i = 0; i < world.ids.size(); ++i) row[world.ids[i]] = i;
      std::vector<std::size_t> labels;
      std::vector<std::vector<std::size_t>> label_sets;
      for (const auto& sid : sample_ids) {
        const auto z = world.latents.row(row.at(sid));
        std::vector<std::pair<double, std::size_t>> scored;
        for (std::size_t c2 = 0; c2 < class_ids.size(); ++c2) {
          const auto zc = world.latents.row(row.at(class_ids[c2]));
          double dot = 0.0;
          for (std::size_t k = 0; k < z.size(); ++k) dot += static_cast<double>(z[k]) * zc[k];
          scored.emplace_back(-dot, c2);
        }
        std::sort(scored.begin(), scored.end());
        labels.push_back(scored[0].second);
        std::vector<std::size_t> set = {scored[0].second, scored[1].second};
        std::sort(set.begin(), set.end());
        label_sets.push_back(set);
      }
      for (const auto& [name, modality, multi] :
           {std::tuple{"audio-cls", "audio", false}, std::tuple{"image-cls", "image", false},
            std::tuple{"audio-tag", "audio", true}}) {
        json t{{"name", name}, {"sample_modality", modality}, {"sample_ids", sample_ids}, {"class_ids", class_ids}};
        if (multi) t["label_sets"] = label_sets;
        else t["labels"] = labels;
        tasks.push_back(t);
      }
    }
    write_json(dir / "tasks.json", tasks);
    write_json(dir / "provenance.json", provenance);
  });
  write_json(out / "effective_config.json", config_to_json(c));
}

// ---------------------------------------------------------------------------
// Loading spaces for the later stages.

struct LoadedSpaces {
  std::map<std::string, SpaceBundle> spaces;  // normalized
  std::optional<std::vector<std::string>> train_ids;
  std::optional<std::vector<std::string>> test_ids;
  json tasks = json::array();
};

inline SpaceBundle restrict(const SpaceBundle& s, const std::vector<std::string>& ids) {
  SpaceBundle out{s.name, s.dim, {}};
  for (const auto& [m, mat] : s.modalities) {
    std::vector<std::string> keep;
    for (const auto& id : ids) {
      if (mat.find(id)) keep.push_back(id);
    }
    out.modalities.emplace(m, mat.select(keep));
  }
  return out;
}

inline LoadedSpaces load_spaces(const PipelineConfig& c, const fs::path& out) {
  const Layout l{out};
  LoadedSpaces ls;
  std::set<std::string> names = {c.unified};
  for (const auto& b : c.bonds) names.insert(b.expert);
  for (const auto& n : names) {
    const auto dir = space_dir(c, l, n);
    if (!fs::exists(dir)) throw SpaceBondError("space '" + n + "' not found at " + dir.string() + " (run synth first?)");
    auto s = load_space(dir, {.normalize = true});
    if (s.name != n) throw SpaceBondError(dir.string() + ": manifest names space '" + s.name + "', expected '" + n + "'");
    ls.spaces.emplace(n, std::move(s));
  }
  if (fs::exists(l.split())) {
    const auto split = read_json(l.split());
    ls.train_ids = ids_of(split.at("train"));
    ls.test_ids = ids_of(split.at("test"));
  }
  if (fs::exists(l.tasks())) ls.tasks = read_json(l.tasks());
  return ls;
}

// ---------------------------------------------------------------------------
// bond

inline SequentialParallelResult train_all_bonds(const PipelineConfig& c, const LoadedSpaces& ls) {
  auto train_view = [&](const SpaceBundle& s) { return ls.train_ids ? restrict(s, *ls.train_ids) : s; };
  const SpaceBundle unified = train_view(ls.spaces.at(c.unified));
  std::optional<SpaceBundle> vt;
  if (auto d = c.displacement()) vt = train_view(ls.spaces.at(d->expert));
  std::vector<SpaceBundle> ats;
  for (const auto& e : c.combination_experts()) ats.push_back(train_view(ls.spaces.at(e)));
  return compose_sequential_parallel(unified, vt, ats, c.bond_config(nn::LossKind::displacement),
                                     c.bond_config(nn::LossKind::combination));
}

inline std::string loss_csv(const std::vector<BondArtifact>& bonds) {
  std::ostringstream os;
  os.precision(10);
  os << "bond,kind,projector,epoch,loss\n";
  for (const auto& b : bonds) {
    for (std::size_t p = 0; p < b.ensemble.size(); ++p) {
      for (std::size_t e = 0; e < b.epoch_losses[p].size(); ++e) {
        os << b.expert() << ',' << nn::to_string(b.kind) << ',' << b.ensemble.tags[p] << ',' << e + 1 << ','
           << b.epoch_losses[p][e] << '\n';
      }
    }
  }
  return os.str();
}

inline CompositeSpace cmd_bond(const PipelineConfig& c, const fs::path& out) {
  if (c.bonds.empty()) throw SpaceBondError("config lists no bonds");
  const Layout l{out};
  const auto ls = load_spaces(c, out);
  auto result = train_all_bonds(c, ls);
  std::vector<BondArtifact> all;
  if (result.space.displacement) all.push_back(*result.space.displacement);
  for (const auto& b : result.space.combinations) all.push_back(b);
  fs::create_directories(out);
  write_atomically(l.bonds(), [&](const fs::path& dir) {
    for (const auto& b : all) save_bond(b, dir / b.expert());
    io::write_file(dir / "loss.csv", loss_csv(all));
  });
  write_json(out / "effective_config.json", config_to_json(c));
  return result.space;
}

inline CompositeSpace load_composite(const PipelineConfig& c, const fs::path& out) {
  const Layout l{out};
  auto space = CompositeSpace::of_unified(c.unified);
  auto load = [&](const std::string& expert) {
    const auto dir = l.bond(expert);
    if (!fs::exists(dir / "manifest.json")) {
      throw SpaceBondError("missing bond artifact for expert '" + expert + "' at " + dir.string() + " (run bond first?)");
    }
    return load_bond(dir);
  };
  if (auto d = c.displacement()) {
    space.displacement = load(d->expert);
    space.unrepaired_audio = true;
  }
  for (const auto& e : c.combination_experts()) {
    space.combinations.push_back(load(e));
    space.selected.push_back(true);
  }
  space.validate();
  return space;
}

// ---------------------------------------------------------------------------
// eval / fuse / sweep

inline eval::EvalInputs eval_inputs(const PipelineConfig& c, const LoadedSpaces& ls) {
  eval::EvalInputs in;
  const auto& unified = ls.spaces.at(c.unified);
  const SpaceBundle u = ls.test_ids ? restrict(unified, *ls.test_ids) : unified;
  in.sources.emplace(c.unified, u);
  for (const auto& b : c.bonds) {
    const auto& s = ls.spaces.at(b.expert);
    SpaceBundle aligned{s.name, s.dim, {}};
    for (const auto& [m, mat] : s.modalities) {
      if (u.has(m)) aligned.modalities.emplace(m, mat.select(u.at(m).ids()));
    }
    in.sources.emplace(b.expert, std::move(aligned));
  }
  for (const auto& t : ls.tasks) {
    eval::ClassSpec spec;
    spec.name = t.at("name").get<std::string>();
    spec.sample_modality = parse_modality(t.at("sample_modality").get<std::string>());
    spec.sample_ids = ids_of(t.at("sample_ids"));
    spec.class_ids = ids_of(t.at("class_ids"));
    if (t.contains("labels")) spec.labels = t.at("labels").get<std::vector<std::size_t>>();
    if (t.contains("label_sets")) spec.label_sets = t.at("label_sets").get<std::vector<std::vector<std::size_t>>>();
    in.classification.push_back(std::move(spec));
  }
  return in;
}

inline std::string factor_label(const CombiningFactors& f) {
  std::ostringstream os;
  os << "lv" << f.lambda_v << "_lt" << f.lambda_t << "_sa" << f.sigma_a << "_st" << f.sigma_t;
  return os.str();
}

struct EvalOutcome {
  eval::MetricReport fused;
  eval::MetricReport baseline;                        // raw unified space
  std::map<std::string, eval::MetricReport> experts;  // raw expert spaces
};

inline const CombiningFactors kNoFactors{0.0, 0.0, 0.0, 0.0};

inline EvalOutcome cmd_eval(const PipelineConfig& c, const fs::path& out, const CombiningFactors& f,
                            const std::string& label, const std::vector<std::string>& select = {}) {
  const Layout l{out};
  auto space = load_composite(c, out);
  if (!select.empty()) space = select_modules(space, select);
  const auto ls = load_spaces(c, out);
  const auto inputs = eval_inputs(c, ls);
  const EncodeOptions opts{c.normalize_channels};
  EvalOutcome o;
  o.fused = eval::evaluate_composite(space, f, inputs, opts);
  o.baseline = eval::evaluate_composite(CompositeSpace::of_unified(c.unified), kNoFactors, inputs, opts);
  for (const auto& b : c.bonds) o.experts.emplace(b.expert, eval::evaluate_space(inputs.sources.at(b.expert), inputs.ks));
  fs::create_directories(l.reports());
  write_json(l.reports() / (label + ".json"), eval::report_json(o.fused));
  io::write_file(l.reports() / (label + ".csv"), eval::report_csv(o.fused));
  write_json(l.reports() / (label + ".factors.json"),
             json{{"lambda_v", f.lambda_v}, {"lambda_t", f.lambda_t}, {"sigma_a", f.sigma_a}, {"sigma_t", f.sigma_t},
                  {"selected", select}, {"unrepaired_audio", space.unrepaired_audio}});
  write_json(l.reports() / "baseline_unified.json", eval::report_json(o.baseline));
  io::write_file(l.reports() / "baseline_unified.csv", eval::report_csv(o.baseline));
  for (const auto& [name, r] : o.experts) write_json(l.reports() / ("expert_" + name + ".json"), eval::report_json(r));
  return o;
}

inline void cmd_fuse(const PipelineConfig& c, const fs::path& out, const CombiningFactors& f, const std::string& label,
                     const std::vector<std::string>& select = {}) {
  const Layout l{out};
  auto space = load_composite(c, out);
  if (!select.empty()) space = select_modules(space, select);
  const auto ls = load_spaces(c, out);
  const auto inputs = eval_inputs(c, ls);
  SpaceBundle fused{label, 0, {}};
  for (Modality m : kAllModalities) {
    auto e = eval::encode_modality(space, m, inputs, f, {c.normalize_channels});
    fused.dim = e.d();
    fused.modalities.emplace(m, std::move(e));
  }
  save_space(fused, l.fused() / label);
}

inline DeltaGrid cmd_sweep(const PipelineConfig& c, const fs::path& out, const CombiningFactors& base) {
  const Layout l{out};
  const auto space = load_composite(c, out);
  const auto ls = load_spaces(c, out);
  const auto grid = factor_sweep(space, base, c.sweep_axes, c.sweep_x, c.sweep_y, eval_inputs(c, ls),
                                 {c.normalize_channels});
  fs::create_directories(l.sweep());
  io::write_file(l.sweep() / "sweep.csv", grid.csv());
  io::write_file(l.sweep() / "sweep.dat", grid.gnuplot_data());
  return grid;
}

}  // namespace spacebond::pipeline
