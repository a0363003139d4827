// bctlab: experiment recipes from dataset generation to compatibility reports.
//
// Every subcommand reads one JSON config, writes its artifacts under --out
// with names derived from the config hash, prints a JSON summary on stdout
// and, on failure, an error JSON on stderr with a nonzero exit code.

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bct/datagen.hpp"
#include "bct/errors.hpp"
#include "bct/evalproto.hpp"
#include "bct/experiment.hpp"
#include "bct/feature_store.hpp"
#include "bct/gallery.hpp"
#include "bct/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bct;

namespace {

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

// ---------------------------------------------------------------- hashing

std::string sha1_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, md.data(), &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("hash", "SHA-1 digest failed");
  }
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
  if (!out) throw IoError("cannot write " + p.string());
}

// Same digest git assigns to a blob with these contents.
std::string git_blob_hash(const fs::path& p) {
  const std::string body = read_bytes(p);
  return sha1_hex("blob " + std::to_string(body.size()) + std::string(1, '\0') + body);
}

// ---------------------------------------------------------------- config

struct Context {
  json config;        // effective config (after --seed)
  std::string hash;   // SHA-1 of the canonical config dump
  fs::path out;
  json inputs = json::object();     // path -> git blob hash
  json artifacts = json::array();   // written paths
};

void reject_unknown(const json& section, const std::vector<std::string>& allowed,
                    const std::string& where) {
  if (!section.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : section.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end()) {
      throw ConfigError("unknown key '" + k + "' in " + where);
    }
  }
}

const json& need(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError("missing '" + key + "' in " + where);
  return j.at(key);
}

template <class T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

SyntheticSpec spec_from(const json& j) {
  SyntheticSpec s = defaults::synthetic_spec();
  reject_unknown(j, {"num_train_identities", "num_openset_identities", "samples_per_identity",
                     "input_dim", "class_separation", "rng_seed"},
                 "dataset");
  take(j, "num_train_identities", s.num_train_identities);
  take(j, "num_openset_identities", s.num_openset_identities);
  take(j, "samples_per_identity", s.samples_per_identity);
  take(j, "input_dim", s.input_dim);
  take(j, "class_separation", s.class_separation);
  take(j, "rng_seed", s.rng_seed);
  s.validate();
  return s;
}

EvalSettings settings_from(const json& j) {
  EvalSettings s = defaults::eval_settings();
  reject_unknown(j, {"per_class_gallery", "per_class_query", "gallery_identity_fraction",
                     "verify_templates_per_class", "split_seed", "far_targets", "fpir_targets",
                     "ranks", "distance"},
                 "eval");
  take(j, "per_class_gallery", s.per_class_gallery);
  take(j, "per_class_query", s.per_class_query);
  take(j, "gallery_identity_fraction", s.gallery_identity_fraction);
  take(j, "verify_templates_per_class", s.verify_templates_per_class);
  take(j, "split_seed", s.split_seed);
  take(j, "far_targets", s.far_targets);
  take(j, "fpir_targets", s.fpir_targets);
  take(j, "ranks", s.ranks);
  if (j.contains("distance")) s.distance = distance_from_string(j.at("distance").get<std::string>());
  s.validate();
  return s;
}

EvalSettings settings_of(const Context& ctx) {
  return settings_from(ctx.config.value("eval", json::object()));
}

// Recipes start from the desk defaults; listed keys override them.
TrainRecipe recipe_from(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  json merged = to_json(defaults::recipe(need(j, "version", where).get<std::string>(), 1.0, 0));
  for (const auto& [k, v] : j.items()) {
    if (!merged.contains(k)) throw ConfigError("unknown key '" + k + "' in " + where);
    if (v.is_object() && merged[k].is_object()) {
      for (const auto& [k2, v2] : v.items()) {
        if (!merged[k].contains(k2)) {
          throw ConfigError("unknown key '" + k2 + "' in " + where + "." + k);
        }
        merged[k][k2] = v2;
      }
    } else {
      merged[k] = v;
    }
  }
  TrainRecipe r = recipe_from_json(merged);
  r.validate();
  return r;
}

// "ref:NAME" resolves through <out>/refs/NAME; anything else is a path,
// relative paths being taken relative to the working directory.
fs::path resolve(Context& ctx, const std::string& value) {
  if (value.rfind("ref:", 0) == 0) {
    const fs::path ref = ctx.out / "refs" / value.substr(4);
    if (!fs::exists(ref)) throw ConfigError("unresolved reference " + value);
    std::string target = read_bytes(ref);
    while (!target.empty() && (target.back() == '\n' || target.back() == '\r')) target.pop_back();
    return ctx.out / target;
  }
  return fs::path(value);
}

fs::path input_path(Context& ctx, const std::string& key) {
  const json& ins = need(ctx.config, "inputs", "config");
  return resolve(ctx, need(ins, key, "inputs").get<std::string>());
}

// Inputs under --out are keyed relative to it so reports do not depend on
// where the output directory lives.
void record_input(Context& ctx, const fs::path& p) {
  const fs::path rel = p.lexically_relative(ctx.out);
  const bool inside = !rel.empty() && *rel.begin() != "..";
  ctx.inputs[(inside ? rel : p).generic_string()] = git_blob_hash(p);
}

Dataset load_input_dataset(Context& ctx) {
  const fs::path jsonl = input_path(ctx, "dataset");
  const fs::path side = dataset_sidecar_path(jsonl);
  record_input(ctx, jsonl);
  record_input(ctx, side);
  return load_dataset(jsonl, side);
}

Checkpoint load_checkpoint_at(Context& ctx, const fs::path& stem) {
  record_input(ctx, fs::path(stem.string() + ".json"));
  record_input(ctx, fs::path(stem.string() + ".bin"));
  return load_checkpoint(stem);
}

Checkpoint load_input_checkpoint(Context& ctx, const std::string& key) {
  return load_checkpoint_at(ctx, input_path(ctx, key));
}

std::string short_hash(const Context& ctx) { return ctx.hash.substr(0, 12); }

fs::path artifact(Context& ctx, const std::string& stem, const std::string& ext) {
  const std::string name = stem + "-" + short_hash(ctx) + ext;
  ctx.artifacts.push_back(name);
  return ctx.out / name;
}

// Points <out>/refs/NAME at an artifact (path relative to <out>).
void publish(Context& ctx, const std::string& name, const fs::path& target) {
  if (name.empty()) return;
  fs::create_directories(ctx.out / "refs");
  write_bytes(ctx.out / "refs" / name, fs::relative(target, ctx.out).string() + "\n");
}

std::string ref_name(const Context& ctx, const std::string& fallback) {
  return ctx.config.value("name", fallback);
}

json provenance(const Context& ctx, const std::string& command) {
  return {{"command", command}, {"config_hash", ctx.hash}, {"inputs", ctx.inputs}};
}

void write_json(Context& ctx, const fs::path& p, const json& j) {
  write_bytes(p, j.dump(2) + "\n");
}

std::optional<std::uint64_t> global_seed(const Context& ctx) {
  if (!ctx.config.contains("seed")) return std::nullopt;
  return ctx.config.at("seed").get<std::uint64_t>();
}

// ---------------------------------------------------------------- commands

void cmd_gen(Context& ctx) {
  reject_unknown(ctx.config, {"name", "seed", "dataset"}, "config");
  SyntheticSpec spec = spec_from(ctx.config.value("dataset", json::object()));
  if (auto s = global_seed(ctx)) spec.rng_seed = *s;
  const Dataset data = generate(spec);
  const fs::path jsonl = artifact(ctx, "dataset", ".jsonl");
  const fs::path side = dataset_sidecar_path(jsonl);
  ctx.artifacts.push_back(side.filename().string());
  save_dataset(data, jsonl, side);
  publish(ctx, ref_name(ctx, "dataset"), jsonl);
}

fs::path save_trained(Context& ctx, const Checkpoint& ck, const std::string& ref) {
  const fs::path stem = ctx.out / (ck.version + "-" + short_hash(ctx));
  save_checkpoint(ck, stem);
  ctx.artifacts.push_back(stem.filename().string() + ".json");
  ctx.artifacts.push_back(stem.filename().string() + ".bin");
  publish(ctx, ref, stem);
  return stem;
}

void cmd_train(Context& ctx) {
  reject_unknown(ctx.config, {"name", "seed", "inputs", "recipe"}, "config");
  const Dataset data = load_input_dataset(ctx);
  TrainRecipe r = recipe_from(need(ctx.config, "recipe", "config"), "recipe");
  if (auto s = global_seed(ctx)) r.sgd.rng_seed = *s;
  const bool needs_old = r.bct_mode != BctMode::None;
  Checkpoint ck;
  if (needs_old) {
    const Checkpoint old = load_input_checkpoint(ctx, "old");
    ck = train(r, data, old);
  } else {
    ck = train(r, data);
  }
  save_trained(ctx, ck, ref_name(ctx, ck.version));
}

// The three-model chain plus its 1:N search matrix M(phi_i, phi_j), i >= j.
void cmd_chain(Context& ctx) {
  reject_unknown(ctx.config, {"name", "seed", "inputs", "recipes", "eval"}, "config");
  const Dataset data = load_input_dataset(ctx);
  const json& rj = need(ctx.config, "recipes", "config");
  if (!rj.is_array() || rj.size() != 3) throw ConfigError("recipes must list three recipes");
  std::array<TrainRecipe, 3> rs;
  for (std::size_t i = 0; i < 3; ++i) {
    rs[i] = recipe_from(rj[i], "recipes[" + std::to_string(i) + "]");
    if (auto s = global_seed(ctx)) rs[i].sgd.rng_seed = *s + i;
  }
  const auto chain = train_chain(rs, data);
  for (const auto& ck : chain) save_trained(ctx, ck, ref_name(ctx, "chain") + "." + ck.version);

  const EvalSettings settings = settings_of(ctx);
  const OpenSetBenchmark bench = build_benchmark(data, settings);
  FeatureStore features;
  for (const auto& ck : chain) features.merge(benchmark_features(ck, data, bench, settings));
  json matrix = json::array();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const auto m = evaluate_pair(features, chain[i].version, chain[j].version, bench, settings);
      matrix.push_back({{"query", chain[i].version},
                        {"gallery", chain[j].version},
                        {"search", m.search.primary()},
                        {"verify", m.verify.primary()}});
    }
  }
  json report = provenance(ctx, "chain");
  report["matrix"] = matrix;
  write_json(ctx, artifact(ctx, "chain", ".json"), report);
}

void cmd_extract(Context& ctx) {
  reject_unknown(ctx.config, {"name", "seed", "inputs", "eval", "samples"}, "config");
  const Dataset data = load_input_dataset(ctx);
  const Checkpoint ck = load_input_checkpoint(ctx, "checkpoint");
  const EvalSettings settings = settings_of(ctx);
  const std::string which = ctx.config.value("samples", "benchmark");
  std::vector<std::size_t> idx;
  if (which == "benchmark") {
    idx = build_benchmark(data, settings).feature_samples;
  } else if (which == "all") {
    for (std::size_t i = 0; i < data.samples.size(); ++i) idx.push_back(i);
  } else {
    throw ConfigError("samples must be 'benchmark' or 'all'");
  }
  const FeatureStore store =
      extract_features(ck, data, idx, settings.distance == Distance::Cosine);
  const fs::path p = artifact(ctx, "features-" + ck.version, ".bfs");
  write_feature_store(store, p);
  publish(ctx, ref_name(ctx, "features." + ck.version), p);
}

FeatureStore load_input_features(Context& ctx, const std::string& key) {
  FeatureStore store;
  const json& v = need(need(ctx.config, "inputs", "config"), key, "inputs");
  const std::vector<std::string> paths =
      v.is_array() ? v.get<std::vector<std::string>>() : std::vector<std::string>{v};
  for (const auto& s : paths) {
    const fs::path p = resolve(ctx, s);
    record_input(ctx, p);
    store.merge(read_feature_store(p));
  }
  return store;
}

void cmd_index(Context& ctx) {
  reject_unknown(ctx.config, {"name", "seed", "inputs", "eval", "index"}, "config");
  const Dataset data = load_input_dataset(ctx);
  const FeatureStore features = load_input_features(ctx, "features");
  const EvalSettings settings = settings_of(ctx);
  const json& ij = need(ctx.config, "index", "config");
  reject_unknown(ij, {"version", "backfill_version", "backfill_fraction", "backfill_seed"},
                 "index");
  const OpenSetBenchmark bench = build_benchmark(data, settings);
  const FeatureStore gallery_fs = features.subset(bench.gallery_sample_ids);
  const std::string version = need(ij, "version", "index").get<std::string>();
  Gallery g;
  if (ij.contains("backfill_version")) {
    std::uint64_t seed = ij.value("backfill_seed", std::uint64_t{5});
    if (auto s = global_seed(ctx)) seed = *s;
    g = partial_backfill(gallery_fs, version, ij.at("backfill_version").get<std::string>(),
                         bench.gallery_identities, ij.value("backfill_fraction", 1.0), seed,
                         settings.distance);
  } else {
    g = build_prototypes(gallery_fs, version, bench.gallery_identities, settings.distance);
  }
  const fs::path p = artifact(ctx, "gallery-" + version, ".gallery.json");
  write_gallery(g, p);
  publish(ctx, ref_name(ctx, "gallery." + version), p);
}

void cmd_eval(Context& ctx) {
  reject_unknown(ctx.config, {"name", "seed", "inputs", "eval", "pair"}, "config");
  const Dataset data = load_input_dataset(ctx);
  const FeatureStore features = load_input_features(ctx, "features");
  const EvalSettings settings = settings_of(ctx);
  const json& pj = need(ctx.config, "pair", "config");
  reject_unknown(pj, {"protocol", "query_version", "gallery_version"}, "pair");
  const std::string protocol = need(pj, "protocol", "pair").get<std::string>();
  const std::string qv = need(pj, "query_version", "pair").get<std::string>();
  const std::string gv = need(pj, "gallery_version", "pair").get<std::string>();
  const OpenSetBenchmark bench = build_benchmark(data, settings);
  EvalReport r;
  if (protocol == "verify") {
    r = verify_1v1(features, qv, gv, bench.pairs, settings.far_targets, settings.distance);
  } else if (protocol == "search") {
    Gallery g;
    if (ctx.config.at("inputs").contains("gallery")) {
      const fs::path gp = input_path(ctx, "gallery");
      record_input(ctx, gp);
      g = read_gallery(gp);
    } else {
      g = build_prototypes(features.subset(bench.gallery_sample_ids), gv,
                           bench.gallery_identities, settings.distance);
    }
    r = search_1vN(features, qv, g, bench.queries, settings.fpir_targets, settings.ranks);
  } else {
    throw ConfigError("protocol must be 'verify' or 'search'");
  }
  json report = provenance(ctx, "eval");
  report["report"] = to_json(r);
  const std::string stem = "eval-" + protocol + "-" + qv + "-" + gv;
  write_json(ctx, artifact(ctx, stem, ".json"), report);
  write_bytes(artifact(ctx, stem, ".csv"), curve_csv(r));
}

void cmd_compat(Context& ctx) {
  reject_unknown(ctx.config, {"name", "seed", "inputs", "eval", "candidates"}, "config");
  const Dataset data = load_input_dataset(ctx);
  const Checkpoint old = load_input_checkpoint(ctx, "old");
  const Checkpoint paragon = load_input_checkpoint(ctx, "paragon");
  const json& cj = need(ctx.config, "candidates", "config");
  if (!cj.is_object() || cj.empty()) throw ConfigError("candidates must be a non-empty object");
  std::vector<Checkpoint> cks;
  std::vector<std::string> names;
  cks.reserve(cj.size());
  for (const auto& [name, path] : cj.items()) {
    cks.push_back(load_checkpoint_at(ctx, resolve(ctx, path.get<std::string>())));
    names.push_back(name);
  }
  std::vector<std::pair<std::string, const Checkpoint*>> cands;
  for (std::size_t i = 0; i < cks.size(); ++i) cands.emplace_back(names[i], &cks[i]);
  const CompatReport rep = run_compat(old, paragon, cands, data, settings_of(ctx));
  json report = provenance(ctx, "compat");
  report["report"] = to_json(rep);
  write_json(ctx, artifact(ctx, "compat", ".json"), report);
}

void cmd_backfill_sweep(Context& ctx) {
  reject_unknown(ctx.config, {"name", "seed", "inputs", "eval", "backfill"}, "config");
  const Dataset data = load_input_dataset(ctx);
  const Checkpoint old = load_input_checkpoint(ctx, "old");
  const Checkpoint neu = load_input_checkpoint(ctx, "new");
  const json bj = ctx.config.value("backfill", json::object());
  reject_unknown(bj, {"step", "seed"}, "backfill");
  std::uint64_t seed = bj.value("seed", std::uint64_t{5});
  if (auto s = global_seed(ctx)) seed = *s;
  const auto pts = run_backfill_sweep(old, neu, data, settings_of(ctx),
                                      backfill_fractions(bj.value("step", 0.1)), seed);
  std::vector<double> fr, acc;
  for (const auto& p : pts) {
    fr.push_back(p.fraction);
    acc.push_back(p.search);
  }
  write_bytes(artifact(ctx, "backfill", ".csv"), backfill_csv(pts));
  json report = provenance(ctx, "backfill-sweep");
  report["spearman"] = spearman(fr, acc);
  write_json(ctx, artifact(ctx, "backfill", ".json"), report);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bctlab: backward-compatible embedding experiments"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  app.add_option("--config", config_path, "experiment config (JSON)")->required();
  app.add_option("--seed", seed, "global seed override");
  app.add_option("--out", out_dir, "output directory");
  app.fallthrough();

  const std::vector<std::pair<std::string, void (*)(Context&)>> commands{
      {"gen", cmd_gen},         {"train", cmd_train},         {"extract", cmd_extract},
      {"index", cmd_index},     {"eval", cmd_eval},           {"compat", cmd_compat},
      {"chain", cmd_chain},     {"backfill-sweep", cmd_backfill_sweep}};
  for (const auto& [name, fn] : commands) app.add_subcommand(name, name + " (see README)");

  CLI11_PARSE(app, argc, argv);

  std::string command;
  try {
    for (const auto& [name, fn] : commands) {
      if (!app.got_subcommand(name)) continue;
      command = name;
      Context ctx;
      ctx.out = out_dir;
      try {
        ctx.config = json::parse(read_bytes(config_path));
      } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
      }
      if (!ctx.config.is_object()) throw ConfigError("config must be a JSON object");
      if (seed) ctx.config["seed"] = *seed;
      ctx.config["command"] = name;
      ctx.hash = sha1_hex(ctx.config.dump());
      ctx.config.erase("command");
      fs::create_directories(ctx.out);
      fn(ctx);
      json summary = provenance(ctx, name);
      summary["artifacts"] = ctx.artifacts;
      std::cout << summary.dump() << '\n';
    }
  } catch (const Error& e) {
    std::cerr << json{{"error", {{"kind", e.kind()}, {"message", e.what()}, {"command", command}}}}
                     .dump()
              << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", {{"kind", "internal"}, {"message", e.what()}, {"command", command}}}}
                     .dump()
              << '\n';
    return 3;
  }
  return 0;
}
