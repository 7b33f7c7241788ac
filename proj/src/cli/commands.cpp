#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "nes/cli.hpp"
#include "nes/contingency.hpp"
#include "nes/corpus.hpp"
#include "nes/error.hpp"
#include "nes/evaluation.hpp"
#include "nes/spherical_mixture.hpp"
#include "nes/text.hpp"

namespace nes::cli {

using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(fmt::format("cannot open '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("'{}' is not valid JSON: {}", path, e.what()));
  }
}

// Writes to `path`, or to stdout when the path is empty.
void write_text(const std::string& path, const std::string& content) {
  if (path.empty()) {
    std::cout << content;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(fmt::format("cannot write '{}'", path));
  out << content;
}

void write_json(const std::string& path, const json& doc) { write_text(path, doc.dump(2) + "\n"); }

std::vector<SuppressionRule> load_rules(const std::string& path) {
  const auto doc = read_json(path);
  if (!doc.is_array()) throw ParseError("suppression rules must be a JSON array");
  std::vector<SuppressionRule> rules;
  try {
    for (const auto& r : doc)
      rules.push_back({r.at("pattern").get<std::string>(), r.at("placeholder").get<std::string>(),
                       r.value("case_insensitive", false), r.value("regex", false)});
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("malformed suppression rule: {}", e.what()));
  }
  return rules;
}

// Documents given as ordered sentences are cut into chunks at semantic
// breakpoints; chunk texts are embedded by the configured provider.
Corpus corpus_from_sentences(const RunConfig& cfg) {
  const auto doc = read_json(cfg.sentences);
  Corpus corpus;
  try {
    corpus.categories = doc.at("categories").get<std::vector<std::string>>();
    corpus.d = cfg.dim != 0 ? cfg.dim : doc.value("d", std::size_t{0});
    if (corpus.d < 2) throw ValidationError("sentence input needs an embedding dimension (--dim or \"d\")");
    EmbeddingMemo memo(provider_config(cfg, corpus.d));
    for (const auto& d : doc.at("documents")) {
      const auto doc_id = d.at("doc_id").get<std::string>();
      std::vector<Sentence> sentences;
      std::vector<std::map<std::string, std::vector<std::string>>> ents;
      std::vector<EmbeddingRequest> missing;
      std::vector<std::size_t> missing_idx;
      for (const auto& s : d.at("sentences")) {
        Sentence sent{s.at("text").get<std::string>(), s.value("embedding", std::vector<double>{})};
        if (sent.embedding.empty()) {
          missing.push_back({doc_id, sent.text});
          missing_idx.push_back(sentences.size());
        } else {
          normalize(sent.embedding);
        }
        sentences.push_back(std::move(sent));
        ents.push_back(s.value("entities", std::map<std::string, std::vector<std::string>>{}));
      }
      if (!missing.empty()) {
        auto vecs = memo.embed(missing);
        for (std::size_t k = 0; k < missing_idx.size(); ++k) sentences[missing_idx[k]].embedding = std::move(vecs[k]);
      }
      if (sentences.empty()) continue;
      const auto groups = semantic_chunk(sentences, cfg.threshold);
      for (std::size_t g = 0; g < groups.size(); ++g) {
        Chunk c;
        c.id = fmt::format("{}-{}", doc_id, g + 1);
        c.doc_id = doc_id;
        std::vector<std::string> parts;
        for (auto i : groups[g]) {
          parts.push_back(sentences[i].text);
          for (const auto& [cat, list] : ents[i]) {
            auto& dst = c.entities[cat];
            for (const auto& e : list)
              if (std::find(dst.begin(), dst.end(), e) == dst.end()) dst.push_back(e);
          }
        }
        c.text = text::join(parts, " ");
        corpus.chunks.push_back(std::move(c));
      }
    }
    reembed_stale(corpus, memo);
  } catch (const json::exception& e) {
    throw ParseError(fmt::format("malformed sentence input: {}", e.what()));
  }
  return corpus;
}

json corpus_stats(const Corpus& corpus) {
  json cats = json::object();
  for (const auto& cat : corpus.categories) {
    std::size_t entities = 0, chunks = 0;
    for (const auto& c : corpus.chunks) {
      const auto& list = c.entities_of(cat);
      entities += list.size();
      if (!list.empty()) ++chunks;
    }
    cats[cat] = {{"entities", entities}, {"chunks", chunks}};
  }
  return {{"n", corpus.n()}, {"m", corpus.m()}, {"p", corpus.p()}, {"d", corpus.d}, {"categories", cats}};
}

int cmd_ingest(const RunConfig& cfg) {
  validate(cfg, "ingest");
  Corpus corpus = cfg.input.empty() ? corpus_from_sentences(cfg) : load_corpus(cfg.input);
  std::size_t replacements = 0;
  std::vector<std::string> changed;
  if (!cfg.rules.empty()) {
    auto res = suppress_direct_identifiers(corpus, load_rules(cfg.rules));
    corpus = std::move(res.corpus);
    replacements = res.replacements;
    changed = std::move(res.changed);
    if (!changed.empty() && corpus.d >= 2) {
      for (const auto& id : changed) corpus.chunks[corpus.index_of(id)].embedding.clear();
      EmbeddingMemo memo(provider_config(cfg, corpus.d));
      reembed_stale(corpus, memo);
      spdlog::warn("re-embedded {} chunks changed by suppression", changed.size());
    }
  }
  validate(corpus);
  auto stats = corpus_stats(corpus);
  stats["replacements"] = replacements;
  stats["changed_chunks"] = changed.size();
  if (!cfg.output.empty()) save_corpus(corpus, cfg.output);
  write_json(cfg.stats, stats);
  return kExitOk;
}

Corpus corpus_with_embeddings(const RunConfig& cfg, EmbeddingMemo*& memo_out, std::unique_ptr<EmbeddingMemo>& holder) {
  Corpus corpus = load_corpus(cfg.corpus);
  holder = std::make_unique<EmbeddingMemo>(provider_config(cfg, corpus.d));
  memo_out = holder.get();
  if (const auto filled = reembed_stale(corpus, *holder); filled > 0)
    spdlog::warn("embedded {} chunks that had no embedding", filled);
  return corpus;
}

int cmd_fit(const RunConfig& cfg) {
  validate(cfg, "fit");
  EmbeddingMemo* memo;
  std::unique_ptr<EmbeddingMemo> holder;
  const Corpus corpus = corpus_with_embeddings(cfg, memo, holder);
  EmOptions opt;
  opt.family = parse_family(cfg.family);
  opt.K = cfg.K;
  opt.eps = cfg.eps;
  opt.tol = cfg.tol;
  opt.max_iter = cfg.max_iter;
  opt.seed = cfg.seed;
  opt.threads = cfg.threads;
  if (opt.K > corpus.n())
    throw ValidationError(fmt::format("K = {} exceeds the number of chunks {}", opt.K, corpus.n()));
  const auto res = fit_em(corpus_matrix(corpus), opt);
  if (!res.converged) spdlog::warn("EM stopped at max-iter {} before the gain fell below tol", opt.max_iter);
  write_json(cfg.model, model_to_json(res.model));
  if (!cfg.trace.empty()) write_text(cfg.trace, trace_csv(res.trace));
  return kExitOk;
}

MixtureModel load_model(const std::string& path, std::size_t d) {
  auto model = model_from_json(read_json(path));
  if (model.d != d) throw ValidationError(fmt::format("model dimension {} differs from corpus dimension {}", model.d, d));
  return model;
}

int cmd_sweep(const RunConfig& cfg) {
  validate(cfg, "sweep");
  EmbeddingMemo* memo;
  std::unique_ptr<EmbeddingMemo> holder;
  const Corpus corpus = corpus_with_embeddings(cfg, memo, holder);
  const auto model = load_model(cfg.model, corpus.d);
  const auto l = assign(model, corpus_matrix(corpus), cfg.threads);
  const auto res = sweep(corpus, model, l, sweep_config(cfg), *memo);
  if (!cfg.report.empty()) {
    json reports = json::array();
    for (const auto& r : res.reports) reports.push_back(report_to_json(r));
    write_json(cfg.report, {{"subsets", reports}, {"points", res.points.size()}});
  }
  write_text(cfg.output, sweep_csv(res.points));
  const bool any = std::any_of(res.reports.begin(), res.reports.end(), [](const auto& r) { return r.ok; });
  if (!any) {
    spdlog::error("no category subset produced releases");
    return kExitInput;
  }
  return kExitOk;
}

int cmd_select(const RunConfig& cfg) {
  validate(cfg, "select");
  auto points = sweep_from_csv(read_file(cfg.sweep_csv));
  if (cfg.select_N) std::erase_if(points, [&](const auto& p) { return p.N != *cfg.select_N; });
  std::set<double> Ns;
  for (const auto& p : points) Ns.insert(p.N);
  if (Ns.size() > 1) throw ValidationError("the sweep covers several population sizes; pick one with --N");
  if (points.empty()) throw ValidationError("no candidate releases to select from");
  const auto front = frontier(points);
  RiskUtilityPoint chosen;
  if (cfg.max_dr) {
    const auto best = best_utility_under_risk(front, *cfg.max_dr);
    if (!best) throw ValidationError(fmt::format("no release has DR <= {}", *cfg.max_dr));
    chosen = *best;
  } else {
    chosen = optimal_release(front, {cfg.a, cfg.c});
  }

  Release release;
  release.swap_count = chosen.swap_count;
  release.seed = chosen.seed;
  release.constraints.same_cluster = cfg.same_cluster;
  release.roles = parse_roles(cfg.roles);
  for (const auto& cat : chosen.J) release.roles[cat] = Role::S;

  json front_json = json::array();
  for (const auto& p : front) front_json.push_back(point_to_json(p));
  json out{{"point", point_to_json(chosen)}, {"release", release_to_json(release)}, {"frontier", front_json}};
  if (cfg.max_dr)
    out["max_dr"] = *cfg.max_dr;
  else
    out["line"] = {{"a", cfg.a}, {"c", cfg.c}};
  write_json(cfg.output, out);
  return kExitOk;
}

int cmd_swap(const RunConfig& cfg) {
  validate(cfg, "swap");
  EmbeddingMemo* memo;
  std::unique_ptr<EmbeddingMemo> holder;
  const Corpus corpus = corpus_with_embeddings(cfg, memo, holder);
  const auto model = load_model(cfg.model, corpus.d);
  const auto doc = read_json(cfg.release);
  Release release = release_from_json(doc.contains("release") ? doc["release"] : doc);
  for (const auto& [cat, role] : parse_roles(cfg.roles)) release.roles.try_emplace(cat, role);
  for (const auto& cat : corpus.categories) release.roles.try_emplace(cat, Role::U);
  check_release(release, corpus);

  SweepConfig prep;
  prep.roles = release.roles;
  prep.placeholders = parse_assignments(cfg.placeholders);
  const auto l = assign(model, corpus_matrix(corpus), cfg.threads);
  const Corpus prepared = prepare_for_release(corpus, prep, *memo);
  const auto table = build_table(prepared);
  const auto traj = sequential_swap(prepared, table, l, release);
  if (traj.exhausted)
    spdlog::warn("ran out of valid pairs after {} of {} swaps", traj.pairs.size(), release.swap_count);

  write_json(cfg.output, corpus_to_json(traj.state.corpus));
  if (!cfg.log.empty()) {
    std::string lines;
    for (const auto& r : traj.state.records) lines += record_to_json(r).dump() + "\n";
    lines += json{{"swaps", traj.pairs.size()}, {"requested", release.swap_count}, {"exhausted", traj.exhausted}}.dump() +
             "\n";
    write_text(cfg.log, lines);
  }
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg) {
  validate(cfg, "eval");
  if (cfg.predictions.empty()) throw ValidationError("eval needs at least one prediction file");
  std::vector<PredictionSet> sets;
  for (const auto& path : cfg.predictions) {
    auto part = load_predictions(path);
    sets.insert(sets.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  write_json(cfg.output, evaluation_report(sets));
  return kExitOk;
}

void use_stderr_logger() {
  if (!spdlog::get("nes")) {
    auto logger = spdlog::stderr_color_mt("nes");
    spdlog::set_default_logger(logger);
  }
}

} // namespace

int run(int argc, const char* const* argv) {
  use_stderr_logger();
  RunConfig cfg;
  CLI::App app{"Named-entity swapping for text disclosure control", "nes"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML configuration file");
  app.add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", cfg.threads, "Worker threads")->capture_default_str();
  app.add_option("--provider", cfg.provider, "Embedding provider: stub, cache or http")->capture_default_str();
  app.add_option("--dim", cfg.dim, "Embedding dimension (defaults to the corpus dimension)");
  app.add_option("--cache-path", cfg.cache_path, "Embedding cache file");
  app.add_option("--endpoint", cfg.endpoint, "Embedding endpoint URL");

  auto* ingest = app.add_subcommand("ingest", "Validate and preprocess an ingest file");
  ingest->add_option("--in", cfg.input, "Ingest JSON");
  ingest->add_option("--sentences", cfg.sentences, "Sentence-level documents to chunk");
  ingest->add_option("--threshold", cfg.threshold, "Breakpoint percentile")->capture_default_str();
  ingest->add_option("--rules", cfg.rules, "Direct-identifier suppression rules (JSON)");
  ingest->add_option("--out", cfg.output, "Write the processed corpus here");
  ingest->add_option("--stats", cfg.stats, "Write the statistics report here (default stdout)");

  auto* fit = app.add_subcommand("fit", "Fit a spherical mixture to the chunk embeddings");
  fit->add_option("--corpus", cfg.corpus, "Ingest JSON")->required();
  fit->add_option("--family", cfg.family, "PKB or sCauchy")->capture_default_str();
  fit->add_option("--K", cfg.K, "Number of components")->capture_default_str();
  fit->add_option("--eps", cfg.eps, "Lower bound on component weights")->capture_default_str();
  fit->add_option("--tol", cfg.tol, "Stop when the log-likelihood gain falls below this")->capture_default_str();
  fit->add_option("--max-iter", cfg.max_iter, "Iteration cap")->capture_default_str();
  fit->add_option("--out", cfg.model, "Model JSON (default stdout)");
  fit->add_option("--trace", cfg.trace, "Log-likelihood trace CSV");

  auto add_release_options = [&](CLI::App* sub) {
    sub->add_option("--role", cfg.roles, "Category=F|C|U for categories outside the swapped subset");
    sub->add_option("--placeholder", cfg.placeholders, "Category=[Text] for suppressed categories");
    sub->add_option("--same-cluster", cfg.same_cluster, "Only swap within a mixture component")->capture_default_str();
  };

  auto* sw = app.add_subcommand("sweep", "Risk and utility over candidate releases");
  sw->add_option("--corpus", cfg.corpus, "Ingest JSON")->required();
  sw->add_option("--model", cfg.model, "Model JSON")->required();
  sw->add_option("--s-eligible", cfg.s_eligible, "Categories that may be swapped")->required();
  sw->add_option("--subset-size", cfg.subset_size, "Categories swapped together")->capture_default_str();
  sw->add_option("--max-swaps", cfg.max_swaps, "Swaps per run")->capture_default_str();
  sw->add_option("--N", cfg.N, "Population sizes")->required();
  add_release_options(sw);
  sw->add_option("--out", cfg.output, "Sweep CSV (default stdout)");
  sw->add_option("--report", cfg.report, "Per-subset population-model report (JSON)");

  double max_dr = 0.0, select_N = 0.0;
  auto* sel = app.add_subcommand("select", "Pick a release from a sweep");
  sel->add_option("--sweep", cfg.sweep_csv, "Sweep CSV")->required();
  sel->add_option("--a", cfg.a, "Slope of the risk-utility line")->capture_default_str();
  sel->add_option("--c", cfg.c, "Offset of the risk-utility line")->capture_default_str();
  auto* max_dr_opt = sel->add_option("--max-dr", max_dr, "Instead: highest utility with risk at most this");
  auto* select_N_opt = sel->add_option("--N", select_N, "Restrict to this population size");
  add_release_options(sel);
  sel->add_option("--out", cfg.output, "Selection JSON (default stdout)");

  auto* swp = app.add_subcommand("swap", "Apply a release to the corpus");
  swp->add_option("--corpus", cfg.corpus, "Ingest JSON")->required();
  swp->add_option("--model", cfg.model, "Model JSON")->required();
  swp->add_option("--release", cfg.release, "Release or selection JSON")->required();
  swp->add_option("--role", cfg.roles, "Category=F|C|U for categories the release leaves out");
  swp->add_option("--placeholder", cfg.placeholders, "Category=[Text] for suppressed categories");
  swp->add_option("--out", cfg.output, "Post-swap corpus JSON (default stdout)");
  swp->add_option("--log", cfg.log, "Swap log (JSON lines)");

  auto* ev = app.add_subcommand("eval", "Accuracy and McNemar's test for predictions");
  ev->add_option("--pred", cfg.predictions, "Prediction CSV files")->required();
  ev->add_option("--out", cfg.output, "Report JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }
  if (max_dr_opt->count() > 0) cfg.max_dr = max_dr;
  if (select_N_opt->count() > 0) cfg.select_N = select_N;

  try {
    if (ingest->parsed()) return cmd_ingest(cfg);
    if (fit->parsed()) return cmd_fit(cfg);
    if (sw->parsed()) return cmd_sweep(cfg);
    if (sel->parsed()) return cmd_select(cfg);
    if (swp->parsed()) return cmd_swap(cfg);
    if (ev->parsed()) return cmd_eval(cfg);
  } catch (const ConvergenceError& e) {
    spdlog::error("{}", e.what());
    spdlog::error("diagnostics: {}", e.diagnostics());
    return kExitNonConvergence;
  } catch (const TransportError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitInput;
  }
  return kExitInput;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"nes"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

} // namespace nes::cli
