// Command-line entry point: corpus ingestion, synthetic data, trajectory
// generation, training, simulation, evaluation, and the HTTP service.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "kis/corpus.hpp"
#include "kis/harness/benchmark.hpp"
#include "kis/harness/evaluate.hpp"
#include "kis/harness/runner.hpp"
#include "kis/harness/synth.hpp"
#include "kis/harness/trajectory.hpp"
#include "kis/perception/training.hpp"
#include "kis/service/server.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a `_res` macro.
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kis;

namespace {

httplib::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto piece = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void add_params(CLI::App* cmd, Hyperparams& p) {
  cmd->add_option("--rho", p.rho, "Sigmoid temperature of the update")->capture_default_str();
  cmd->add_option("--pairs", p.num_pairs, "Pairs per display")->capture_default_str();
  cmd->add_option("--n-display", p.n_display, "Candidate pool for diverse displays")->capture_default_str();
  cmd->add_option("--n-prune", p.n_prune, "Active set size after the initial query (0 = off)")->capture_default_str();
  cmd->add_option("--max-steps", p.max_steps, "Iteration limit")->capture_default_str();
}

struct PolicyFlags {
  std::string policies = "ours,pichunter,random";
  std::string prune = "on";
  std::string ablate;
  std::optional<fs::path> checkpoints;
};

// Loaded predictor sets, kept alive for the evaluated policies.
struct PredictorStore {
  std::map<sim::Ablation, sim::PredictorSet> sets;

  const sim::PredictorSet* get(const fs::path& dir, const Corpus& corpus, sim::Ablation variant) {
    const auto key = variant == sim::Ablation::soft_update ? sim::Ablation::none : variant;
    auto it = sets.find(key);
    if (it == sets.end()) it = sets.emplace(key, sim::load_predictor_set(dir, corpus, key)).first;
    return &it->second;
  }
};

std::vector<sim::EvalPolicy> build_policies(const PolicyFlags& flags, const Corpus& corpus, PredictorStore& store) {
  std::vector<bool> prune_modes;
  if (flags.prune == "on") {
    prune_modes = {true};
  } else if (flags.prune == "off") {
    prune_modes = {false};
  } else if (flags.prune == "both") {
    prune_modes = {true, false};
  } else {
    throw CLI::ValidationError("--prune", "expected on, off or both");
  }
  std::vector<sim::Policy> policies;
  for (const auto& name : split(flags.policies)) policies.push_back({sim::parse_policy_kind(name)});
  for (const auto& name : split(flags.ablate)) policies.push_back({sim::PolicyKind::ours, sim::parse_ablation(name)});

  std::vector<sim::EvalPolicy> out;
  for (bool prune : prune_modes) {
    for (const auto& p : policies) {
      sim::EvalPolicy ep{p, prune, nullptr};
      if (p.kind == sim::PolicyKind::ours) {
        if (!flags.checkpoints) throw std::runtime_error("policy '" + p.name() + "' needs --checkpoints");
        ep.predictors = store.get(*flags.checkpoints, corpus, p.ablation);
      }
      out.push_back(ep);
    }
  }
  return out;
}

int cmd_ingest(const fs::path& manifest, bool check_only) {
  const auto corpus = load_corpus(manifest);
  if (check_only) {
    std::cout << "ok\n";
    return 0;
  }
  json out{{"items", corpus.num_items()}, {"spaces", json::array()}};
  for (const auto& s : corpus.spaces()) {
    const auto stats = row_norm_stats(s);
    out["spaces"].push_back({{"space_id", s.space_id},
                             {"dim", s.dim()},
                             {"norm_min", stats.min},
                             {"norm_max", stats.max},
                             {"norm_mean", stats.mean}});
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interactive known-item search with pairwise relevance feedback"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off")->capture_default_str();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Load and validate a corpus manifest");
  fs::path ingest_manifest;
  bool ingest_check = false;
  ingest->add_option("--manifest", ingest_manifest, "Manifest JSON")->required();
  ingest->add_flag("--check", ingest_check, "Validate only");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus and calibrated queries");
  sim::BenchmarkSpec bench;
  sim::SynthSpec synth_spec = bench.corpus;
  fs::path synth_out;
  int synth_per_bucket = bench.queries_per_bucket;
  std::uint64_t synth_query_seed = bench.query_seed;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--items", synth_spec.n_items)->capture_default_str();
  synth->add_option("--spaces", synth_spec.num_spaces)->capture_default_str();
  synth->add_option("--dim", synth_spec.dim)->capture_default_str();
  synth->add_option("--correlation", synth_spec.correlation, "Shared-component weight in [0, 1]")->capture_default_str();
  synth->add_option("--seed", synth_spec.seed)->capture_default_str();
  synth->add_option("--queries-per-bucket", synth_per_bucket, "0 writes no queries")->capture_default_str();
  synth->add_option("--query-seed", synth_query_seed)->capture_default_str();

  // gen-traj
  auto* gen = app.add_subcommand("gen-traj", "Generate training trajectories");
  fs::path gen_corpus, gen_out;
  sim::TrajectoryOptions gen_opts = bench.trajectories;
  gen->add_option("--corpus", gen_corpus, "Manifest JSON")->required();
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--sessions", gen_opts.num_sessions)->capture_default_str();
  gen->add_option("--seed", gen_opts.seed)->capture_default_str();
  gen->add_option("--diverse-rate", gen_opts.diverse_rate, "Chance of a diverse display per step")->capture_default_str();
  add_params(gen, gen_opts.params);

  // train
  auto* train = app.add_subcommand("train", "Train the predictor for one space");
  fs::path train_dir, train_out;
  std::string train_space;
  auto train_cfg = bench.predictor;
  auto train_opts = bench.training;
  std::uint64_t train_init_seed = 1;
  bool no_state = false, no_distance = false;
  train->add_option("--trajectories", train_dir, "Directory written by gen-traj")->required();
  train->add_option("--space", train_space, "Space id")->required();
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--epochs", train_opts.epochs)->capture_default_str();
  train->add_option("--lr", train_opts.learning_rate)->capture_default_str();
  train->add_option("--batch", train_opts.batch_size)->capture_default_str();
  train->add_option("--seed", train_opts.seed)->capture_default_str();
  train->add_option("--init-seed", train_init_seed)->capture_default_str();
  train->add_option("--model-dim", train_cfg.model_dim)->capture_default_str();
  train->add_option("--layers", train_cfg.layers)->capture_default_str();
  train->add_option("--heads", train_cfg.heads)->capture_default_str();
  train->add_option("--ff-dim", train_cfg.ff_dim)->capture_default_str();
  train->add_option("--dropout", train_cfg.dropout)->capture_default_str();
  train->add_flag("--no-state", no_state, "Drop the search-state term");
  train->add_flag("--no-distance", no_distance, "Drop the distance embedding");

  // simulate
  auto* simulate = app.add_subcommand("simulate", "Run simulated sessions and print rank traces");
  fs::path sim_corpus, sim_queries;
  std::optional<fs::path> sim_checkpoints;
  std::string sim_policy = "pichunter";
  std::string sim_strategy = "greedy";
  int sim_first = 0, sim_count = 1;
  std::uint64_t sim_seed = bench.session_seed;
  double sim_noise = 0.0;
  Hyperparams sim_params;
  simulate->add_option("--corpus", sim_corpus, "Manifest JSON")->required();
  simulate->add_option("--queries", sim_queries, "Query JSON-lines file")->required();
  simulate->add_option("--policy", sim_policy, "random, pichunter, ours, ours-<ablation>, aligned")->capture_default_str();
  simulate->add_option("--checkpoints", sim_checkpoints, "Checkpoint directory (for ours)");
  simulate->add_option("--strategy", sim_strategy, "greedy or diverse")->capture_default_str();
  simulate->add_option("--first", sim_first, "Index of the first query")->capture_default_str();
  simulate->add_option("--count", sim_count, "Number of queries")->capture_default_str();
  simulate->add_option("--seed", sim_seed)->capture_default_str();
  simulate->add_option("--label-noise", sim_noise, "Chance of flipping each label")->capture_default_str();
  add_params(simulate, sim_params);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Recall@k per step, policy and depth bucket");
  fs::path eval_corpus, eval_queries;
  std::optional<fs::path> eval_csv, eval_json;
  PolicyFlags eval_flags;
  sim::EvalConfig eval_cfg;
  eval_cfg.seed = bench.session_seed;
  evaluate->add_option("--corpus", eval_corpus, "Manifest JSON")->required();
  evaluate->add_option("--queries", eval_queries, "Query JSON-lines file")->required();
  evaluate->add_option("--policies", eval_flags.policies, "Comma-separated policies")->capture_default_str();
  evaluate->add_option("--prune", eval_flags.prune, "on, off or both")->capture_default_str();
  evaluate->add_option("--ablate", eval_flags.ablate, "Comma-separated: softupd, staterep, distemb");
  evaluate->add_option("--checkpoints", eval_flags.checkpoints, "Checkpoint directory (for ours)");
  evaluate->add_option("--seed", eval_cfg.seed)->capture_default_str();
  evaluate->add_option("--workers", eval_cfg.workers)->capture_default_str();
  evaluate->add_option("--csv", eval_csv, "CSV output (stdout when omitted)");
  evaluate->add_option("--json", eval_json, "JSON report output");
  add_params(evaluate, eval_cfg.params);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  fs::path serve_corpus;
  std::optional<fs::path> serve_checkpoints, serve_log_dir;
  std::string serve_host = "0.0.0.0";
  int serve_port = 8080;
  service::ServiceConfig serve_cfg;
  serve->add_option("--corpus", serve_corpus, "Manifest JSON")->required();
  serve->add_option("--checkpoints", serve_checkpoints, "Checkpoint directory; without it the default policy is pichunter");
  serve->add_option("--port", serve_port)->capture_default_str();
  serve->add_option("--host", serve_host)->capture_default_str();
  serve->add_option("--log-dir", serve_log_dir, "Session snapshots (default: $KIS_LOG_DIR)");
  serve->add_option("--cors-origin", serve_cfg.cors_origin)->capture_default_str();
  serve->add_option("--seed", serve_cfg.seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (ingest->parsed()) return cmd_ingest(ingest_manifest, ingest_check);

    if (synth->parsed()) {
      const auto corpus = sim::synth_corpus(synth_spec);
      const auto manifest = save_corpus(corpus, synth_out);
      std::cout << "corpus: " << manifest.string() << '\n';
      if (synth_per_bucket > 0) {
        const auto queries = sim::calibrated_queries(corpus, sim::kDepthBuckets, synth_per_bucket, synth_query_seed);
        sim::write_queries(synth_out / "queries.jsonl", corpus, queries);
        std::cout << "queries: " << (synth_out / "queries.jsonl").string() << " (" << queries.size() << ")\n";
      }
      return 0;
    }

    if (gen->parsed()) {
      const auto corpus = load_corpus(gen_corpus);
      sim::TrajectoryStats stats;
      const auto records = sim::generate_trajectories(corpus, gen_opts, &stats);
      fs::create_directories(gen_out);
      sim::write_trajectories(gen_out / "trajectories.jsonl", records);
      json meta{{"manifest", fs::absolute(gen_corpus).string()},
                {"sessions", stats.sessions},
                {"kept", stats.kept},
                {"seed", gen_opts.seed},
                {"diverse_rate", gen_opts.diverse_rate}};
      write_text(gen_out / "meta.json", meta.dump(2) + "\n");
      std::cout << "kept " << stats.kept << " of " << stats.sessions << " sessions\n";
      return 0;
    }

    if (train->parsed()) {
      const auto meta = json::parse(std::ifstream(train_dir / "meta.json"));
      const auto corpus = load_corpus(meta.at("manifest").get<std::string>());
      const auto f = corpus.find_space(train_space);
      if (!f) throw std::runtime_error("unknown space '" + train_space + "'");
      const auto records = sim::read_trajectories(train_dir / "trajectories.jsonl");
      train_cfg.use_state = !no_state;
      train_cfg.use_distance = !no_distance;
      train_cfg.input_dim = static_cast<int>(corpus.space(*f).dim());
      const auto data = sim::build_dataset(corpus, *f, records);
      perception::Predictor<float> predictor(train_cfg, train_init_seed);
      train_opts.on_epoch = [](int epoch, double tl, double vl) {
        std::cout << "epoch " << epoch + 1 << " train " << tl << " val " << vl << '\n';
      };
      const auto result = perception::train(predictor, data, train_opts);
      perception::save_checkpoint(train_out, predictor);
      std::cout << "checkpoint: " << train_out.string() << " (best epoch " << result.best_epoch + 1 << ")\n";
      return 0;
    }

    if (simulate->parsed()) {
      const auto corpus = load_corpus(sim_corpus);
      const auto queries = sim::read_queries(sim_queries, corpus);
      sim::Policy policy;
      const auto dash = sim_policy.find('-');
      policy.kind = sim::parse_policy_kind(sim_policy.substr(0, dash));
      if (dash != std::string::npos) policy.ablation = sim::parse_ablation(sim_policy.substr(dash + 1));
      sim::PredictorSet predictors;
      if (policy.kind == sim::PolicyKind::ours) {
        if (!sim_checkpoints) throw std::runtime_error("policy 'ours' needs --checkpoints");
        predictors = sim::load_predictor_set(*sim_checkpoints, corpus,
                                             policy.ablation == sim::Ablation::soft_update ? sim::Ablation::none
                                                                                           : policy.ablation);
      }
      sim::SessionOptions opts;
      opts.label_noise = sim_noise;
      opts.strategy = parse_strategy(sim_strategy);
      const auto end = std::min<std::size_t>(queries.size(), static_cast<std::size_t>(sim_first + sim_count));
      for (auto i = static_cast<std::size_t>(sim_first); i < end; ++i) {
        const auto trace = sim::run_session(corpus, queries[i].target, queries[i].vectors, policy, sim_params,
                                            &predictors, derive_seed(sim_seed, {i}), opts);
        json row{{"query", i},
                 {"target_id", corpus.manifest().items[static_cast<std::size_t>(queries[i].target)].item_id},
                 {"initial_rank", trace.initial_rank},
                 {"ranks", trace.ranks},
                 {"reached", trace.reached()}};
        std::cout << row.dump() << '\n';
      }
      return 0;
    }

    if (evaluate->parsed()) {
      const auto corpus = load_corpus(eval_corpus);
      const auto queries = sim::read_queries(eval_queries, corpus);
      PredictorStore store;
      const auto policies = build_policies(eval_flags, corpus, store);
      const auto report = sim::evaluate(corpus, queries, policies, eval_cfg);
      if (eval_csv) {
        write_text(*eval_csv, report.csv());
      } else {
        std::cout << report.csv();
      }
      if (eval_json) write_text(*eval_json, report.json().dump(2) + "\n");
      return 0;
    }

    if (serve->parsed()) {
      const auto corpus = load_corpus(serve_corpus);
      std::optional<sim::PredictorSet> predictors;
      if (serve_checkpoints) predictors = sim::load_predictor_set(*serve_checkpoints, corpus);
      if (serve_log_dir) {
        serve_cfg.log_dir = *serve_log_dir;
      } else if (const char* env = std::getenv("KIS_LOG_DIR"); env != nullptr && *env != '\0') {
        serve_cfg.log_dir = fs::path(env);
      }
      serve_cfg.asset_root = fs::absolute(serve_corpus).parent_path();
      service::SessionService svc(corpus, predictors ? &*predictors : nullptr, serve_cfg);
      httplib::Server server;
      svc.register_routes(server);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      spdlog::info("serving {} items on {}:{}", corpus.num_items(), serve_host, serve_port);
      if (!server.listen(serve_host, serve_port)) {
        spdlog::error("cannot listen on {}:{}", serve_host, serve_port);
        return 1;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
