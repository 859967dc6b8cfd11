#pragma once

// Command-line surface: configuration, the five subcommands and report
// generation. Everything here is callable in-process through run_cli().

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "activeprune/al_sim.hpp"
#include "activeprune/corpus.hpp"
#include "activeprune/error.hpp"
#include "activeprune/http_transport.hpp"
#include "activeprune/ngram_lm.hpp"
#include "activeprune/prune.hpp"
#include "activeprune/quality.hpp"
#include "activeprune/tokenizer.hpp"
#include "activeprune/util.hpp"

namespace activeprune::app {

namespace fs = std::filesystem;

inline constexpr const char* kScorerUrlEnv = "ACTIVEPRUNE_SCORER_URL";

struct ScorerSettings {
  /// Empty selects the built-in mock scorer.
  std::string url;
  unsigned parallelism = 1;
  int attempts = 3;
  /// Prompt template file; empty uses the bundled default.
  std::string prompt;
};

struct RunConfig {
  std::string train_path;
  std::string test_path;
  std::string lm_corpus;
  std::string lm_model;
  int lm_order = 5;
  int lm_min_count = 1;
  PruneConfig prune;
  std::vector<PruneMode> modes{PruneMode::kActivePrune, PruneMode::kRandom};
  AcquisitionStrategy strategy;
  std::uint32_t iterations = 5;
  double label_fraction = 0.01;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  TrainOptions train;
  std::uint32_t feature_dim = 1u << 18;
  std::string task = "sentiment";
  ScorerSettings scorer;
  std::string out_dir = "runs";
  unsigned threads = 1;

  /// Checks every invariant that does not need the data. With check_paths,
  /// the files a `run` reads must exist.
  void validate(bool check_paths) const {
    prune.validate();
    if (modes.empty()) throw Error(ErrorCode::kConfig, "prune.modes must not be empty");
    if (seeds.empty()) throw Error(ErrorCode::kConfig, "al.seeds must not be empty");
    if (iterations < 1) throw Error(ErrorCode::kConfig, "al.iterations must be >= 1");
    if (!(label_fraction > 0.0 && label_fraction <= 1.0)) {
      throw Error(ErrorCode::kConfig, "al.label_fraction must be in (0, 1]");
    }
    if (lm_order < 1 || lm_order > kMaxOrder) throw Error(ErrorCode::kConfig, "order must be 1..5");
    if (lm_min_count < 1) throw Error(ErrorCode::kConfig, "lm.min_count must be >= 1");
    if (feature_dim < 1024 || (feature_dim & (feature_dim - 1)) != 0) {
      throw Error(ErrorCode::kConfig, "al.feature_dim must be a power of two >= 1024");
    }
    if (train.epochs < 1 || !(train.lr > 0.0) || !(train.l2 >= 0.0) || !(train.lr_decay >= 0.0)) {
      throw Error(ErrorCode::kConfig, "al.epochs, al.lr, al.l2 or al.lr_decay out of range");
    }
    if (threads < 1 || scorer.parallelism < 1) throw Error(ErrorCode::kConfig, "thread counts must be >= 1");
    if (scorer.attempts < 1) throw Error(ErrorCode::kConfig, "scorer.attempts must be >= 1");
    TaskType::parse(task);
    if (!check_paths) return;
    const auto need = [](const std::string& path, const char* key) {
      if (path.empty()) throw Error(ErrorCode::kConfig, std::string(key) + " is required");
      if (!fs::exists(path)) throw Error(ErrorCode::kIo, std::string(key) + ": no such file: " + path);
    };
    need(train_path, "data.train");
    need(test_path, "data.test");
    if (lm_model.empty()) {
      need(lm_corpus, "lm.corpus or lm.model");
    } else {
      need(lm_model, "lm.model");
    }
    if (!scorer.prompt.empty()) need(scorer.prompt, "scorer.prompt");
  }

  std::string to_ini() const {
    std::ostringstream o;
    const auto join_modes = [&] {
      std::string s;
      for (auto m : modes) s += (s.empty() ? "" : ", ") + std::string(to_string(m));
      return s;
    };
    std::string seed_list;
    for (auto s : seeds) seed_list += (seed_list.empty() ? "" : ", ") + std::to_string(s);
    o << "[data]\ntrain = " << train_path << "\ntest = " << test_path << "\n\n";
    o << "[lm]\ncorpus = " << lm_corpus << "\nmodel = " << lm_model << "\norder = " << lm_order
      << "\nmin_count = " << lm_min_count << "\n\n";
    o << "[prune]\nmode = " << to_string(prune.mode) << "\nmodes = " << join_modes()
      << "\nkeep_fraction = " << format_double(prune.keep_fraction)
      << "\nquality_share = " << format_double(prune.quality_share) << "\nm = " << (prune.m ? std::to_string(*prune.m) : "auto")
      << "\nbeta = " << format_double(prune.beta) << "\ncumulative_reweight = " << (prune.cumulative_reweight ? "true" : "false")
      << "\ncache_quality = " << (prune.cache_quality ? "true" : "false") << "\n\n";
    o << "[al]\nstrategy = " << to_string(strategy.kind) << "\niterations = " << iterations
      << "\nlabel_fraction = " << format_double(label_fraction) << "\nseeds = " << seed_list
      << "\nfeature_dim = " << feature_dim << "\nepochs = " << train.epochs << "\nlr = " << format_double(train.lr)
      << "\nl2 = " << format_double(train.l2) << "\nlr_decay = " << format_double(train.lr_decay)
      << "\nbatch_size = " << train.batch_size << "\ntask = " << task << "\n\n";
    o << "[scorer]\nurl = " << scorer.url << "\nparallelism = " << scorer.parallelism << "\nattempts = " << scorer.attempts
      << "\nprompt = " << scorer.prompt << "\n\n";
    o << "[run]\nout = " << out_dir << "\nthreads = " << threads << "\n";
    return o.str();
  }
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorCode::kConfig, key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  try {
    if constexpr (std::is_floating_point_v<T>) {
      return static_cast<T>(parse_double(v));
    } else {
      return parse_int<T>(v);
    }
  } catch (const Error&) {
    throw Error(ErrorCode::kConfig, key + ": invalid number '" + v + "'");
  }
}

}  // namespace detail

/// Applies `key = value` items from INI text on top of `base`. Unknown keys
/// are rejected so that a typo cannot silently fall back to a default.
inline RunConfig apply_config(RunConfig cfg, const std::string& text) {
  std::istringstream in(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(in);
  } catch (const CLI::Error& e) {
    throw Error(ErrorCode::kConfig, std::string("config: ") + e.what());
  }
  for (const auto& it : items) {
    if (it.name == "++" || it.name == "--") continue;
    std::string key = it.name;
    for (auto p = it.parents.rbegin(); p != it.parents.rend(); ++p) key = *p + "." + key;
    const std::vector<std::string>& in_vals = it.inputs;
    const std::string v = in_vals.empty() ? std::string() : in_vals.front();
    const auto single = [&]() -> const std::string& {
      if (in_vals.size() > 1) throw Error(ErrorCode::kConfig, key + ": expected a single value");
      return v;
    };
    using detail::parse_bool;
    using detail::parse_number;
    if (key == "data.train") cfg.train_path = single();
    else if (key == "data.test") cfg.test_path = single();
    else if (key == "lm.corpus") cfg.lm_corpus = single();
    else if (key == "lm.model") cfg.lm_model = single();
    else if (key == "lm.order") cfg.lm_order = parse_number<int>(key, single());
    else if (key == "lm.min_count") cfg.lm_min_count = parse_number<int>(key, single());
    else if (key == "prune.mode") cfg.prune.mode = parse_prune_mode(single());
    else if (key == "prune.modes") {
      cfg.modes.clear();
      for (const auto& m : in_vals) cfg.modes.push_back(parse_prune_mode(m));
    } else if (key == "prune.keep_fraction") cfg.prune.keep_fraction = parse_number<double>(key, single());
    else if (key == "prune.quality_share") cfg.prune.quality_share = parse_number<double>(key, single());
    else if (key == "prune.m") {
      if (single() == "auto" || v.empty()) {
        cfg.prune.m.reset();
      } else {
        cfg.prune.m = parse_number<std::uint64_t>(key, v);
      }
    } else if (key == "prune.beta") cfg.prune.beta = parse_number<double>(key, single());
    else if (key == "prune.cumulative_reweight") cfg.prune.cumulative_reweight = parse_bool(key, single());
    else if (key == "prune.cache_quality") cfg.prune.cache_quality = parse_bool(key, single());
    else if (key == "al.strategy") cfg.strategy.kind = parse_acquisition(single());
    else if (key == "al.iterations") cfg.iterations = parse_number<std::uint32_t>(key, single());
    else if (key == "al.label_fraction") cfg.label_fraction = parse_number<double>(key, single());
    else if (key == "al.seeds") {
      cfg.seeds.clear();
      for (const auto& s : in_vals) cfg.seeds.push_back(parse_number<std::uint64_t>(key, s));
    } else if (key == "al.feature_dim") cfg.feature_dim = parse_number<std::uint32_t>(key, single());
    else if (key == "al.epochs") cfg.train.epochs = parse_number<int>(key, single());
    else if (key == "al.lr") cfg.train.lr = parse_number<double>(key, single());
    else if (key == "al.l2") cfg.train.l2 = parse_number<double>(key, single());
    else if (key == "al.lr_decay") cfg.train.lr_decay = parse_number<double>(key, single());
    else if (key == "al.batch_size") cfg.train.batch_size = parse_number<std::size_t>(key, single());
    else if (key == "al.task") cfg.task = single();
    else if (key == "scorer.url") cfg.scorer.url = single();
    else if (key == "scorer.parallelism") cfg.scorer.parallelism = parse_number<unsigned>(key, single());
    else if (key == "scorer.attempts") cfg.scorer.attempts = parse_number<int>(key, single());
    else if (key == "scorer.prompt") cfg.scorer.prompt = single();
    else if (key == "run.out") cfg.out_dir = single();
    else if (key == "run.threads") cfg.threads = parse_number<unsigned>(key, single());
    else throw Error(ErrorCode::kConfig, "unknown config key '" + key + "'");
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) { return apply_config(RunConfig{}, read_file(path)); }

// ---------------------------------------------------------------------------
// Shared plumbing

inline std::unique_ptr<Scorer> make_scorer(const RunConfig& cfg, const Vocabulary& vocab) {
  if (cfg.scorer.url.empty()) return std::make_unique<MockScorer>(vocab);
  std::optional<PromptTemplate> tmpl;
  tmpl = cfg.scorer.prompt.empty() ? PromptTemplate::load_default() : PromptTemplate(read_file(cfg.scorer.prompt));
  return std::make_unique<RemoteScorer>(std::make_shared<HttpTransport>(cfg.scorer.url),
                                        RetryPolicy{cfg.scorer.attempts, std::chrono::milliseconds(250)}, tmpl);
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::vector<std::string> out;
  const std::string text = read_file(path);
  for (auto line : split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (has_visible_text(line)) out.emplace_back(line);
  }
  return out;
}

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream o;
  o << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return o.str();
}

inline std::string host_name() {
  char buf[256] = {};
  return gethostname(buf, sizeof(buf) - 1) == 0 ? std::string(buf) : std::string("unknown");
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// train-lm

struct TrainLmSummary {
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::size_t types = 0;
  double build_ms = 0.0;
};

inline TrainLmSummary cmd_train_lm(const std::string& corpus_path, int order, int min_count, const std::string& out_dir,
                                   unsigned /*threads*/, std::ostream& out) {
  if (order < 1 || order > kMaxOrder) throw Error(ErrorCode::kConfig, "order must be 1..5");
  if (!fs::exists(corpus_path)) throw Error(ErrorCode::kIo, "no such file: " + corpus_path);
  const auto t0 = std::chrono::steady_clock::now();
  const auto lines = read_lines(corpus_path);
  TrainLmSummary s;
  s.sentences = lines.size();
  for (const auto& l : lines) s.tokens += split_tokens(l).size();
  const auto vocab = build_vocabulary(lines, min_count);
  const auto model = train_ngram_from_text(lines, order, vocab);
  s.types = vocab.size();
  s.build_ms = elapsed_ms(t0);
  fs::create_directories(out_dir);
  save_binary(model, (fs::path(out_dir) / "model.aplm").string());
  export_arpa(model, (fs::path(out_dir) / "model.arpa").string());
  save_vocabulary(vocab, (fs::path(out_dir) / "vocab.txt").string());
  out << "sentences " << s.sentences << "\ntokens " << s.tokens << "\ntypes " << s.types << "\n";
  for (int n = 1; n <= order; ++n) out << "ngram " << n << " " << model.ngram_count(n) << "\n";
  out << "build_ms " << std::llround(s.build_ms) << "\n";
  return s;
}

// ---------------------------------------------------------------------------
// prune

inline PruneOutcome cmd_prune(const std::string& dataset_path, const std::string& model_path, const RunConfig& cfg,
                              std::uint64_t seed, const std::string& out_dir, std::ostream& out) {
  const Dataset ds = load_dataset(dataset_path);
  PruneConfig pc = cfg.prune;
  pc.seed = seed;
  // Feasibility depends on N only, so it is checked before the model loads.
  pc.check_feasible(ds.size());
  if (!fs::exists(model_path)) throw Error(ErrorCode::kIo, "no such file: " + model_path);
  const NGramModel model = load_binary(model_path);
  const RunState state = RunState::fresh(perplexity_values(score_pool(model, ds, cfg.threads)), seed);
  auto scorer = make_scorer(cfg, model.vocab());
  auto outcome = prune_step(state, pc, ds, scorer.get(), TaskType::parse(cfg.task), cfg.scorer.parallelism);
  fs::create_directories(out_dir);
  std::string ids;
  for (DocId id : outcome.pool.ids) ids += std::to_string(id) + "\n";
  write_file((fs::path(out_dir) / "pool_ids.txt").string(), ids);
  auto report = outcome.report.to_json();
  report["mode"] = std::string(to_string(pc.mode));
  report["seed"] = seed;
  report["pool_size"] = outcome.pool.ids.size();
  report["unlabeled"] = ds.size();
  write_file((fs::path(out_dir) / "prune_report.json").string(), report.dump(2) + "\n");
  out << "kept " << outcome.pool.ids.size() << " of " << ds.size() << " (" << outcome.report.from_perplexity
      << " by perplexity, " << outcome.report.from_quality << " by quality, " << outcome.report.scorer_calls
      << " scorer calls)\n";
  return outcome;
}

// ---------------------------------------------------------------------------
// run

inline std::string run_dir(const std::string& out_dir, PruneMode mode, std::uint64_t seed) {
  return (fs::path(out_dir) / std::string(to_string(mode)) / ("seed_" + std::to_string(seed))).string();
}

/// Latest checkpoint in dir, or nullopt.
inline std::optional<std::string> latest_checkpoint(const std::string& dir) {
  std::optional<std::string> best;
  std::uint64_t best_it = 0;
  if (!fs::exists(dir)) return best;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    const std::string prefix = "state_iter_", suffix = ".json";
    if (name.rfind(prefix, 0) != 0 || name.size() <= prefix.size() + suffix.size()) continue;
    if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
    const auto digits = name.substr(prefix.size(), name.size() - prefix.size() - suffix.size());
    try {
      const auto it = parse_int<std::uint64_t>(digits);
      if (!best || it > best_it) {
        best_it = it;
        best = e.path().string();
      }
    } catch (const Error&) {
    }
  }
  return best;
}

inline std::vector<IterationMetrics> parse_metrics_csv(const std::string& text) {
  std::vector<IterationMetrics> rows;
  bool header = true;
  for (auto line : split(text, '\n')) {
    if (line.empty()) continue;
    if (header) {
      if (line != kMetricsCsvHeader) throw Error(ErrorCode::kParse, "unexpected metrics header");
      header = false;
      continue;
    }
    const auto f = split(line, ',');
    if (f.size() != 8) throw Error(ErrorCode::kParse, "metrics row needs 8 fields");
    IterationMetrics m;
    m.iteration = parse_int<std::uint32_t>(f[0]);
    m.f1_macro = parse_double(f[1]);
    m.labeled_count = parse_int<std::size_t>(f[2]);
    m.pruning_ms = parse_int<std::int64_t>(f[3]);
    m.scoring_ms = parse_int<std::int64_t>(f[4]);
    m.acquisition_ms = parse_int<std::int64_t>(f[5]);
    m.training_ms = parse_int<std::int64_t>(f[6]);
    m.scorer_calls = parse_int<std::uint64_t>(f[7]);
    rows.push_back(m);
  }
  return rows;
}

struct MeanSem {
  double mean = 0.0;
  double sem = 0.0;
};

/// Mean and standard error of the mean (sample standard deviation over
/// sqrt(n)); the error is 0 for a single value.
inline MeanSem mean_sem(const std::vector<double>& v) {
  if (v.empty()) throw Error(ErrorCode::kInvalidArgument, "mean of nothing");
  MeanSem r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  if (v.size() < 2) return r;
  double ss = 0.0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.sem = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  return r;
}

inline constexpr const char* kAggregateCsvHeader =
    "mode,iteration,runs,f1_mean,f1_sem,labeled_count_mean,scorer_calls_mean,scorer_calls_sem";

/// One row per (mode, iteration); only deterministic quantities, so the file
/// is byte-stable across reruns. Timings live in the per-run CSVs.
inline std::string aggregate_csv(const std::vector<std::pair<PruneMode, std::vector<std::vector<IterationMetrics>>>>& runs) {
  std::string out = std::string(kAggregateCsvHeader) + "\n";
  for (const auto& [mode, per_seed] : runs) {
    std::size_t iters = 0;
    for (const auto& r : per_seed) iters = std::max(iters, r.size());
    for (std::size_t i = 0; i < iters; ++i) {
      std::vector<double> f1, labeled, calls;
      for (const auto& r : per_seed) {
        if (i >= r.size()) continue;
        f1.push_back(r[i].f1_macro);
        labeled.push_back(static_cast<double>(r[i].labeled_count));
        calls.push_back(static_cast<double>(r[i].scorer_calls));
      }
      const auto f = mean_sem(f1), l = mean_sem(labeled), c = mean_sem(calls);
      out += std::string(to_string(mode)) + "," + std::to_string(i + 1) + "," + std::to_string(f1.size()) + "," +
             format_double(f.mean) + "," + format_double(f.sem) + "," + format_double(l.mean) + "," +
             format_double(c.mean) + "," + format_double(c.sem) + "\n";
    }
  }
  return out;
}

inline NGramModel obtain_model(const RunConfig& cfg, std::ostream& out) {
  if (!cfg.lm_model.empty()) return load_binary(cfg.lm_model);
  const auto lm_dir = (fs::path(cfg.out_dir) / "lm").string();
  cmd_train_lm(cfg.lm_corpus, cfg.lm_order, cfg.lm_min_count, lm_dir, cfg.threads, out);
  return load_binary((fs::path(lm_dir) / "model.aplm").string());
}

/// Runs every (mode, seed) pair. With `resume`, finished runs are reused and
/// unfinished ones continue from their latest checkpoint. On failure a FAILED
/// marker naming the error is left next to the partial results.
inline int cmd_run(const RunConfig& cfg, bool resume, std::ostream& out, std::ostream& err) {
  cfg.validate(true);
  fs::create_directories(cfg.out_dir);
  const auto failed_marker = (fs::path(cfg.out_dir) / "FAILED").string();
  if (fs::exists(failed_marker)) fs::remove(failed_marker);
  nlohmann::json manifest{{"started_at", utc_timestamp()}, {"host", host_name()}, {"config", cfg.to_ini()},
                          {"resume", resume}, {"runs", nlohmann::json::array()}};
  const auto manifest_path = (fs::path(cfg.out_dir) / "manifest.json").string();
  write_file(manifest_path, manifest.dump(2) + "\n");
  std::string current = "setup";
  try {
    const Dataset train = load_dataset(cfg.train_path);
    const Dataset test = load_dataset(cfg.test_path);
    for (PruneMode mode : cfg.modes) {
      PruneConfig pc = cfg.prune;
      pc.mode = mode;
      pc.check_feasible(train.size());
    }
    const NGramModel model = obtain_model(cfg, out);
    const auto ppl = perplexity_values(score_pool(model, train, cfg.threads));
    std::vector<std::pair<PruneMode, std::vector<std::vector<IterationMetrics>>>> all;
    for (PruneMode mode : cfg.modes) {
      all.emplace_back(mode, std::vector<std::vector<IterationMetrics>>{});
      for (std::uint64_t seed : cfg.seeds) {
        const std::string dir = run_dir(cfg.out_dir, mode, seed);
        current = std::string(to_string(mode)) + " seed " + std::to_string(seed);
        const auto metrics_path = (fs::path(dir) / "metrics.csv").string();
        const auto ckpt_dir = (fs::path(dir) / "checkpoints").string();
        nlohmann::json entry{{"mode", std::string(to_string(mode))}, {"seed", seed}, {"dir", dir}};
        if (resume && fs::exists(metrics_path)) {
          all.back().second.push_back(parse_metrics_csv(read_file(metrics_path)));
          entry["status"] = "reused";
        } else {
          if (!resume && fs::exists(dir)) fs::remove_all(dir);
          fs::create_directories(dir);
          std::optional<RunState> initial;
          if (resume) {
            if (auto ck = latest_checkpoint(ckpt_dir)) initial = load_state(*ck);
          }
          entry["status"] = initial ? "resumed" : "fresh";
          if (initial) entry["resumed_from_iteration"] = initial->iteration;
          AlConfig al;
          al.prune = cfg.prune;
          al.prune.mode = mode;
          al.strategy = cfg.strategy;
          al.iterations = cfg.iterations;
          al.label_fraction = cfg.label_fraction;
          al.seed = seed;
          al.train = cfg.train;
          al.feature_dim = cfg.feature_dim;
          al.task = TaskType::parse(cfg.task);
          al.threads = cfg.threads;
          al.checkpoint_dir = ckpt_dir;
          auto scorer = make_scorer(cfg, model.vocab());
          const auto result = run_active_learning(train, test, ppl, al, scorer.get(), initial);
          write_file(metrics_path, metrics_csv(result.metrics));
          all.back().second.push_back(result.metrics);
          out << to_string(mode) << " seed " << seed << ": final f1 " << format_double(result.metrics.back().f1_macro)
              << "\n";
        }
        manifest["runs"].push_back(entry);
      }
    }
    write_file((fs::path(cfg.out_dir) / "aggregate.csv").string(), aggregate_csv(all));
    manifest["finished_at"] = utc_timestamp();
    manifest["status"] = "ok";
    write_file(manifest_path, manifest.dump(2) + "\n");
    return 0;
  } catch (const std::exception& e) {
    write_file(failed_marker, current + ": " + e.what() + "\n");
    manifest["finished_at"] = utc_timestamp();
    manifest["status"] = "failed";
    manifest["error"] = e.what();
    write_file(manifest_path, manifest.dump(2) + "\n");
    err << "error: " << current << ": " << e.what() << "\n";
    return 1;
  }
}

// ---------------------------------------------------------------------------
// report

struct ModeSummary {
  std::string mode;
  std::size_t runs = 0;
  double pruning_ms = 0.0;
  double scoring_ms = 0.0;
  double scorer_calls = 0.0;
  double acquisition_training_ms = 0.0;
  double total_ms = 0.0;
  double final_f1 = 0.0;
};

/// Means over completed runs of per-run totals, one entry per mode.
inline std::vector<ModeSummary> summarize_runs(const std::string& dir) {
  std::vector<ModeSummary> out;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kIo, "no such directory: " + dir);
  std::vector<fs::path> modes;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) modes.push_back(e.path());
  }
  std::sort(modes.begin(), modes.end());
  for (const auto& mode_dir : modes) {
    ModeSummary s;
    s.mode = mode_dir.filename().string();
    std::vector<fs::path> seeds;
    for (const auto& e : fs::directory_iterator(mode_dir)) {
      if (e.is_directory() && fs::exists(e.path() / "metrics.csv")) seeds.push_back(e.path());
    }
    std::sort(seeds.begin(), seeds.end());
    for (const auto& sd : seeds) {
      const auto rows = parse_metrics_csv(read_file((sd / "metrics.csv").string()));
      if (rows.empty()) continue;
      ++s.runs;
      for (const auto& r : rows) {
        s.pruning_ms += static_cast<double>(r.pruning_ms);
        s.scoring_ms += static_cast<double>(r.scoring_ms);
        s.scorer_calls += static_cast<double>(r.scorer_calls);
        s.acquisition_training_ms += static_cast<double>(r.acquisition_ms + r.training_ms);
      }
      s.final_f1 += rows.back().f1_macro;
    }
    if (s.runs == 0) continue;
    const double n = static_cast<double>(s.runs);
    s.pruning_ms /= n;
    s.scoring_ms /= n;
    s.scorer_calls /= n;
    s.acquisition_training_ms /= n;
    s.final_f1 /= n;
    s.total_ms = s.pruning_ms + s.scoring_ms + s.acquisition_training_ms;
    out.push_back(s);
  }
  if (out.empty()) throw Error(ErrorCode::kIo, "no completed run found under " + dir);
  return out;
}

inline constexpr const char* kEfficiencyCsvHeader =
    "mode,runs,pruning_ms,scoring_ms,scorer_calls,acquisition_training_ms,total_ms";
inline constexpr const char* kTradeoffCsvHeader = "mode,total_ms,final_f1";

inline std::string efficiency_csv(const std::vector<ModeSummary>& rows) {
  std::string out = std::string(kEfficiencyCsvHeader) + "\n";
  for (const auto& s : rows) {
    out += s.mode + "," + std::to_string(s.runs) + "," + format_double(s.pruning_ms) + "," +
           format_double(s.scoring_ms) + "," + format_double(s.scorer_calls) + "," +
           format_double(s.acquisition_training_ms) + "," + format_double(s.total_ms) + "\n";
  }
  return out;
}

/// Sorted by total time ascending, ties by mode name.
inline std::string tradeoff_csv(std::vector<ModeSummary> rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ModeSummary& a, const ModeSummary& b) {
    return a.total_ms != b.total_ms ? a.total_ms < b.total_ms : a.mode < b.mode;
  });
  std::string out = std::string(kTradeoffCsvHeader) + "\n";
  for (const auto& s : rows) out += s.mode + "," + format_double(s.total_ms) + "," + format_double(s.final_f1) + "\n";
  return out;
}

inline void cmd_report(const std::string& dir, std::ostream& out) {
  const auto rows = summarize_runs(dir);
  write_file((fs::path(dir) / "efficiency.csv").string(), efficiency_csv(rows));
  write_file((fs::path(dir) / "tradeoff.csv").string(), tradeoff_csv(rows));
  out << efficiency_csv(rows);
}

// ---------------------------------------------------------------------------
// score

/// Scores every document of a dataset; writes one JSON object per line.
inline void cmd_score(const std::string& dataset_path, const std::string& model_path, const RunConfig& cfg,
                      std::ostream& out) {
  const Dataset ds = load_dataset(dataset_path);
  Vocabulary vocab;
  if (!model_path.empty()) {
    vocab = load_binary(model_path).vocab();
  } else {
    std::vector<std::string> texts;
    for (const auto& d : ds.documents()) texts.push_back(d.text);
    vocab = build_vocabulary(texts, 1);
  }
  auto scorer = make_scorer(cfg, vocab);
  ScorerBudget budget{0, ds.size()};
  const auto scores = score_documents(*scorer, ds.documents(), TaskType::parse(cfg.task), budget, cfg.scorer.parallelism);
  for (const auto& s : scores) {
    out << nlohmann::json{{"id", s.doc_id}, {"q", s.q}}.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Entry point

/// Parses argv and dispatches. Returns the process exit status.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App cli{"Perplexity and quality based pool pruning for active learning"};
  cli.require_subcommand(1);
  cli.fallthrough();
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  bool print_config = false;
  cli.add_option("--config", config_path, "INI config file")->check(CLI::ExistingFile);
  cli.add_option("--out", out_dir, "output directory (or file for score)");
  cli.add_option("--seed", seed, "single seed overriding al.seeds");
  cli.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  cli.add_flag("--print-effective-config", print_config, "print the resolved config and exit");

  auto* train_lm = cli.add_subcommand("train-lm", "train a Kneser-Ney LM and export binary, ARPA and vocab");
  std::string corpus;
  std::optional<int> order, min_count;
  train_lm->add_option("--corpus", corpus, "one sentence per line");
  train_lm->add_option("--order", order, "n-gram order, 1..5");
  train_lm->add_option("--min-count", min_count, "vocabulary threshold");

  auto* prune = cli.add_subcommand("prune", "one pruning step over a dataset");
  std::string dataset, model;
  std::optional<std::string> mode;
  prune->add_option("--dataset", dataset, "JSONL or TSV pool")->required();
  prune->add_option("--model", model, "binary LM from train-lm")->required();
  prune->add_option("--mode", mode, "active_prune, random, perplexity_only or quality_only");

  auto* run = cli.add_subcommand("run", "active learning simulations over seeds and modes");
  bool resume = false;
  run->add_flag("--resume", resume, "reuse finished runs and continue from checkpoints");

  auto* report = cli.add_subcommand("report", "efficiency and tradeoff CSVs for a run directory");
  std::string report_dir;
  report->add_option("--run-dir", report_dir, "directory written by run (defaults to --out)");

  auto* score = cli.add_subcommand("score", "quality scores for a dataset, one JSON object per line");
  std::string score_dataset, score_model;
  std::optional<std::string> task;
  score->add_option("--dataset", score_dataset, "JSONL or TSV file")->required();
  score->add_option("--model", score_model, "binary LM whose vocabulary the mock scorer uses");
  score->add_option("--task", task, "task name");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e, out, err);
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    if (const char* url = std::getenv(kScorerUrlEnv); url != nullptr && *url != '\0') cfg.scorer.url = url;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed) cfg.seeds = {*seed};
    if (threads) cfg.threads = *threads;
    if (!corpus.empty()) cfg.lm_corpus = corpus;
    if (order) cfg.lm_order = *order;
    if (min_count) cfg.lm_min_count = *min_count;
    if (mode) cfg.prune.mode = parse_prune_mode(*mode);
    if (task) cfg.task = *task;
    if (print_config) {
      out << cfg.to_ini();
      return 0;
    }
    if (*train_lm) {
      if (cfg.lm_order < 1 || cfg.lm_order > kMaxOrder) throw Error(ErrorCode::kConfig, "order must be 1..5");
      if (cfg.lm_corpus.empty()) throw Error(ErrorCode::kConfig, "--corpus is required");
      cmd_train_lm(cfg.lm_corpus, cfg.lm_order, cfg.lm_min_count, cfg.out_dir, cfg.threads, out);
      return 0;
    }
    if (*prune) {
      cfg.validate(false);
      cmd_prune(dataset, model, cfg, cfg.seeds.front(), cfg.out_dir, out);
      return 0;
    }
    if (*run) return cmd_run(cfg, resume, out, err);
    if (*report) {
      cmd_report(report_dir.empty() ? cfg.out_dir : report_dir, out);
      return 0;
    }
    if (*score) {
      cfg.validate(false);
      if (out_dir.empty()) {
        cmd_score(score_dataset, score_model, cfg, out);
      } else {
        std::ostringstream buf;
        cmd_score(score_dataset, score_model, cfg, buf);
        write_file(out_dir, buf.str());
      }
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace activeprune::app
