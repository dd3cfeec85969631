#include "vidloop/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include "vidloop/errors.hpp"
#include "vidloop/gateway.hpp"
#include "vidloop/reflection.hpp"
#include "vidloop/simulator.hpp"
#include "vidloop/store.hpp"
#include "vidloop/tma.hpp"

namespace vidloop::cli {

namespace {

namespace fs = std::filesystem;

struct AskOptions {
  std::string store_path;
  std::string question;
  std::string backend = "mock";
  std::string endpoint;
  std::string model;
  std::string api_key_env = kApiKeyEnv;
  int timeout_ms = 30'000;
  int max_retries = 1;
  double sampling_temperature = 0.0;
  bool mock_fallback = false;
  std::vector<double> mock_scores{0.9};
  std::string mock_verdict;
  std::string embedder = "hash";
  std::string embed_endpoint;
  std::string embed_model;
  std::uint64_t embed_seed = 0;
  std::size_t max_rounds = 3;
  double stop_threshold = 0.7;
  std::size_t caption_seeds = 16;
  double mmr_lambda = 0.5;
  double softmax_temperature = 1.0;
  std::vector<std::size_t> static_schedule;
  std::vector<std::size_t> dynamic_schedule;
  bool stochastic = false;
  std::uint64_t seed = 0;
  std::string trace_path;
  std::string format = "text";
};

struct ImportOptions {
  std::string dir;
  std::string embeddings;
  std::string timestamps;
  std::string out;
};

struct ExportOptions {
  std::string store_path;
  std::string out_dir;
};

struct TmaOptions {
  std::size_t samples = 101;
  double lambda_txt = 0.3;
  double lambda_img = 0.3;
  std::string out;
};

struct SimulateOptions {
  std::size_t seeds = 100;
  std::size_t steps = 20;
  double eta = 0.5;
  std::size_t frames = 32;
  std::size_t dim = 32;
  std::size_t planted = 4;
  std::size_t draws = 4;
  double temperature = 0.15;
  std::string baseline = "running_mean";
  std::uint64_t seed_offset = 0;
  bool quiet = false;
  std::string format = "text";
};

// Thrown for failures that map to exit code 2.
struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageFailure(fmt::format("cannot read '{}'", path.string()));
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageFailure(fmt::format("cannot write '{}'", path.string()));
  out << text;
  if (!out) throw UsageFailure(fmt::format("failed writing '{}'", path.string()));
}

std::vector<std::vector<double>> parse_matrix(const std::string& text, const std::string& name) {
  std::vector<std::vector<double>> rows;
  std::istringstream lines(text);
  std::size_t line_no = 0;
  for (std::string line; std::getline(lines, line);) {
    ++line_no;
    std::istringstream fields(line);
    std::vector<double> row;
    for (std::string field; fields >> field;) {
      char* end = nullptr;
      const double value = std::strtod(field.c_str(), &end);
      if (end == field.c_str() || *end != '\0') {
        throw UsageFailure(fmt::format("{}:{}: '{}' is not a number", name, line_no, field));
      }
      row.push_back(value);
    }
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw UsageFailure(fmt::format("{}:{}: row has {} values, expected {}", name, line_no,
                                     row.size(), rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<double> parse_list(const std::string& text, const std::string& name) {
  std::vector<double> values;
  for (const auto& row : parse_matrix(text, name)) values.insert(values.end(), row.begin(), row.end());
  return values;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Backend> make_chat_backend(const AskOptions& o, const std::string& api_key) {
  MockScript script;
  script.evaluator_scores = o.mock_scores;
  if (o.mock_verdict == "accept") script.evaluator_verdict = Decision::Accept;
  if (o.mock_verdict == "reject") script.evaluator_verdict = Decision::Reject;
  auto mock = std::make_unique<MockBackend>(make_scripted_mock(std::move(script)));
  if (o.backend == "mock") return mock;

  BackendConfig config;
  config.kind = BackendKind::http;
  config.endpoint = o.endpoint;
  config.model_name = o.model;
  config.api_key = api_key;
  config.timeout = std::chrono::milliseconds(o.timeout_ms);
  config.max_retries = o.max_retries;
  config.sampling_temperature = o.sampling_temperature;
  auto http = std::make_unique<HttpBackend>(std::move(config));
  if (o.mock_fallback) return std::make_unique<FallbackBackend>(std::move(http), std::move(mock));
  return http;
}

int cmd_ask(const AskOptions& o, std::ostream& out, std::ostream& err) {
  EmbeddingStore store = [&] {
    try {
      return load_store(o.store_path);
    } catch (const Error& e) {
      throw UsageFailure(e.what());
    }
  }();

  LoopConfig config;
  config.max_rounds = o.max_rounds;
  config.stop_threshold = o.stop_threshold;
  config.seed_frames_for_caption = o.caption_seeds;
  config.retrieval.mmr_lambda = o.mmr_lambda;
  config.retrieval.softmax_temperature = o.softmax_temperature;
  config.retrieval.stochastic = o.stochastic;
  config.retrieval.rng_seed = o.seed;
  auto prefix = [&](std::vector<std::size_t> schedule) {
    if (schedule.size() > o.max_rounds) schedule.resize(o.max_rounds);
    return schedule;
  };
  config.retrieval.static_schedule =
      o.static_schedule.empty() ? prefix(config.retrieval.static_schedule) : o.static_schedule;
  config.retrieval.dynamic_schedule =
      o.dynamic_schedule.empty() ? prefix(config.retrieval.dynamic_schedule) : o.dynamic_schedule;
  try {
    config.validate();
  } catch (const ValidationError& e) {
    throw UsageFailure(e.what());
  }

  std::string api_key;
  if (const char* env = std::getenv(o.api_key_env.c_str()); env != nullptr) api_key = env;

  std::unique_ptr<Backend> backend;
  std::unique_ptr<TextEmbedder> embedder;
  try {
    backend = make_chat_backend(o, api_key);
    if (o.embedder == "http") {
      BackendConfig embed_config;
      embed_config.kind = BackendKind::http;
      embed_config.endpoint = o.embed_endpoint;
      embed_config.model_name = o.embed_model;
      embed_config.api_key = api_key;
      embed_config.timeout = std::chrono::milliseconds(o.timeout_ms);
      embed_config.max_retries = o.max_retries;
      embedder = std::make_unique<HttpTextEmbedder>(std::move(embed_config));
    } else {
      embedder = std::make_unique<HashingTextEmbedder>(store.dim(), o.embed_seed);
    }
  } catch (const ValidationError& e) {
    throw UsageFailure(e.what());
  }
  Gateway gateway(std::move(backend));

  LoopResult result;
  try {
    result = run_loop(o.question, store, gateway, *embedder, config);
  } catch (const LoopError& e) {
    if (!o.trace_path.empty()) write_text(o.trace_path, trace_to_json(e.trace()) + "\n");
    fmt::print(err, "error: {}\n", e.what());
    return kExitBackend;
  } catch (const ValidationError& e) {
    throw UsageFailure(e.what());
  }

  if (!o.trace_path.empty()) write_text(o.trace_path, trace_to_json(result.trace) + "\n");
  if (o.format == "json") {
    const nlohmann::json summary{{"answer", result.answer},
                                 {"mode", std::string(to_string(result.mode))},
                                 {"rounds", result.trace.size()},
                                 {"used_fallback", result.used_fallback},
                                 {"global_caption", result.global_caption}};
    out << summary.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
  } else {
    fmt::print(out, "mode: {}\nrounds: {}\nfallback: {}\nanswer: {}\n", to_string(result.mode),
               result.trace.size(), result.used_fallback ? "yes" : "no", result.answer);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_import(const ImportOptions& o, std::ostream& out) {
  fs::path embeddings_path = o.embeddings;
  fs::path timestamps_path = o.timestamps;
  if (!o.dir.empty()) {
    if (embeddings_path.empty()) embeddings_path = fs::path(o.dir) / "embeddings.txt";
    if (timestamps_path.empty()) timestamps_path = fs::path(o.dir) / "timestamps.txt";
  }
  if (embeddings_path.empty() || timestamps_path.empty()) {
    throw UsageFailure("import needs --dir or both --embeddings and --timestamps");
  }

  const auto rows = parse_matrix(read_file(embeddings_path), embeddings_path.string());
  const auto timestamps = parse_list(read_file(timestamps_path), timestamps_path.string());
  if (rows.empty()) throw UsageFailure("no embedding rows found");
  if (timestamps.size() != rows.size()) {
    throw UsageFailure(fmt::format("{} embedding rows but {} timestamps", rows.size(),
                                   timestamps.size()));
  }

  // Rows already at unit length are written untouched so that an exported
  // store re-imports to identical bytes.
  std::vector<std::vector<double>> unit_rows;
  unit_rows.reserve(rows.size());
  try {
    for (const auto& row : rows) {
      const double length = norm(row);
      unit_rows.push_back(std::abs(length - 1.0) <= 1e-6 ? row : normalize(row));
    }
    const EmbeddingStore store =
        EmbeddingStore::from_rows(unit_rows, timestamps, EmbeddingStore::kFlagNormalized);
    save_store(store, o.out);
    fmt::print(out, "wrote {} frames x {} dims to {}\n", store.n_frames(), store.dim(), o.out);
  } catch (const Error& e) {
    throw UsageFailure(e.what());
  }
  return kExitOk;
}

int cmd_export(const ExportOptions& o, std::ostream& out) {
  try {
    const EmbeddingStore store = load_store(o.store_path);
    fs::create_directories(o.out_dir);
    std::string rows;
    for (std::size_t i = 0; i < store.n_frames(); ++i) {
      const auto row = store.raw_row(i);
      for (std::size_t k = 0; k < row.size(); ++k) {
        if (k > 0) rows += ' ';
        rows += fmt::format("{:.9g}", row[k]);
      }
      rows += '\n';
    }
    std::string times;
    for (double t : store.timestamps()) times += fmt::format("{:.17g}\n", t);
    write_text(fs::path(o.out_dir) / "embeddings.txt", rows);
    write_text(fs::path(o.out_dir) / "timestamps.txt", times);
    fmt::print(out, "exported {} frames to {}\n", store.n_frames(), o.out_dir);
  } catch (const Error& e) {
    throw UsageFailure(e.what());
  } catch (const fs::filesystem_error& e) {
    throw UsageFailure(e.what());
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_tma(const TmaOptions& o, std::ostream& out) {
  tma::Schedule schedule;
  schedule.lambda_txt = o.lambda_txt;
  schedule.lambda_img = o.lambda_img;
  std::string table = "u,alpha_txt,alpha_img\n";
  try {
    for (const auto& s : tma::sample_schedule(o.samples, schedule)) {
      table += fmt::format("{:.10g},{:.10g},{:.10g}\n", s.u, s.alpha_txt, s.alpha_img);
    }
  } catch (const ValidationError& e) {
    throw UsageFailure(e.what());
  }
  if (o.out.empty()) {
    out << table;
  } else {
    write_text(o.out, table);
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
  if (o.seeds < 1 || o.steps < 1) throw UsageFailure("--seeds and --steps must be at least 1");
  PolicyGradConfig pg;
  pg.step_size = o.eta;
  pg.baseline_mode = o.baseline == "zero" ? BaselineMode::zero : BaselineMode::running_mean;
  RetrievalConfig retrieval;
  retrieval.softmax_temperature = o.temperature;
  NumericLoopOptions loop;
  loop.steps = o.steps;
  loop.draws = o.draws;

  const std::size_t window = std::max<std::size_t>(1, std::min<std::size_t>(10, o.steps / 2));
  std::vector<double> improvements;
  std::vector<double> mean_trajectory(o.steps, 0.0);
  nlohmann::json per_seed = nlohmann::json::array();
  std::string lines;
  try {
    for (std::size_t i = 0; i < o.seeds; ++i) {
      const std::uint64_t seed = o.seed_offset + i;
      const PlantedEnv env = make_env(o.frames, o.dim, o.planted, seed);
      retrieval.rng_seed = seed ^ 0x5deece66dULL;
      const auto trajectory = run_numeric_loop(env, pg, retrieval, loop);
      const std::span<const double> rewards(trajectory.rewards);
      const double first = mean(rewards.first(window));
      const double last = mean(rewards.last(window));
      improvements.push_back(last - first);
      for (std::size_t k = 0; k < o.steps; ++k) mean_trajectory[k] += rewards[k] / o.seeds;
      if (o.format == "json") {
        per_seed.push_back({{"seed", seed}, {"first", first}, {"last", last},
                            {"improvement", last - first},
                            {"slope", least_squares_slope(rewards)}});
      } else if (!o.quiet) {
        lines += fmt::format("seed {}: first={:.4f} last={:.4f} improvement={:+.4f} slope={:+.5f}\n",
                             seed, first, last, last - first, least_squares_slope(rewards));
      }
    }
  } catch (const ValidationError& e) {
    throw UsageFailure(e.what());
  }

  const double mean_improvement = mean(improvements);
  const double stderr_improvement = stddev(improvements) / std::sqrt(static_cast<double>(o.seeds));
  const double drift = least_squares_slope(mean_trajectory);
  if (o.format == "json") {
    const nlohmann::json summary{{"seeds", o.seeds},
                                 {"steps", o.steps},
                                 {"window", window},
                                 {"eta", o.eta},
                                 {"mean_improvement", mean_improvement},
                                 {"stderr_improvement", stderr_improvement},
                                 {"drift_slope", drift},
                                 {"per_seed", per_seed}};
    out << summary.dump(2) << "\n";
  } else {
    out << lines;
    fmt::print(out,
               "seeds={} steps={} window={} eta={}\n"
               "mean_improvement={:+.4f} stderr={:.4f}\n"
               "drift_slope={:+.6f}\n",
               o.seeds, o.steps, window, o.eta, mean_improvement, stderr_improvement, drift);
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Evidence-set selection loop over cached frame embeddings, plus attention gain "
               "schedules",
               "vidloop"};
  app.require_subcommand(1);

  AskOptions ask;
  auto* ask_cmd = app.add_subcommand("ask", "Answer a question over a store with the reflection loop");
  ask_cmd->add_option("--store", ask.store_path, "Embedding store (.uveb)")->required();
  ask_cmd->add_option("--question", ask.question, "Question about the video")->required();
  ask_cmd->add_option("--backend", ask.backend, "Chat backend")
      ->check(CLI::IsMember({"mock", "http"}))
      ->capture_default_str();
  ask_cmd->add_option("--endpoint", ask.endpoint, "Chat-completions URL (http backend)");
  ask_cmd->add_option("--model", ask.model, "Model name (http backend)");
  ask_cmd->add_option("--api-key-env", ask.api_key_env, "Environment variable holding the API key")
      ->capture_default_str();
  ask_cmd->add_option("--timeout-ms", ask.timeout_ms, "Per-request timeout")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ask_cmd->add_option("--max-retries", ask.max_retries, "Retries on transport errors")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  ask_cmd->add_option("--sampling-temperature", ask.sampling_temperature,
                      "Sampling temperature sent to the backend")
      ->capture_default_str();
  ask_cmd->add_flag("--mock-fallback", ask.mock_fallback,
                    "Answer from the scripted mock when the http backend is unreachable");
  ask_cmd->add_option("--mock-score", ask.mock_scores,
                      "Scripted evaluator scores, one per round (last repeats)")
      ->check(CLI::Range(0.0, 1.0))
      ->delimiter(',');
  ask_cmd->add_option("--mock-verdict", ask.mock_verdict, "Force the scripted evaluator verdict")
      ->check(CLI::IsMember({"accept", "reject"}));
  ask_cmd->add_option("--embedder", ask.embedder, "Text embedder for search text")
      ->check(CLI::IsMember({"hash", "http"}))
      ->capture_default_str();
  ask_cmd->add_option("--embed-endpoint", ask.embed_endpoint, "Embeddings URL (http embedder)");
  ask_cmd->add_option("--embed-model", ask.embed_model, "Embedding model (http embedder)");
  ask_cmd->add_option("--embed-seed", ask.embed_seed, "Hash seed (hash embedder)")
      ->capture_default_str();
  ask_cmd->add_option("--max-rounds", ask.max_rounds, "Round budget")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ask_cmd->add_option("--stop-threshold", ask.stop_threshold, "Accept when score reaches this")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  ask_cmd->add_option("--caption-seeds", ask.caption_seeds, "Seed frames for the global caption")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ask_cmd->add_option("--mmr-lambda", ask.mmr_lambda, "Relevance weight in MMR shrink")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  ask_cmd->add_option("--softmax-temperature", ask.softmax_temperature,
                      "Temperature of the retrieval softmax")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  ask_cmd->add_option("--static-schedule", ask.static_schedule,
                      "Working-set sizes per round for static questions (default 4,8,16)")
      ->delimiter(',');
  ask_cmd->add_option("--dynamic-schedule", ask.dynamic_schedule,
                      "Working-set sizes per round for dynamic questions (default 64,32,16)")
      ->delimiter(',');
  ask_cmd->add_flag("--stochastic", ask.stochastic, "Sample expansions from the soft policy");
  ask_cmd->add_option("--seed", ask.seed, "Seed for stochastic retrieval")->capture_default_str();
  ask_cmd->add_option("--trace", ask.trace_path, "Write the per-round trace as JSON");
  ask_cmd->add_option("--format", ask.format, "Output format")
      ->check(CLI::IsMember({"text", "json"}))
      ->capture_default_str();

  ImportOptions import;
  auto* import_cmd = app.add_subcommand("import", "Build a store from text embedding rows");
  import_cmd->add_option("--dir", import.dir,
                         "Directory holding embeddings.txt and timestamps.txt");
  import_cmd->add_option("--embeddings", import.embeddings,
                         "Text matrix, one whitespace-separated row per frame");
  import_cmd->add_option("--timestamps", import.timestamps, "Timestamps in seconds, one per frame");
  import_cmd->add_option("--out", import.out, "Output store path")->required();

  ExportOptions exp;
  auto* export_cmd = app.add_subcommand("export", "Write a store back out as text rows");
  export_cmd->add_option("--store", exp.store_path, "Embedding store (.uveb)")->required();
  export_cmd->add_option("--out-dir", exp.out_dir, "Directory for embeddings.txt and timestamps.txt")
      ->required();

  TmaOptions tma_opts;
  auto* tma_cmd = app.add_subcommand("tma", "Dump the attention gain schedules as CSV");
  tma_cmd->add_option("--samples", tma_opts.samples, "Grid points on [0, 1]")
      ->check(CLI::Range(std::size_t{2}, std::size_t{10'000'000}))
      ->capture_default_str();
  tma_cmd->add_option("--lambda-txt", tma_opts.lambda_txt, "Peak extra text gain")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  tma_cmd->add_option("--lambda-img", tma_opts.lambda_img, "Peak extra image gain")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  tma_cmd->add_option("--out", tma_opts.out, "Output file (default stdout)");

  SimulateOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Run the numeric policy-gradient loop on planted pools");
  sim_cmd->add_option("--seeds", sim.seeds, "Independent environments")->capture_default_str();
  sim_cmd->add_option("--steps", sim.steps, "Updates per environment")->capture_default_str();
  sim_cmd->add_option("--eta", sim.eta, "Step size")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  sim_cmd->add_option("--frames", sim.frames, "Pool size")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sim_cmd->add_option("--dim", sim.dim, "Embedding dimension")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sim_cmd->add_option("--planted", sim.planted, "Evidence frames per pool")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sim_cmd->add_option("--draws", sim.draws, "Frames sampled per step")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sim_cmd->add_option("--temperature", sim.temperature, "Policy softmax temperature")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  sim_cmd->add_option("--baseline", sim.baseline, "Reward baseline")
      ->check(CLI::IsMember({"running_mean", "zero"}))
      ->capture_default_str();
  sim_cmd->add_option("--seed-offset", sim.seed_offset, "First environment seed")
      ->capture_default_str();
  sim_cmd->add_flag("--quiet", sim.quiet, "Print only the aggregate statistics");
  sim_cmd->add_option("--format", sim.format, "Output format")
      ->check(CLI::IsMember({"text", "json"}))
      ->capture_default_str();

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*ask_cmd) return cmd_ask(ask, out, err);
    if (*import_cmd) return cmd_import(import, out);
    if (*export_cmd) return cmd_export(exp, out);
    if (*tma_cmd) return cmd_tma(tma_opts, out);
    if (*sim_cmd) return cmd_simulate(sim, out);
  } catch (const UsageFailure& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace vidloop::cli
