#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "vidloop/cli.hpp"
#include "vidloop/errors.hpp"
#include "vidloop/gateway.hpp"
#include "vidloop/policy_grad.hpp"
#include "vidloop/prompts.hpp"
#include "vidloop/reflection.hpp"
#include "vidloop/retrieval.hpp"
#include "vidloop/simulator.hpp"
#include "vidloop/store.hpp"
#include "vidloop/tma.hpp"

namespace py = pybind11;
using namespace vidloop;

namespace {

SearchState query_of(const std::vector<double>& embedding) {
  return SearchState::make("", embedding);
}

WorkingSet working_of(std::vector<std::size_t> indices) {
  const std::size_t n = indices.size();
  return WorkingSet{std::move(indices), n};
}

PromptKind kind_of(const std::string& name) {
  const auto kind = prompt_kind_from_string(name);
  if (!kind) throw ValidationError("unknown prompt kind '" + name + "'");
  return *kind;
}

py::array_t<float> vectors_of(const EmbeddingStore& store) {
  py::array_t<float> out({store.n_frames(), store.dim()});
  auto view = out.mutable_unchecked<2>();
  const auto raw = store.raw();
  for (std::size_t i = 0; i < store.n_frames(); ++i) {
    for (std::size_t k = 0; k < store.dim(); ++k) view(i, k) = raw[i * store.dim() + k];
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_vidloop, m) {
  m.doc() = "Keyframe retrieval, reflection loop and attention-gain schedules";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<BoundsError>(m, "BoundsError", PyExc_IndexError);
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<TransportError>(m, "TransportError", base.ptr());
  py::register_exception<ServiceError>(m, "ServiceError", base.ptr());

  // store ------------------------------------------------------------------

  py::class_<EmbeddingStore>(m, "EmbeddingStore")
      .def(py::init([](const std::vector<std::vector<double>>& rows,
                       std::optional<std::vector<double>> timestamps, std::uint32_t flags) {
             if (!timestamps) {
               timestamps.emplace(rows.size());
               for (std::size_t i = 0; i < rows.size(); ++i) (*timestamps)[i] = static_cast<double>(i);
             }
             return EmbeddingStore::from_rows(rows, std::move(*timestamps), flags);
           }),
           py::arg("rows"), py::arg("timestamps") = py::none(), py::arg("flags") = 0u)
      .def_property_readonly("n_frames", &EmbeddingStore::n_frames)
      .def_property_readonly("dim", &EmbeddingStore::dim)
      .def_property_readonly("flags", &EmbeddingStore::flags)
      .def_property_readonly("normalized", &EmbeddingStore::normalized)
      .def_property_readonly("timestamps", [](const EmbeddingStore& s) {
        return std::vector<double>(s.timestamps().begin(), s.timestamps().end());
      })
      .def("vectors", &vectors_of, "Raw float32 rows as an (N, d) array.")
      .def("row", [](const EmbeddingStore& s, std::size_t i) {
        const auto r = s.row(i);
        return std::vector<double>(r.begin(), r.end());
      }, "Unit-normalized row i.")
      .def("__len__", &EmbeddingStore::n_frames)
      .def("__eq__", [](const EmbeddingStore& a, const EmbeddingStore& b) { return a == b; });

  m.def("load_store", &load_store, py::arg("path"));
  m.def("save_store", &save_store, py::arg("store"), py::arg("path"));
  m.def("store_file_size", &store_file_size, py::arg("n_frames"), py::arg("dim"));
  m.def("encode_store", [](const EmbeddingStore& s) { return py::bytes(encode_store(s)); });
  m.def("decode_store", [](const py::bytes& b) { return decode_store(std::string(b)); });
  m.def("normalize", [](const std::vector<double>& v) { return normalize(v); });

  // retrieval ----------------------------------------------------------------

  m.def("cosine_sim", [](const EmbeddingStore& s, std::size_t frame, const std::vector<double>& q) {
    return cosine_sim(s, frame, query_of(q));
  }, py::arg("store"), py::arg("frame"), py::arg("query"));
  m.def("policy_distribution",
        [](const EmbeddingStore& s, const std::vector<std::size_t>& pool,
           const std::vector<double>& q, double temperature) {
          RetrievalConfig cfg;
          cfg.softmax_temperature = temperature;
          return policy_distribution(s, pool, query_of(q), cfg);
        },
        py::arg("store"), py::arg("pool"), py::arg("query"), py::arg("temperature") = 1.0);
  m.def("expand_top_m",
        [](const EmbeddingStore& s, std::vector<std::size_t> working,
           const std::vector<double>& q, std::size_t target, bool stochastic,
           double temperature, std::uint64_t seed) {
          RetrievalConfig cfg;
          cfg.stochastic = stochastic;
          cfg.softmax_temperature = temperature;
          cfg.rng_seed = seed;
          return expand_top_m(s, working_of(std::move(working)), query_of(q), target, cfg).indices;
        },
        py::arg("store"), py::arg("working"), py::arg("query"), py::arg("target"),
        py::arg("stochastic") = false, py::arg("temperature") = 1.0, py::arg("seed") = 0);
  m.def("shrink_mmr_greedy",
        [](const EmbeddingStore& s, std::vector<std::size_t> working,
           const std::vector<double>& q, std::size_t target, double lambda) {
          return shrink_mmr_greedy(s, working_of(std::move(working)), query_of(q), target, lambda)
              .indices;
        },
        py::arg("store"), py::arg("working"), py::arg("query"), py::arg("target"),
        py::arg("mmr_lambda") = 0.5);
  m.def("mmr_objective",
        [](const EmbeddingStore& s, const std::vector<std::size_t>& subset,
           const std::vector<double>& q, double lambda) {
          return mmr_objective(s, subset, query_of(q), lambda);
        },
        py::arg("store"), py::arg("subset"), py::arg("query"), py::arg("mmr_lambda") = 0.5);
  m.def("mmr_brute_force",
        [](const EmbeddingStore& s, const std::vector<std::size_t>& pool,
           const std::vector<double>& q, std::size_t target, double lambda) {
          const auto best = mmr_brute_force(s, pool, query_of(q), target, lambda);
          return py::make_tuple(best.subset, best.objective);
        },
        py::arg("store"), py::arg("pool"), py::arg("query"), py::arg("target"),
        py::arg("mmr_lambda") = 0.5);

  // policy gradient ------------------------------------------------------------

  m.def("sim_gradient", [](const EmbeddingStore& s, std::size_t frame, const Vector& v) {
    return sim_gradient(s, frame, v);
  }, py::arg("store"), py::arg("frame"), py::arg("s"));
  m.def("log_policy_gradient",
        [](const EmbeddingStore& s, const std::vector<std::size_t>& pool, const Vector& v,
           std::size_t frame, double temperature) {
          return log_policy_gradient(s, pool, v, frame, temperature);
        },
        py::arg("store"), py::arg("pool"), py::arg("s"), py::arg("frame"),
        py::arg("temperature") = 1.0);
  m.def("surrogate_value",
        [](const EmbeddingStore& s, std::vector<std::size_t> w, const Vector& v, double gamma) {
          return surrogate_value(s, working_of(std::move(w)), v, gamma);
        },
        py::arg("store"), py::arg("working"), py::arg("s"), py::arg("gamma") = 0.5);
  m.def("surrogate_gradient",
        [](const EmbeddingStore& s, std::vector<std::size_t> w, const Vector& v, double gamma) {
          return surrogate_gradient(s, working_of(std::move(w)), v, gamma);
        },
        py::arg("store"), py::arg("working"), py::arg("s"), py::arg("gamma") = 0.5);
  m.def("reinforce_update",
        [](const EmbeddingStore& s, const Vector& v, const std::vector<std::size_t>& sampled,
           double reward, double baseline, double step_size, double temperature) {
          PolicyGradConfig cfg;
          cfg.step_size = step_size;
          cfg.temperature = temperature;
          return reinforce_update(v, sampled, reward, baseline, cfg, s);
        },
        py::arg("store"), py::arg("s"), py::arg("sampled"), py::arg("reward"),
        py::arg("baseline") = 0.0, py::arg("step_size") = 0.5, py::arg("temperature") = 1.0);

  // tma ------------------------------------------------------------------------

  m.def("alpha_txt", [](double u, double lambda_txt) {
    return tma::alpha_txt(u, tma::Schedule{lambda_txt, 0.3, 0.4, 0.6});
  }, py::arg("u"), py::arg("lambda_txt") = 0.3);
  m.def("alpha_img", [](double u, double lambda_img) {
    return tma::alpha_img(u, tma::Schedule{0.3, lambda_img, 0.4, 0.6});
  }, py::arg("u"), py::arg("lambda_img") = 0.3);
  m.def("attention_text_mass",
        [](std::size_t n_text, const py::array_t<double, py::array::c_style | py::array::forcecast>& scores,
           double u) {
          if (scores.ndim() != 2) throw ValidationError("scores must be a 2-D array");
          const auto rows = static_cast<std::size_t>(scores.shape(0));
          const auto cols = static_cast<std::size_t>(scores.shape(1));
          if (n_text > cols) throw ValidationError("more text keys than columns");
          std::vector<double> values(scores.data(), scores.data() + rows * cols);
          tma::AttentionInstance inst{n_text, cols - n_text,
                                      tma::ScoreMatrix(rows, cols, std::move(values)), u};
          return tma::attention_text_mass(inst);
        },
        py::arg("n_text"), py::arg("scores"), py::arg("u"));

  // prompts and parsers -----------------------------------------------------------

  m.def("render_prompt", [](const std::string& kind, const std::map<std::string, std::string>& f) {
    PromptFields fields(f.begin(), f.end());
    return render_prompt(kind_of(kind), fields);
  }, py::arg("kind"), py::arg("fields"));
  m.def("placeholders", [](const std::string& kind) { return placeholders(kind_of(kind)); });
  m.def("parse_evaluator", [](const std::string& reply) {
    const auto v = parse_evaluator(reply);
    py::dict d;
    d["score"] = v.score;
    d["verdict"] = std::string(to_string(v.decision));
    d["brief_reason"] = v.brief_reason;
    return d;
  });
  m.def("parse_reflector", [](const std::string& reply) { return parse_reflector(reply); });
  m.def("parse_router", [](const std::string& reply) {
    return std::string(to_string(parse_router(reply)));
  });

  // loop -----------------------------------------------------------------------

  m.def("ask_mock",
        [](const EmbeddingStore& store, const std::string& question,
           std::vector<double> scores, std::optional<std::string> verdict,
           std::size_t max_rounds, double stop_threshold) {
          MockScript script;
          script.evaluator_scores = std::move(scores);
          if (verdict) script.evaluator_verdict = *verdict == "accept" ? Decision::Accept : Decision::Reject;
          Gateway gateway(std::make_unique<MockBackend>(make_scripted_mock(std::move(script))));
          HashingTextEmbedder embedder(store.dim());
          LoopConfig cfg;
          cfg.max_rounds = max_rounds;
          cfg.stop_threshold = stop_threshold;
          cfg.retrieval.static_schedule.resize(std::min<std::size_t>(3, max_rounds));
          cfg.retrieval.dynamic_schedule.resize(std::min<std::size_t>(3, max_rounds));
          const auto result = run_loop(question, store, gateway, embedder, cfg);
          py::dict d;
          d["answer"] = result.answer;
          d["mode"] = std::string(to_string(result.mode));
          d["global_caption"] = result.global_caption;
          d["used_fallback"] = result.used_fallback;
          d["trace_json"] = trace_to_json(result.trace);
          return d;
        },
        py::arg("store"), py::arg("question"), py::arg("scores") = std::vector<double>{0.9},
        py::arg("verdict") = py::none(), py::arg("max_rounds") = 3,
        py::arg("stop_threshold") = 0.7,
        "Runs the reflection loop against the scripted mock backend.");

  // simulator --------------------------------------------------------------------

  m.def("simulate",
        [](std::uint64_t seed, std::size_t steps, double eta, std::size_t frames, std::size_t dim,
           std::size_t planted, std::size_t draws, double temperature) {
          const auto env = make_env(frames, dim, planted, seed);
          PolicyGradConfig pg;
          pg.step_size = eta;
          RetrievalConfig rc;
          rc.softmax_temperature = temperature;
          rc.rng_seed = seed ^ 0x5deece66dULL;
          NumericLoopOptions opt;
          opt.steps = steps;
          opt.draws = draws;
          return run_numeric_loop(env, pg, rc, opt).rewards;
        },
        py::arg("seed"), py::arg("steps") = 20, py::arg("eta") = 0.5, py::arg("frames") = 32,
        py::arg("dim") = 32, py::arg("planted") = 4, py::arg("draws") = 4,
        py::arg("temperature") = 0.15, "Reward trajectory of one planted environment.");

  m.def("cli", [](std::vector<std::string> args) {
    args.insert(args.begin(), "vidloop");
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli::run(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "Runs the command line in-process; returns (exit_code, stdout, stderr).");
}
