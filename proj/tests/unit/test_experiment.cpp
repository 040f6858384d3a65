#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "preq/experiment.hpp"
#include "preq/predictor.hpp"

using namespace preq;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("preq-test-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json tiny_config(const fs::path& out) {
  const Json learner = {{"n_layers", 1}, {"n_heads", 2}, {"d_model", 8},  {"d_ff", 16},
                        {"d_bottleneck", 4}, {"head_depth", 2}, {"head_width", 8}, {"max_context", 24}};
  return {{"schema_version", 1},
          {"experiment", "tiny"},
          {"task", {{"family", "linear"}, {"input_dim", 1}}},
          {"learners", {{{"name", "preq"}, {"learner", learner}, {"objective", {{"kind", "prequential"}}}}}},
          {"marginal_baseline", false},
          {"train", {{"epochs", 1}, {"batch_size", 4}, {"n_tasks", 8}, {"n_points", 12}}},
          {"eval", {{"n_tasks", 4}, {"n_points", 16}, {"grid", {0, 2, 6}}, {"n_query", 4}}},
          {"seeds", {0, 1}},
          {"output_dir", out.string()}};
}

ResultsRow row(const std::string& learner, int size, std::uint64_t seed, double err) {
  ResultsRow r;
  r.experiment = "e";
  r.learner = learner;
  r.objective = "prequential";
  r.family = "linear";
  r.context_size = size;
  r.seed = seed;
  r.error = err;
  r.stderr_ = 0.01;
  r.timestamp = "2024-01-01T00:00:00Z";
  r.code_version = "test";
  r.config_hash = "0123456789abcdef";
  return r;
}

}  // namespace

TEST_CASE("config parsing") {
  const fs::path out = scratch("cfg");
  Json j = tiny_config(out);
  const ExperimentConfig c = experiment_config_from_json(j);
  CHECK(c.learners.size() == 1);
  CHECK(c.eval_grid() == std::vector<int>{0, 2, 6});
  CHECK(experiment_config_from_json(to_json(c)).learners[0].learner == c.learners[0].learner);
  CHECK(config_hash(c) == config_hash(experiment_config_from_json(to_json(c))));

  Json bad = j;
  bad["learners"][0]["learner"]["n_layerz"] = 3;
  CHECK_THROWS(experiment_config_from_json(bad));
  bad = j;
  bad["schema_version"] = 99;
  CHECK_THROWS(experiment_config_from_json(bad));
  bad = j;
  bad["seeds"] = Json::array();
  CHECK_THROWS(experiment_config_from_json(bad));

  // Key order does not change the hash; values do.
  const Json a = Json::parse(R"({"x":1,"y":{"b":2,"a":3}})");
  const Json b = Json::parse(R"({"y":{"a":3,"b":2},"x":1})");
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a) != config_hash(Json::parse(R"({"x":2,"y":{"b":2,"a":3}})")));
  CHECK(config_hash(a).size() == 16);
  // FNV-1a 64 of "{}".
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : std::string("{}")) h = (h ^ static_cast<unsigned char>(ch)) * 0x100000001b3ULL;
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  CHECK(config_hash(Json::object()) == hex);
}

TEST_CASE("results table") {
  const fs::path dir = scratch("store");
  std::vector<ResultsRow> rows{row("a", 0, 0, 1.0 / 3), row("a", 4, 0, 0.25), row("b", 0, 0, 2.0)};
  rows[2].error_kind = ErrorKind::cross_entropy;
  CHECK(parse_rows(format_rows(rows)) == rows);
  CHECK(format_rows(rows).rfind("#preq-results v1", 0) == 0);
  {
    ResultsStore s(dir);
    s.append(rows);
    CHECK(s.contains("e", "a", 4, 0));
    CHECK_FALSE(s.contains("e", "a", 4, 1));
    const std::vector<ResultsRow> dup{row("c", 0, 0, 1.0), row("a", 0, 0, 5.0)};
    CHECK_THROWS(s.append(dup));
    const std::vector<ResultsRow> twice{row("d", 0, 0, 1.0), row("d", 0, 0, 1.0)};
    CHECK_THROWS(s.append(twice));
    CHECK(s.rows().size() == 3);
    s.record_failure({{"unit", "x"}, {"error", "boom"}});
  }
  ResultsStore again(dir);
  CHECK(again.rows() == rows);
  CHECK(again.failures().size() == 1);
  CHECK(fs::exists(again.manifest_path()));

  std::ofstream(dir / "junk.tsv") << "not a table\n";
  CHECK_THROWS(parse_rows(slurp(dir / "junk.tsv")));
}

TEST_CASE("curves from rows combine seeds") {
  const std::vector<ResultsRow> rows{row("a", 0, 0, 1.0), row("a", 0, 1, 3.0), row("a", 4, 0, 0.5),
                                     row("a", 4, 1, 0.5)};
  const auto curves = curves_from_rows(rows);
  REQUIRE(curves.size() == 1);
  CHECK(curves[0].context_sizes == std::vector<int>{0, 4});
  CHECK(curves[0].mean_error[0] == doctest::Approx(2.0));
  CHECK(curves[0].mean_error[1] == doctest::Approx(0.5));
  CHECK(curves[0].stderr_[0] == doctest::Approx(1.0));
}

TEST_CASE("runs are idempotent and write artifacts") {
  const fs::path out = scratch("run");
  const ExperimentConfig c = experiment_config_from_json(tiny_config(out));
  const RunSummary first = run(c);
  CHECK(first.failures.empty());
  CHECK(first.rows_added == 6);
  const RunSummary second = run(c);
  CHECK(second.rows_added == 0);
  CHECK(second.units_skipped == 2);
  ResultsStore store(out);
  CHECK(store.rows().size() == 6);
  for (const ResultsRow& r : store.rows()) CHECK(r.config_hash == config_hash(c));

  const fs::path unit = out / "units" / "preq" / "seed-0";
  const Checkpoint ck = load_checkpoint(unit / "model.pqck");
  CHECK(ck.config.d_model == 8);
  CHECK(read_loss_trace(unit / "trace.tsv").size() == 1);

  // The saved model reproduces the stored errors.
  const auto learner = std::make_shared<SequenceLearner<float>>(ck.config, ck.params);
  const LearnerPredictor pred(learner, "preq");
  const MetaDataset eval = load_dataset(out / "data" / "seed-0-eval");
  const PrequentialCurve curve = eval_curve(pred, eval, c.eval_grid(), c.eval);
  for (const ResultsRow& r : store.rows()) {
    if (r.seed != 0) continue;
    const auto it = std::find(curve.context_sizes.begin(), curve.context_sizes.end(), r.context_size);
    REQUIRE(it != curve.context_sizes.end());
    CHECK(curve.mean_error[static_cast<std::size_t>(it - curve.context_sizes.begin())] ==
          doctest::Approx(r.error).epsilon(1e-9));
  }
}

TEST_CASE("a failing unit does not stop the run") {
  const fs::path out = scratch("fail");
  Json j = tiny_config(out);
  j["learners"].push_back(j["learners"][0]);
  j["learners"][1]["name"] = "broken";
  // A plain file where the unit directory should go.
  fs::create_directories(out / "units");
  std::ofstream(out / "units" / "broken") << "x";
  const RunSummary s = run(experiment_config_from_json(j));
  CHECK_FALSE(s.failures.empty());
  ResultsStore store(out);
  CHECK(store.rows().size() == 6);
  for (const ResultsRow& r : store.rows()) CHECK(r.learner == "preq");
  CHECK_FALSE(store.failures().empty());
}

TEST_CASE("checkpoint and dataset roundtrips") {
  const fs::path dir = scratch("art");
  LearnerConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_model = 8;
  cfg.d_ff = 8;
  cfg.d_bottleneck = 4;
  cfg.head_depth = 2;
  cfg.head_width = 8;
  cfg.max_context = 16;
  cfg = configure_io(cfg, TaskSpec::mastermind(3, 3));
  const SequenceLearner<float> l(cfg, 5);
  save_checkpoint(dir / "m.pqck", l, {{"note", "x"}});
  const Checkpoint ck = load_checkpoint(dir / "m.pqck");
  CHECK(ck.config == cfg);
  CHECK(ck.params.flatten() == l.params().flatten());
  CHECK(ck.meta["note"] == "x");
  CHECK(slurp(dir / "m.pqck").rfind("PQCK", 0) == 0);
  std::string bytes = slurp(dir / "m.pqck");
  std::ofstream(dir / "cut.pqck", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS(load_checkpoint(dir / "cut.pqck"));

  for (const TaskSpec& spec : {TaskSpec::linear(2), TaskSpec::mastermind(), TaskSpec::chebyshev(2),
                               TaskSpec::sinusoid()}) {
    const MetaDataset d = make_meta_dataset(spec, 3, 7, 2, Split::eval);
    save_dataset(dir / "d", d);
    const MetaDataset back = load_dataset(dir / "d");
    CHECK(back.spec == d.spec);
    REQUIRE(back.episodes.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) {
      CHECK(back.episodes[e].points == d.episodes[e].points);
      CHECK(back.episodes[e].params == d.episodes[e].params);
    }
  }

  const std::vector<EpochStats> trace{{0, 1.5, 0.25}, {1, 1.0 / 3, 0.5}};
  write_loss_trace(dir / "t.tsv", trace);
  const auto t = read_loss_trace(dir / "t.tsv");
  REQUIRE(t.size() == 2);
  CHECK(t[1].mean_loss == 1.0 / 3);
}

TEST_CASE("plots") {
  const fs::path dir = scratch("plots");
  std::vector<ResultsRow> rows{row("a", 0, 0, 1.0), row("a", 4, 0, 0.5), row("b", 0, 0, 2.0),
                              row("b", 4, 0, 0.7)};
  PlotSelection sel;
  PlotOutput p1 = emit_plots(rows, sel, dir / "one");
  PlotOutput p2 = emit_plots(rows, sel, dir / "two");
  REQUIRE(p1.files.size() == 1);
  CHECK(slurp(p1.files[0]) == slurp(p2.files[0]));
  CHECK(p1.notice.empty());

  sel.gap = std::make_pair(std::string("a"), std::string("b"));
  const PlotOutput g = emit_plots(rows, sel, dir / "gap");
  REQUIRE(g.files.size() == 1);
  CHECK(g.files[0].filename().string().find("_gap_a_minus_b") != std::string::npos);
  const std::string svg = slurp(g.files[0]);
  std::size_t paths = 0;
  for (std::size_t q = 0; (q = svg.find("<polygon", q)) != std::string::npos; ++q) ++paths;
  CHECK(paths == 1);

  PlotSelection none;
  none.experiment = "nothing";
  const PlotOutput n = emit_plots(rows, none, dir / "none");
  CHECK(n.files.empty());
  CHECK_FALSE(n.notice.empty());
}

TEST_CASE("inferred functions") {
  const TaskSpec spec = TaskSpec::chebyshev(2, 8);
  const MetaDataset d = make_meta_dataset(spec, 1, 20, 3, Split::eval);
  const Episode& ep = d.episodes[0];
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(-1.0 + 0.1 * i);
  const OraclePredictor oracle;
  const InferredFunction f = visualize_inferred_function(oracle, ep, 10, grid);
  CHECK(f.grid == grid);
  REQUIRE(f.predicted.size() == grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) CHECK(f.predicted[i] == doctest::Approx(f.truth[i]));
  CHECK(f.coefficients.size() == 8);
  CHECK(f.excess_norm == doctest::Approx(0.0));

  const std::vector<double> alpha{1, 2, 3, 4, 0, 0, 0, 0};
  CHECK(excess_degree_norm(alpha, 1) == doctest::Approx(5.0));
  CHECK(excess_degree_norm(alpha, 3) == doctest::Approx(0.0));

  CHECK_THROWS(visualize_inferred_function(oracle, make_meta_dataset(TaskSpec::mastermind(), 1, 5, 1, Split::eval).episodes[0], 2, grid));
  CHECK(render_inferred_svg(f, ep, "t") == render_inferred_svg(f, ep, "t"));
}

TEST_CASE("shipped configs load") {
  int n = 0;
  for (const auto& e : fs::directory_iterator(fs::path(PREQ_SOURCE_DIR) / "configs")) {
    if (e.path().extension() != ".json" || e.path().stem() == "probe") continue;
    CAPTURE(e.path().string());
    CHECK_NOTHROW(load_experiment_config(e.path()));
    ++n;
  }
  CHECK(n >= 4);
  std::ifstream in(fs::path(PREQ_SOURCE_DIR) / "configs" / "probe.json");
  CHECK_NOTHROW(probe_config_from_json(Json::parse(in)).validate());
}
