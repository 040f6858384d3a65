#include "preq/experiment.hpp"

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "preq/predictor.hpp"

#ifndef PREQ_VERSION
#define PREQ_VERSION "dev"
#endif

namespace preq {

namespace fs = std::filesystem;

std::string code_version() { return PREQ_VERSION; }

namespace {

bool plain_text(const std::string& s) {
  return s.find_first_of("\t\n\r") == std::string::npos;
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Json without(Json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (schema_version != kConfigSchemaVersion) {
    throw std::invalid_argument("config: unsupported schema_version " + std::to_string(schema_version));
  }
  if (experiment.empty() || !plain_text(experiment)) throw std::invalid_argument("config: bad experiment id");
  task.validate();
  if (learners.empty() && !baseline && !marginal_baseline) {
    throw std::invalid_argument("config: nothing to run");
  }
  std::set<std::string> names;
  auto add_name = [&](const std::string& n) {
    if (n.empty() || !plain_text(n)) throw std::invalid_argument("config: bad learner name");
    if (!names.insert(n).second) throw std::invalid_argument("config: duplicate learner name " + n);
  };
  const TaskSpec spec = finalize_spec(task, seeds.empty() ? 0 : seeds.front());
  for (const LearnerEntry& e : learners) {
    add_name(e.name);
    const LearnerConfig lc = configure_io(e.learner, spec);
    lc.validate();
    e.objective.validate(&task);
    if (e.train) e.train->validate();
    if (lc.max_context + 1 < std::max(train_points, eval_points)) {
      throw std::invalid_argument("config: learner " + e.name + " max_context below episode length");
    }
  }
  if (baseline) {
    add_name(baseline->name);
    baseline->config.validate();
    if (baseline->n_eval < 1) throw std::invalid_argument("config: baseline n_eval must be positive");
  }
  if (marginal_baseline) {
    add_name("marginal");
    if (!io_shape(task).categorical()) throw std::invalid_argument("config: marginal baseline needs labels");
  }
  train.validate();
  if (train_tasks < 1 || train_points < 1 || eval_tasks < 1 || eval_points < 1) {
    throw std::invalid_argument("config: task and point counts must be positive");
  }
  if (seeds.empty()) throw std::invalid_argument("config: no seeds");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw std::invalid_argument("config: duplicate seeds");
  }
  const std::vector<int> g = eval_grid();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (g[i] < 0 || (i > 0 && g[i] <= g[i - 1])) throw std::invalid_argument("config: grid must increase");
  }
  const int tail = eval.mode == EvalMode::held_out_tail ? eval.n_query : 1;
  if (g.empty() || g.back() + tail > eval_points) {
    throw std::invalid_argument("config: grid exceeds eval_points");
  }
  if (baseline && g.back() + baseline->n_eval > eval_points) {
    throw std::invalid_argument("config: baseline needs max(grid) + n_eval eval points");
  }
}

std::vector<int> ExperimentConfig::eval_grid() const {
  if (!grid.empty()) return grid;
  const int tail = eval.mode == EvalMode::held_out_tail ? eval.n_query : 1;
  return default_grid(std::max(0, eval_points - tail));
}

Json to_json(const ExperimentConfig& c) {
  Json learners = Json::array();
  for (const LearnerEntry& e : c.learners) {
    Json l = {{"name", e.name}, {"learner", to_json(e.learner)}, {"objective", to_json(e.objective)}};
    if (e.train) l["train"] = to_json(*e.train);
    learners.push_back(std::move(l));
  }
  Json train = to_json(c.train);
  train["n_tasks"] = c.train_tasks;
  train["n_points"] = c.train_points;
  Json eval = to_json(c.eval);
  eval["n_tasks"] = c.eval_tasks;
  eval["n_points"] = c.eval_points;
  eval["grid"] = c.grid;
  Json j = {{"schema_version", c.schema_version},
            {"experiment", c.experiment},
            {"task", to_json(c.task)},
            {"learners", learners},
            {"marginal_baseline", c.marginal_baseline},
            {"train", train},
            {"eval", eval},
            {"seeds", c.seeds},
            {"output_dir", c.output_dir}};
  if (c.baseline) {
    j["baseline"] = {{"name", c.baseline->name},
                     {"config", to_json(c.baseline->config)},
                     {"n_eval", c.baseline->n_eval}};
  }
  return j;
}

ExperimentConfig experiment_config_from_json(const Json& j) {
  require_known_fields(j,
                       {"schema_version", "experiment", "task", "learners", "baseline", "marginal_baseline",
                        "train", "eval", "seeds", "output_dir"},
                       "config");
  ExperimentConfig c;
  if (!j.contains("schema_version")) throw std::invalid_argument("config: missing schema_version");
  c.schema_version = j.at("schema_version").get<int>();
  if (c.schema_version != kConfigSchemaVersion) {
    throw std::invalid_argument("config: unsupported schema_version " + std::to_string(c.schema_version));
  }
  c.experiment = j.at("experiment").get<std::string>();
  c.task = task_spec_from_json(j.at("task"));
  if (j.contains("learners")) {
    for (const Json& l : j.at("learners")) {
      require_known_fields(l, {"name", "learner", "objective", "train"}, "learners[]");
      LearnerEntry e;
      e.name = l.at("name").get<std::string>();
      if (l.contains("learner")) e.learner = learner_config_from_json(l.at("learner"));
      if (l.contains("objective")) e.objective = objective_from_json(l.at("objective"));
      if (!l.contains("objective") || !l.at("objective").contains("loss")) e.objective.loss = error_kind_for(c.task);
      if (l.contains("train")) e.train = train_config_from_json(l.at("train"));
      c.learners.push_back(std::move(e));
    }
  }
  if (j.contains("baseline")) {
    const Json& b = j.at("baseline");
    require_known_fields(b, {"name", "config", "n_eval"}, "baseline");
    BaselineEntry e;
    if (b.contains("name")) e.name = b.at("name").get<std::string>();
    if (b.contains("config")) e.config = baseline_config_from_json(b.at("config"));
    if (b.contains("n_eval")) e.n_eval = b.at("n_eval").get<int>();
    c.baseline = e;
  }
  if (j.contains("marginal_baseline")) c.marginal_baseline = j.at("marginal_baseline").get<bool>();
  if (j.contains("train")) {
    const Json& t = j.at("train");
    if (t.contains("n_tasks")) c.train_tasks = t.at("n_tasks").get<int>();
    if (t.contains("n_points")) c.train_points = t.at("n_points").get<int>();
    c.train = train_config_from_json(without(t, {"n_tasks", "n_points"}));
  }
  if (j.contains("eval")) {
    const Json& e = j.at("eval");
    if (e.contains("n_tasks")) c.eval_tasks = e.at("n_tasks").get<int>();
    if (e.contains("n_points")) c.eval_points = e.at("n_points").get<int>();
    if (e.contains("grid")) c.grid = e.at("grid").get<std::vector<int>>();
    c.eval = eval_options_from_json(without(e, {"n_tasks", "n_points", "grid"}));
  }
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

std::string config_hash(const Json& j) {
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const ExperimentConfig& c) {
  // Where results go does not change what they are.
  return config_hash(without(to_json(c), {"output_dir"}));
}

// ---------------------------------------------------------------------------
// Results rows

namespace {

constexpr const char* kTableMagic = "#preq-results";
constexpr const char* kColumns[] = {"experiment:str", "learner:str", "objective:str", "family:str",
                                    "context_size:i32", "seed:u64", "error:f64", "stderr:f64",
                                    "error_kind:str", "timestamp:str", "code_version:str",
                                    "config_hash:str"};

std::string column_header() {
  std::string h;
  for (const char* c : kColumns) {
    if (!h.empty()) h += '\t';
    h += c;
  }
  return h;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("results: bad number " + s);
  return v;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

std::string format_rows(std::span<const ResultsRow> rows) {
  std::string out = std::string(kTableMagic) + " v" + std::to_string(kResultsFormatVersion) + "\n";
  out += column_header() + "\n";
  for (const ResultsRow& r : rows) {
    for (const std::string* s : {&r.experiment, &r.learner, &r.objective, &r.family, &r.timestamp,
                                 &r.code_version, &r.config_hash}) {
      if (!plain_text(*s)) throw std::invalid_argument("results: field contains a tab or newline");
    }
    out += r.experiment + '\t' + r.learner + '\t' + r.objective + '\t' + r.family + '\t' +
           std::to_string(r.context_size) + '\t' + std::to_string(r.seed) + '\t' + fmt_double(r.error) +
           '\t' + fmt_double(r.stderr_) + '\t' + std::string(to_string(r.error_kind)) + '\t' +
           r.timestamp + '\t' + r.code_version + '\t' + r.config_hash + '\n';
  }
  return out;
}

std::vector<ResultsRow> parse_rows(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  const std::string magic = std::string(kTableMagic) + " v" + std::to_string(kResultsFormatVersion);
  if (!std::getline(in, line) || line != magic) throw std::invalid_argument("results: bad or unsupported header");
  if (!std::getline(in, line) || line != column_header()) throw std::invalid_argument("results: column mismatch");
  std::vector<ResultsRow> rows;
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != std::size(kColumns)) {
      throw std::invalid_argument("results: line " + std::to_string(lineno) + " has " +
                                  std::to_string(f.size()) + " fields");
    }
    ResultsRow r;
    r.experiment = f[0];
    r.learner = f[1];
    r.objective = f[2];
    r.family = f[3];
    r.context_size = std::stoi(f[4]);
    r.seed = std::stoull(f[5]);
    r.error = parse_double(f[6]);
    r.stderr_ = parse_double(f[7]);
    r.error_kind = error_kind_from_string(f[8]);
    r.timestamp = f[9];
    r.code_version = f[10];
    r.config_hash = f[11];
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Store

namespace {

class FileLock {
 public:
  explicit FileLock(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR, 0644);
    if (fd_ < 0 || ::flock(fd_, LOCK_EX) != 0) throw std::runtime_error("cannot lock " + path.string());
  }
  ~FileLock() {
    if (fd_ >= 0) {
      ::flock(fd_, LOCK_UN);
      ::close(fd_);
    }
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

std::string row_key(const std::string& experiment, const std::string& learner, int size, std::uint64_t seed) {
  return experiment + '\t' + learner + '\t' + std::to_string(size) + '\t' + std::to_string(seed);
}

}  // namespace

ResultsStore::ResultsStore(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
  reload();
}

void ResultsStore::reload() {
  rows_ = fs::exists(table_path()) ? parse_rows(read_file(table_path())) : std::vector<ResultsRow>{};
}

bool ResultsStore::contains(const std::string& experiment, const std::string& learner, int size,
                            std::uint64_t seed) const {
  return std::any_of(rows_.begin(), rows_.end(), [&](const ResultsRow& r) {
    return r.experiment == experiment && r.learner == learner && r.context_size == size && r.seed == seed;
  });
}

void ResultsStore::append(std::span<const ResultsRow> rows, const Json& config) {
  FileLock lock(dir_ / ".lock");
  reload();
  std::set<std::string> keys;
  for (const ResultsRow& r : rows_) keys.insert(row_key(r.experiment, r.learner, r.context_size, r.seed));
  for (const ResultsRow& r : rows) {
    if (!keys.insert(row_key(r.experiment, r.learner, r.context_size, r.seed)).second) {
      throw std::invalid_argument("results: duplicate row (" + r.experiment + ", " + r.learner + ", " +
                                  std::to_string(r.context_size) + ", " + std::to_string(r.seed) + ")");
    }
  }
  const std::string text = format_rows(rows);
  if (!fs::exists(table_path())) {
    write_file(table_path(), text);
  } else {
    std::ofstream out(table_path(), std::ios::app | std::ios::binary);
    out << text.substr(text.find('\n', text.find('\n') + 1) + 1);
    if (!out) throw std::runtime_error("results: append failed");
  }
  rows_.insert(rows_.end(), rows.begin(), rows.end());

  Json manifest = fs::exists(manifest_path()) ? Json::parse(read_file(manifest_path())) : Json::object();
  manifest["format_version"] = kResultsFormatVersion;
  manifest["columns"] = Json::array();
  for (const char* c : kColumns) manifest["columns"].push_back(c);
  manifest["n_rows"] = rows_.size();
  if (!manifest.contains("configs")) manifest["configs"] = Json::object();
  if (!config.is_null() && !rows.empty()) manifest["configs"][rows.front().config_hash] = config;
  write_file(manifest_path(), manifest.dump(2) + "\n");
}

void ResultsStore::record_failure(const Json& failure) {
  FileLock lock(dir_ / ".lock");
  std::ofstream out(failures_path(), std::ios::app);
  out << failure.dump() << '\n';
  if (!out) throw std::runtime_error("results: cannot record failure");
}

std::vector<Json> ResultsStore::failures() const {
  std::vector<Json> out;
  if (!fs::exists(failures_path())) return out;
  std::istringstream in(read_file(failures_path()));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(Json::parse(line));
  }
  return out;
}

std::vector<PrequentialCurve> curves_from_rows(std::span<const ResultsRow> rows) {
  // (experiment, family, learner) -> seed -> size -> row
  std::map<std::tuple<std::string, std::string, std::string>,
           std::map<std::uint64_t, std::map<int, const ResultsRow*>>>
      groups;
  for (const ResultsRow& r : rows) groups[{r.experiment, r.family, r.learner}][r.seed][r.context_size] = &r;
  std::vector<PrequentialCurve> out;
  for (const auto& [key, by_seed] : groups) {
    std::vector<PrequentialCurve> per_seed;
    for (const auto& [seed, by_size] : by_seed) {
      PrequentialCurve c;
      c.learner = std::get<2>(key);
      c.family = std::get<1>(key);
      c.seeds = {seed};
      std::vector<double> errs;
      for (const auto& [size, row] : by_size) {
        c.context_sizes.push_back(size);
        c.mean_error.push_back(row->error);
        c.stderr_.push_back(row->stderr_);
        c.error_kind = row->error_kind;
        errs.push_back(row->error);
      }
      c.per_seed = {errs};
      if (!per_seed.empty() && per_seed.front().context_sizes != c.context_sizes) {
        throw std::invalid_argument("results: seeds of " + c.learner + " cover different grids");
      }
      per_seed.push_back(std::move(c));
    }
    out.push_back(combine_seeds(per_seed));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace {

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error(what + ": truncated");
  return v;
}

}  // namespace

void save_checkpoint(const fs::path& path, const SequenceLearner<float>& learner, const Json& meta) {
  Json tensors = Json::array();
  for (const auto& t : learner.params().tensors()) {
    tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  }
  const std::string header =
      Json{{"config", to_json(learner.config())}, {"meta", meta}, {"tensors", tensors}}.dump();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write("PQCK", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, header.size());
  out << header;
  for (const auto& t : learner.params().tensors()) {
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string what = "checkpoint " + path.string();
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PQCK", 4) != 0) throw std::runtime_error(what + ": bad magic");
  const auto version = get<std::uint32_t>(in, what);
  if (version != kCheckpointVersion) throw std::runtime_error(what + ": unsupported version");
  const auto len = get<std::uint64_t>(in, what);
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(what + ": truncated header");
  const Json h = Json::parse(header);
  Checkpoint ck;
  ck.config = learner_config_from_json(h.at("config"));
  ck.meta = h.at("meta");
  for (const Json& t : h.at("tensors")) {
    const int idx = ck.params.add(t.at("name").get<std::string>(), t.at("rows").get<int>(), t.at("cols").get<int>());
    auto& data = ck.params[static_cast<std::size_t>(idx)].data;
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw std::runtime_error(what + ": truncated tensor data");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error(what + ": trailing bytes");
  return ck;
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

std::string_view to_string(Split s) { return s == Split::train ? "train" : "eval"; }

fs::path with_ext(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

}  // namespace

void save_dataset(const fs::path& stem, const MetaDataset& data, const Json& provenance) {
  std::size_t xd = 0, yd = 0, ld = 0;
  if (!data.episodes.empty() && !data.episodes.front().points.empty()) {
    const DataPoint& p = data.episodes.front().points.front();
    xd = p.x.size();
    yd = p.y.size();
    ld = p.labels.size();
  }
  Json episodes = Json::array();
  std::vector<double> flat;
  for (const Episode& e : data.episodes) {
    episodes.push_back({{"seed", e.seed}, {"n_points", e.size()}, {"params", to_json(e.params)}});
    for (const DataPoint& p : e.points) {
      if (p.x.size() != xd || p.y.size() != yd || p.labels.size() != ld) {
        throw std::invalid_argument("save_dataset: ragged points");
      }
      flat.insert(flat.end(), p.x.begin(), p.x.end());
      flat.insert(flat.end(), p.y.begin(), p.y.end());
      for (int l : p.labels) flat.push_back(l);
    }
  }
  const Json manifest = {{"format_version", kDatasetFormatVersion},
                         {"family", std::string(to_string(data.spec.family))},
                         {"spec", to_json(data.spec)},
                         {"split", std::string(to_string(data.split))},
                         {"n_episodes", data.episodes.size()},
                         {"layout", {{"x_dim", xd}, {"y_dim", yd}, {"n_labels", ld}, {"dtype", "float64"}}},
                         {"n_values", flat.size()},
                         {"provenance", provenance},
                         {"episodes", episodes}};
  write_file(with_ext(stem, ".json"), manifest.dump() + "\n");
  std::ofstream out(with_ext(stem, ".bin"), std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(double)));
  if (!out) throw std::runtime_error("save_dataset: write failed");
}

MetaDataset load_dataset(const fs::path& stem) {
  const Json m = Json::parse(read_file(with_ext(stem, ".json")));
  if (m.at("format_version").get<int>() != kDatasetFormatVersion) {
    throw std::runtime_error("load_dataset: unsupported format version");
  }
  MetaDataset d;
  d.spec = task_spec_from_json(m.at("spec"));
  d.split = m.at("split").get<std::string>() == "train" ? Split::train : Split::eval;
  const auto xd = m.at("layout").at("x_dim").get<std::size_t>();
  const auto yd = m.at("layout").at("y_dim").get<std::size_t>();
  const auto ld = m.at("layout").at("n_labels").get<std::size_t>();
  const std::string bytes = read_file(with_ext(stem, ".bin"));
  if (bytes.size() != m.at("n_values").get<std::size_t>() * sizeof(double)) {
    throw std::runtime_error("load_dataset: array size does not match the manifest");
  }
  std::vector<double> flat(bytes.size() / sizeof(double));
  std::memcpy(flat.data(), bytes.data(), bytes.size());
  std::size_t pos = 0;
  for (const Json& e : m.at("episodes")) {
    Episode ep;
    ep.seed = e.at("seed").get<std::uint64_t>();
    ep.spec = d.spec;
    ep.params = task_params_from_json(e.at("params"));
    const auto n = e.at("n_points").get<std::size_t>();
    for (std::size_t i = 0; i < n; ++i) {
      if (pos + xd + yd + ld > flat.size()) throw std::runtime_error("load_dataset: array too short");
      DataPoint p;
      p.x.assign(flat.begin() + static_cast<long>(pos), flat.begin() + static_cast<long>(pos + xd));
      pos += xd;
      p.y.assign(flat.begin() + static_cast<long>(pos), flat.begin() + static_cast<long>(pos + yd));
      pos += yd;
      for (std::size_t k = 0; k < ld; ++k) p.labels.push_back(static_cast<int>(flat[pos++]));
      ep.points.push_back(std::move(p));
    }
    d.episodes.push_back(std::move(ep));
  }
  if (pos != flat.size()) throw std::runtime_error("load_dataset: trailing values");
  return d;
}

void write_loss_trace(const fs::path& path, std::span<const EpochStats> trace) {
  std::string text = "epoch\tmean_loss\tseconds\n";
  for (const EpochStats& s : trace) {
    text += std::to_string(s.epoch) + '\t' + fmt_double(s.mean_loss) + '\t' + fmt_double(s.seconds) + '\n';
  }
  write_file(path, text);
}

std::vector<EpochStats> read_loss_trace(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "epoch\tmean_loss\tseconds") {
    throw std::runtime_error("loss trace: bad header in " + path.string());
  }
  std::vector<EpochStats> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 3) throw std::runtime_error("loss trace: bad line in " + path.string());
    out.push_back({std::stoi(f[0]), parse_double(f[1]), parse_double(f[2])});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Run

namespace {

std::vector<ResultsRow> curve_rows(const PrequentialCurve& c, const ExperimentConfig& cfg,
                                   const std::string& objective, std::uint64_t seed,
                                   const std::string& hash) {
  std::vector<ResultsRow> rows;
  const std::string ts = utc_timestamp();
  for (std::size_t i = 0; i < c.context_sizes.size(); ++i) {
    ResultsRow r;
    r.experiment = cfg.experiment;
    r.learner = c.learner;
    r.objective = objective;
    r.family = std::string(to_string(cfg.task.family));
    r.context_size = c.context_sizes[i];
    r.seed = seed;
    r.error = c.mean_error[i];
    r.stderr_ = c.stderr_[i];
    r.error_kind = c.error_kind;
    r.timestamp = ts;
    r.code_version = code_version();
    r.config_hash = hash;
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

RunSummary run(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };
  const std::string hash = config_hash(config);
  const Json cfg_json = to_json(config);
  const fs::path dir = config.output_dir;
  ResultsStore store(dir);
  const std::vector<int> grid = config.eval_grid();
  RunSummary summary;

  std::vector<std::string> units;
  for (const LearnerEntry& e : config.learners) units.push_back(e.name);
  if (config.baseline) units.push_back(config.baseline->name);
  if (config.marginal_baseline) units.push_back("marginal");

  for (std::uint64_t seed : config.seeds) {
    std::optional<MetaDatasetPair> data;
    TaskSpec spec;
    for (std::size_t u = 0; u < units.size(); ++u) {
      const std::string& name = units[u];
      const bool is_baseline = config.baseline && u == config.learners.size();
      // Nothing to fit at size 0.
      std::vector<int> unit_grid;
      for (int s : grid) {
        if (!is_baseline || s > 0) unit_grid.push_back(s);
      }
      std::size_t present = 0;
      bool foreign = false;
      for (const ResultsRow& r : store.rows()) {
        if (r.experiment == config.experiment && r.learner == name && r.seed == seed) {
          ++present;
          foreign = foreign || r.config_hash != hash;
        }
      }
      try {
        if (foreign) {
          throw std::runtime_error("stored rows for this experiment id come from a different config");
        }
        if (present == unit_grid.size() &&
            std::all_of(unit_grid.begin(), unit_grid.end(),
                        [&](int s) { return store.contains(config.experiment, name, s, seed); })) {
          ++summary.units_skipped;
          log("skip " + name + " seed " + std::to_string(seed));
          continue;
        }
        if (present > 0) throw std::runtime_error("stored rows cover a different grid");
        if (!data) {
          spec = finalize_spec(config.task, seed);
          log("generate seed " + std::to_string(seed));
          data = make_meta_datasets(spec, config.train_tasks, config.eval_tasks, config.train_points,
                                    config.eval_points, seed);
          const fs::path stem = dir / "data" / ("seed-" + std::to_string(seed) + "-eval");
          if (!fs::exists(with_ext(stem, ".json"))) {
            save_dataset(stem, data->eval, {{"seed", seed}, {"config_hash", hash}});
          }
        }
        PrequentialCurve curve;
        std::string objective;
        if (u < config.learners.size()) {
          const LearnerEntry& e = config.learners[u];
          const LearnerConfig lc = configure_io(e.learner, spec);
          TrainConfig tc = e.train.value_or(config.train);
          tc.seed = seed;
          const fs::path unit_dir = dir / "units" / name / ("seed-" + std::to_string(seed));
          log("train " + name + " seed " + std::to_string(seed));
          TrainResult tr = meta_train(lc, data->train, e.objective, tc, [&](const EpochStats& s) {
            log(name + " epoch " + std::to_string(s.epoch) + " loss " + fmt_double(s.mean_loss));
          });
          write_loss_trace(unit_dir / "trace.tsv", tr.trace);
          const Json manifest = {{"config", cfg_json},          {"config_hash", hash},
                                 {"learner", name},             {"seed", seed},
                                 {"code_version", code_version()}, {"train", to_json(tc)},
                                 {"epochs", tr.trace.size()}};
          write_file(unit_dir / "manifest.json", manifest.dump(2) + "\n");
          if (options.save_checkpoints) save_checkpoint(unit_dir / "model.pqck", tr.learner, manifest);
          LearnerPredictor pred(std::make_shared<SequenceLearner<float>>(std::move(tr.learner)), name);
          curve = eval_curve(pred, data->eval, grid, config.eval, seed);
          objective = std::string(to_string(e.objective.kind));
        } else if (is_baseline) {
          BaselineConfig bc = config.baseline->config;
          bc.seed = seed;
          log("fit " + name + " seed " + std::to_string(seed));
          curve = prequential_curve_sgd(data->eval, unit_grid, bc, config.baseline->n_eval);
          objective = "sgd";
        } else {
          const IoShape io = io_shape(spec);
          MarginalPredictor pred(io.n_labels, io.n_classes);
          curve = eval_curve(pred, data->eval, grid, config.eval, seed);
          objective = "marginal";
        }
        curve.learner = name;
        curve.family = std::string(to_string(spec.family));
        const auto rows = curve_rows(curve, config, objective, seed, hash);
        store.append(rows, cfg_json);
        summary.rows_added += rows.size();
      } catch (const std::exception& ex) {
        const std::string msg = name + " seed " + std::to_string(seed) + ": " + ex.what();
        log("failed " + msg);
        store.record_failure({{"experiment", config.experiment}, {"learner", name}, {"seed", seed},
                              {"config_hash", hash}, {"error", ex.what()}, {"timestamp", utc_timestamp()},
                              {"code_version", code_version()}});
        summary.failures.push_back(msg);
      }
    }
  }
  return summary;
}

// ---------------------------------------------------------------------------
// SVG

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#17becf"};
constexpr double kWidth = 640, kHeight = 420, kLeft = 70, kRight = 170, kTop = 40, kBottom = 50;

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

struct Line {
  std::string label;
  std::vector<double> x, y, lo, hi;  // lo/hi empty: no band
  bool dashed = false;
};

struct Scatter {
  std::string label;
  std::vector<double> x, y;
};

std::string render(const std::string& title, const std::string& x_label, const std::string& y_label,
                   std::span<const Line> lines, const Scatter* points) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  auto extend = [&](std::span<const double> xs, std::span<const double> ys) {
    for (double v : xs) {
      x0 = std::min(x0, v);
      x1 = std::max(x1, v);
    }
    for (double v : ys) {
      if (!std::isfinite(v)) continue;
      y0 = std::min(y0, v);
      y1 = std::max(y1, v);
    }
  };
  for (const Line& l : lines) {
    extend(l.x, l.y);
    extend({}, l.lo);
    extend({}, l.hi);
  }
  if (points != nullptr) extend(points->x, points->y);
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto sx = [&](double v) { return kLeft + (v - x0) / (x1 - x0) * pw; };
  auto sy = [&](double v) { return kTop + (1.0 - (std::clamp(v, y0, y1) - y0) / (y1 - y0)) * ph; };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
       "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + esc(title) +
       "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    s += "<line x1=\"" + num(sx(xv)) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(sx(xv)) + "\" y2=\"" +
         num(kTop + ph) + "\" stroke=\"#e0e0e0\"/>\n";
    s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(sy(yv)) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" +
         num(sy(yv)) + "\" stroke=\"#e0e0e0\"/>\n";
    s += "<text x=\"" + num(sx(xv)) + "\" y=\"" + num(kTop + ph + 16) + "\" text-anchor=\"middle\">" +
         tick_label(xv) + "</text>\n";
    s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(sy(yv) + 4) + "\" text-anchor=\"end\">" +
         tick_label(yv) + "</text>\n";
  }
  s += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
       "\" fill=\"none\" stroke=\"black\"/>\n";
  s += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kHeight - 12) + "\" text-anchor=\"middle\">" +
       esc(x_label) + "</text>\n";
  s += "<text transform=\"translate(16," + num(kTop + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
       esc(y_label) + "</text>\n";

  for (std::size_t i = 0; i < lines.size(); ++i) {
    const Line& l = lines[i];
    const std::string color = kPalette[i % std::size(kPalette)];
    if (!l.lo.empty()) {
      std::string pts;
      for (std::size_t k = 0; k < l.x.size(); ++k) pts += num(sx(l.x[k])) + "," + num(sy(l.hi[k])) + " ";
      for (std::size_t k = l.x.size(); k-- > 0;) pts += num(sx(l.x[k])) + "," + num(sy(l.lo[k])) + " ";
      s += "<polygon points=\"" + pts + "\" fill=\"" + color + "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    }
    std::string pts;
    for (std::size_t k = 0; k < l.x.size(); ++k) pts += num(sx(l.x[k])) + "," + num(sy(l.y[k])) + " ";
    s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\"" +
         (l.dashed ? " stroke-dasharray=\"6,4\"" : "") + "/>\n";
    const double ly = kTop + 10 + 18.0 * static_cast<double>(i);
    s += "<line x1=\"" + num(kLeft + pw + 12) + "\" y1=\"" + num(ly) + "\" x2=\"" + num(kLeft + pw + 32) +
         "\" y2=\"" + num(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + num(kLeft + pw + 38) + "\" y=\"" + num(ly + 4) + "\">" + esc(l.label) + "</text>\n";
  }
  if (points != nullptr) {
    for (std::size_t k = 0; k < points->x.size(); ++k) {
      s += "<circle cx=\"" + num(sx(points->x[k])) + "\" cy=\"" + num(sy(points->y[k])) +
           "\" r=\"3\" fill=\"black\"/>\n";
    }
    const double ly = kTop + 10 + 18.0 * static_cast<double>(lines.size());
    s += "<circle cx=\"" + num(kLeft + pw + 22) + "\" cy=\"" + num(ly) + "\" r=\"3\" fill=\"black\"/>\n";
    s += "<text x=\"" + num(kLeft + pw + 38) + "\" y=\"" + num(ly + 4) + "\">" + esc(points->label) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

Line curve_line(const std::string& label, const PrequentialCurve& c) {
  Line l;
  l.label = label;
  for (std::size_t i = 0; i < c.context_sizes.size(); ++i) {
    l.x.push_back(c.context_sizes[i]);
    l.y.push_back(c.mean_error[i]);
    l.lo.push_back(c.mean_error[i] - c.stderr_[i]);
    l.hi.push_back(c.mean_error[i] + c.stderr_[i]);
  }
  return l;
}

std::string file_safe(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_';
  return out;
}

}  // namespace

std::string render_svg(const std::string& title, const std::string& y_label, std::span<const PlotSeries> series) {
  std::vector<Line> lines;
  for (const PlotSeries& s : series) lines.push_back(curve_line(s.label, s.curve));
  return render(title, "context size", y_label, lines, nullptr);
}

PlotOutput emit_plots(std::span<const ResultsRow> rows, const PlotSelection& selection, const fs::path& out_dir) {
  std::vector<ResultsRow> picked;
  for (const ResultsRow& r : rows) {
    if (!selection.experiment.empty() && r.experiment != selection.experiment) continue;
    if (!selection.learners.empty() &&
        std::find(selection.learners.begin(), selection.learners.end(), r.learner) == selection.learners.end()) {
      continue;
    }
    picked.push_back(r);
  }
  PlotOutput out;
  if (picked.empty()) {
    out.notice = "no results match the selection";
    return out;
  }
  // (experiment, family, error kind) -> rows
  std::map<std::tuple<std::string, std::string, std::string>, std::vector<ResultsRow>> groups;
  for (ResultsRow& r : picked) {
    groups[{r.experiment, r.family, std::string(to_string(r.error_kind))}].push_back(std::move(r));
  }
  fs::create_directories(out_dir);
  for (const auto& [key, group] : groups) {
    const auto& [experiment, family, kind] = key;
    const std::string y_label = kind == "mse" ? "generalization error (MSE)" : "cross-entropy (nats)";
    const auto curves = curves_from_rows(group);
    std::string base = file_safe(experiment) + "_" + file_safe(family) + "_" + file_safe(kind);
    std::string svg;
    if (selection.gap) {
      const auto find = [&](const std::string& name) -> const PrequentialCurve* {
        for (const auto& c : curves) {
          if (c.learner == name) return &c;
        }
        return nullptr;
      };
      const PrequentialCurve* a = find(selection.gap->first);
      const PrequentialCurve* b = find(selection.gap->second);
      if (a == nullptr || b == nullptr) continue;
      const std::string label = a->learner + " - " + b->learner;
      const PlotSeries s{label, gap_curve(*a, *b)};
      svg = render_svg(experiment + ": " + family + " gap", "difference in " + y_label, std::span(&s, 1));
      base += "_gap_" + file_safe(a->learner) + "_minus_" + file_safe(b->learner);
    } else {
      std::vector<PlotSeries> series;
      for (const auto& c : curves) series.push_back({c.learner, c});
      svg = render_svg(experiment + ": " + family, y_label, series);
    }
    const fs::path path = out_dir / (base + ".svg");
    write_file(path, svg);
    out.files.push_back(path);
  }
  if (out.files.empty()) out.notice = "no results match the selection";
  return out;
}

// ---------------------------------------------------------------------------
// Inferred functions

double excess_degree_norm(std::span<const double> alpha, int degree) {
  double s = 0.0;
  for (std::size_t i = static_cast<std::size_t>(std::max(degree + 1, 0)); i < alpha.size(); ++i) {
    s += alpha[i] * alpha[i];
  }
  return std::sqrt(s);
}

InferredFunction visualize_inferred_function(const Predictor& predictor, const Episode& episode, int context,
                                             std::span<const double> grid) {
  const IoShape io = io_shape(episode.spec);
  const Family f = episode.spec.family;
  if (io.categorical() || io.x_dim != 1 || io.y_dim != 1 ||
      (f != Family::linear && f != Family::sinusoid && f != Family::chebyshev)) {
    throw std::invalid_argument("visualize_inferred_function: needs a 1-D regression family");
  }
  if (context < 0 || static_cast<std::size_t>(context) > episode.size()) {
    throw std::out_of_range("visualize_inferred_function: context beyond the episode");
  }
  if (grid.empty()) throw std::invalid_argument("visualize_inferred_function: empty grid");
  InferredFunction out;
  out.context = context;
  out.grid.assign(grid.begin(), grid.end());
  Episode probe = episode.truncated(static_cast<std::size_t>(context));
  std::vector<Query> queries;
  for (double x : grid) {
    const double xs[1] = {x};
    DataPoint p = noiseless_point(episode, xs);
    out.truth.push_back(p.y.at(0));
    queries.push_back({static_cast<std::size_t>(context), probe.size()});
    probe.points.push_back(std::move(p));
  }
  for (const Prediction& p : predictor.predict(probe, queries)) out.predicted.push_back(p.mean.at(0));
  if (auto coef = predictor.coefficients(episode, static_cast<std::size_t>(context))) {
    out.coefficients = std::move(*coef);
    const int degree = f == Family::chebyshev ? episode.spec.gen_degree : f == Family::linear ? 1 : -1;
    out.excess_norm = excess_degree_norm(out.coefficients, degree);
  }
  return out;
}

Json to_json(const InferredFunction& f) {
  Json j = {{"context", f.context}, {"grid", f.grid}, {"predicted", f.predicted}, {"truth", f.truth}};
  if (!f.coefficients.empty()) {
    j["coefficients"] = f.coefficients;
    j["excess_norm"] = f.excess_norm;
  }
  return j;
}

std::string render_inferred_svg(const InferredFunction& f, const Episode& episode, const std::string& title) {
  Line truth{"true function", f.grid, f.truth, {}, {}, true};
  Line pred{"inferred", f.grid, f.predicted, {}, {}, false};
  const Line lines[] = {pred, truth};
  Scatter ctx{"context", {}, {}};
  for (int i = 0; i < f.context; ++i) {
    ctx.x.push_back(episode.points[static_cast<std::size_t>(i)].x.at(0));
    ctx.y.push_back(episode.points[static_cast<std::size_t>(i)].y.at(0));
  }
  return render(title, "x", "y", lines, &ctx);
}

}  // namespace preq
