#include "dido/pipeline.hpp"

#include "dido/random.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <iomanip>
#include <set>
#include <sstream>

namespace dido::pipeline {

namespace {

// Strict reader over one JSON object: every key must be consumed.
class Section {
public:
    Section(const json& doc, std::string name) : doc_(doc), name_(std::move(name)) {
        if (!doc_.is_object()) {
            throw ConfigError("config section '" + name_ + "' must be an object");
        }
    }

    template <typename T>
    void get(const char* key, T& out) {
        used_.insert(key);
        if (auto it = doc_.find(key); it != doc_.end() && !it->is_null()) {
            try {
                out = it->get<T>();
            } catch (const json::exception& e) {
                throw ConfigError("config key '" + name_ + "." + key + "': " + e.what());
            }
        }
    }

    template <typename T>
    void get_optional(const char* key, std::optional<T>& out) {
        used_.insert(key);
        if (auto it = doc_.find(key); it != doc_.end()) {
            if (it->is_null()) {
                out.reset();
            } else {
                try {
                    out = it->get<T>();
                } catch (const json::exception& e) {
                    throw ConfigError("config key '" + name_ + "." + key + "': " + e.what());
                }
            }
        }
    }

    std::optional<Section> child(const char* key) {
        used_.insert(key);
        if (auto it = doc_.find(key); it != doc_.end() && !it->is_null()) {
            return Section(*it, name_ + "." + key);
        }
        return std::nullopt;
    }

    bool has(const char* key) const { return doc_.contains(key) && !doc_.at(key).is_null(); }
    void mark(const char* key) { used_.insert(key); }

    void finish() const {
        for (auto it = doc_.begin(); it != doc_.end(); ++it) {
            if (!used_.count(it.key())) {
                throw ConfigError("unknown config key '" + name_ + "." + it.key() + "'");
            }
        }
    }

private:
    const json& doc_;
    std::string name_;
    std::set<std::string> used_;
};

json train_to_json(const nn::TrainSettings& t) {
    return json{{"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"learning_rate", t.adam.learning_rate},
                {"beta1", t.adam.beta1},
                {"beta2", t.adam.beta2},
                {"epsilon", t.adam.epsilon},
                {"schedule", t.schedule == nn::LrSchedule::cosine ? "cosine" : "constant"},
                {"final_lr_fraction", t.final_lr_fraction}};
}

void train_from(Section s, nn::TrainSettings& t) {
    s.get("epochs", t.epochs);
    s.get("batch_size", t.batch_size);
    s.get("learning_rate", t.adam.learning_rate);
    s.get("beta1", t.adam.beta1);
    s.get("beta2", t.adam.beta2);
    s.get("epsilon", t.adam.epsilon);
    std::string schedule = t.schedule == nn::LrSchedule::cosine ? "cosine" : "constant";
    s.get("schedule", schedule);
    if (schedule == "cosine") {
        t.schedule = nn::LrSchedule::cosine;
    } else if (schedule == "constant") {
        t.schedule = nn::LrSchedule::constant;
    } else {
        throw ConfigError("unknown learning-rate schedule '" + schedule + "'");
    }
    s.get("final_lr_fraction", t.final_lr_fraction);
    s.finish();
    if (t.epochs < 1 || t.batch_size < 1 || !(t.adam.learning_rate > 0.0)) {
        throw ConfigError("training needs positive epochs, batch size and learning rate");
    }
}

json lmc_to_json(const lmc::LmcConfig& c) {
    json j{{"step_size", c.step_size},
           {"inverse_temperature", c.inverse_temperature},
           {"total_steps", c.total_steps}};
    j["divergence_radius"] = c.divergence_radius ? json(*c.divergence_radius) : json(nullptr);
    return j;
}

void lmc_from(Section s, lmc::LmcConfig& c) {
    s.get("step_size", c.step_size);
    s.get("inverse_temperature", c.inverse_temperature);
    s.get("total_steps", c.total_steps);
    s.get_optional("divergence_radius", c.divergence_radius);
    s.finish();
    c.validate();
}

std::string iso_time(std::chrono::system_clock::time_point tp) {
    const std::time_t tt = std::chrono::system_clock::to_time_t(tp);
    std::tm tm{};
    gmtime_r(&tt, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

std::string rel(const fs::path& root, const fs::path& p) {
    return fs::relative(p, root).generic_string();
}

int effective_workers(const PipelineConfig& config) {
    if (const char* env = std::getenv("DIDO_WORKERS"); env && *env) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (*end != '\0' || v < 1) {
            throw ConfigError(std::string("DIDO_WORKERS must be a positive integer, got '") + env + "'");
        }
        return static_cast<int>(v);
    }
    return config.workers;
}

void write_history_csv(const fs::path& path, const std::vector<classifier::AccuracyRecord>& history) {
    io::CsvTable t;
    t.header = {"iteration", "n_train", "sigma", "accuracy"};
    for (const auto& r : history) {
        t.rows.push_back({static_cast<double>(r.iteration), static_cast<double>(r.n_train), r.sigma,
                          r.accuracy});
    }
    io::write_csv(path, t);
}

std::string stage_error(const char* stage, const std::exception& e) {
    return std::string(stage) + " stage failed: " + e.what();
}

// Rethrows with the stage name prefixed, preserving the error category.
template <typename Fn>
auto with_stage(const char* stage, Fn&& fn) {
    try {
        return fn();
    } catch (const ShapeError& e) {
        throw ShapeError(stage_error(stage, e));
    } catch (const DomainError& e) {
        throw DomainError(stage_error(stage, e));
    } catch (const ConfigError& e) {
        throw ConfigError(stage_error(stage, e));
    } catch (const OracleError& e) {
        throw OracleError(stage_error(stage, e));
    } catch (const TrainingError& e) {
        throw TrainingError(stage_error(stage, e));
    } catch (const SamplingError& e) {
        throw SamplingError(stage_error(stage, e));
    } catch (const Error& e) {
        throw Error(stage_error(stage, e));
    }
}

}  // namespace

std::string timestamp_now() { return iso_time(std::chrono::system_clock::now()); }

std::string_view to_string(ProblemKind k) {
    switch (k) {
        case ProblemKind::harmonic_ball: return "harmonic_ball";
        case ProblemKind::disc_quadratic: return "disc_quadratic";
        case ProblemKind::external: return "external";
    }
    return "harmonic_ball";
}

ProblemKind parse_problem_kind(std::string_view s) {
    if (s == "harmonic_ball") return ProblemKind::harmonic_ball;
    if (s == "disc_quadratic") return ProblemKind::disc_quadratic;
    if (s == "external") return ProblemKind::external;
    throw ConfigError("unknown problem kind '" + std::string(s) + "'");
}

double SurrogateConfig::test_fraction() const {
    return static_cast<double>(n_test) / static_cast<double>(n_target + n_test);
}

PipelineConfig default_config(ProblemKind kind, int dimension) {
    PipelineConfig c;
    c.problem.kind = kind;
    c.problem.dimension = kind == ProblemKind::disc_quadratic ? 2 : dimension;
    const int d = c.problem.dimension;

    auto& k = c.classifier;
    k.search.lmc = {.step_size = 1e-5, .inverse_temperature = 1e4, .total_steps = 1000};
    k.search.init = classifier::ChainInit::pooled;
    k.initial_train = {.epochs = 300, .batch_size = 128};
    k.retrain = {.epochs = 200, .batch_size = 128};
    k.accuracy_threshold = 0.98;
    k.max_iterations = 8;

    auto& s = c.surrogate;
    s.train = {.epochs = 400, .batch_size = 128, .schedule = nn::LrSchedule::cosine};
    s.sampling.lmc = {.step_size = 1e-4, .inverse_temperature = 1e3, .total_steps = 1000};
    if (d <= 6) {
        k.n0 = 1000;
        k.n1 = 500;
        k.n_eval = 500;
        s.n_target = 500;
        s.n_test = 200;
    } else {
        k.n0 = 3000;
        k.n1 = 2000;
        k.n_eval = 2000;
        s.n_target = 5000;
        s.n_test = 2000;
    }
    c.optimizer.t = 100.0;
    c.optimizer.step_size = 1e-2;
    c.optimizer.max_steps = 1000;
    c.optimizer.max_starts = 2000;
    return c;
}

json config_to_json(const PipelineConfig& c) {
    json problem{{"kind", to_string(c.problem.kind)}, {"dimension", c.problem.dimension}};
    problem["box_half_width"] = c.problem.box_half_width ? json(*c.problem.box_half_width) : json(nullptr);
    problem["evaluation_budget"] =
        c.problem.evaluation_budget ? json(*c.problem.evaluation_budget) : json(nullptr);
    if (c.problem.kind == ProblemKind::external) {
        problem["external"] = {{"command", c.problem.command},
                               {"workdir", c.problem.workdir.string()},
                               {"timeout_seconds", c.problem.timeout_seconds},
                               {"retries", c.problem.retries},
                               {"max_concurrency", c.problem.max_concurrency}};
    }
    const auto& k = c.classifier;
    json classifier{{"n0", k.n0},
                    {"n1", k.n1},
                    {"perturb_sigma", k.perturb_sigma},
                    {"accuracy_threshold", k.accuracy_threshold},
                    {"max_iterations", k.max_iterations},
                    {"balance_tolerance", k.balance_tolerance},
                    {"max_resamples", k.max_resamples},
                    {"n_eval", k.n_eval},
                    {"hidden", k.hidden},
                    {"initial_train", train_to_json(k.initial_train)},
                    {"retrain", train_to_json(k.retrain)},
                    {"boundary_search",
                     {{"chain_init", to_string(k.search.init)},
                      {"pool_factor", k.search.pool_factor},
                      {"band", k.search.band},
                      {"lmc", lmc_to_json(k.search.lmc)}}}};
    const auto& s = c.surrogate;
    json surrogate{{"n_target", s.n_target},
                   {"n_test", s.n_test},
                   {"hidden", s.hidden},
                   {"train", train_to_json(s.train)},
                   {"sampling",
                    {{"max_cycles", s.sampling.max_cycles},
                     {"min_yield", s.sampling.min_yield},
                     {"lmc", lmc_to_json(s.sampling.lmc)}}}};
    const auto& o = c.optimizer;
    json opt{{"t", o.t},
             {"step_size", o.step_size},
             {"max_steps", o.max_steps},
             {"grad_tolerance", o.grad_tolerance},
             {"max_starts", o.max_starts},
             {"max_halvings", o.max_halvings},
             {"chunk_size", o.chunk_size}};
    opt["schedule"] = o.schedule ? json{{"t0", o.schedule->t0},
                                        {"gamma", o.schedule->gamma},
                                        {"stages", o.schedule->stages}}
                                 : json(nullptr);
    return json{{"schema_version", c.schema_version},
                {"seed", c.seed},
                {"output_dir", c.output_dir.string()},
                {"workers", c.workers},
                {"problem", problem},
                {"classifier", classifier},
                {"surrogate", surrogate},
                {"optimizer", opt}};
}

PipelineConfig config_from_json(const json& doc) {
    Section root(doc, "config");
    int version = kSchemaVersion;
    root.get("schema_version", version);
    if (version != kSchemaVersion) {
        throw ConfigError("unsupported config schema_version " + std::to_string(version) +
                          " (expected " + std::to_string(kSchemaVersion) + ")");
    }
    ProblemKind kind = ProblemKind::harmonic_ball;
    int dimension = 10;
    if (doc.contains("problem") && doc["problem"].is_object()) {
        const json& p = doc["problem"];
        if (p.contains("kind")) {
            kind = parse_problem_kind(p["kind"].get<std::string>());
        }
        if (p.contains("dimension") && !p["dimension"].is_null()) {
            dimension = p["dimension"].get<int>();
        }
    }
    PipelineConfig c = default_config(kind, dimension);
    root.get("seed", c.seed);
    std::string out = c.output_dir.string();
    root.get("output_dir", out);
    c.output_dir = out;
    root.get("workers", c.workers);

    if (auto p = root.child("problem")) {
        p->mark("kind");
        p->mark("dimension");
        p->get_optional("box_half_width", c.problem.box_half_width);
        p->get_optional("evaluation_budget", c.problem.evaluation_budget);
        if (auto e = p->child("external")) {
            e->get("command", c.problem.command);
            std::string workdir = c.problem.workdir.string();
            e->get("workdir", workdir);
            c.problem.workdir = workdir;
            e->get("timeout_seconds", c.problem.timeout_seconds);
            e->get("retries", c.problem.retries);
            e->get("max_concurrency", c.problem.max_concurrency);
            e->finish();
        }
        p->finish();
    }
    if (kind == ProblemKind::disc_quadratic && dimension != 2) {
        throw ConfigError("disc_quadratic is two-dimensional");
    }
    if (auto k = root.child("classifier")) {
        auto& ck = c.classifier;
        k->get("n0", ck.n0);
        k->get("n1", ck.n1);
        k->get("perturb_sigma", ck.perturb_sigma);
        k->get("accuracy_threshold", ck.accuracy_threshold);
        k->get("max_iterations", ck.max_iterations);
        k->get("balance_tolerance", ck.balance_tolerance);
        k->get("max_resamples", ck.max_resamples);
        k->get("n_eval", ck.n_eval);
        k->get("hidden", ck.hidden);
        if (auto t = k->child("initial_train")) train_from(*t, ck.initial_train);
        if (auto t = k->child("retrain")) train_from(*t, ck.retrain);
        if (auto b = k->child("boundary_search")) {
            std::string init(to_string(ck.search.init));
            b->get("chain_init", init);
            ck.search.init = classifier::parse_chain_init(init);
            b->get("pool_factor", ck.search.pool_factor);
            b->get("band", ck.search.band);
            if (auto l = b->child("lmc")) lmc_from(*l, ck.search.lmc);
            b->finish();
        }
        k->finish();
    }
    if (auto s = root.child("surrogate")) {
        auto& cs = c.surrogate;
        s->get("n_target", cs.n_target);
        s->get("n_test", cs.n_test);
        s->get("hidden", cs.hidden);
        if (auto t = s->child("train")) train_from(*t, cs.train);
        if (auto m = s->child("sampling")) {
            m->get("max_cycles", cs.sampling.max_cycles);
            m->get("min_yield", cs.sampling.min_yield);
            if (auto l = m->child("lmc")) lmc_from(*l, cs.sampling.lmc);
            m->finish();
        }
        s->finish();
    }
    if (auto o = root.child("optimizer")) {
        auto& co = c.optimizer;
        o->get("t", co.t);
        o->get("step_size", co.step_size);
        o->get("max_steps", co.max_steps);
        o->get("grad_tolerance", co.grad_tolerance);
        o->get("max_starts", co.max_starts);
        o->get("max_halvings", co.max_halvings);
        o->get("chunk_size", co.chunk_size);
        if (auto sch = o->child("schedule")) {
            optimizer::BarrierSchedule bs;
            sch->get("t0", bs.t0);
            sch->get("gamma", bs.gamma);
            sch->get("stages", bs.stages);
            sch->finish();
            co.schedule = bs;
        } else {
            co.schedule.reset();
        }
        o->finish();
    }
    root.finish();

    if (c.surrogate.n_target < 0 || c.surrogate.n_test < 0) {
        throw ConfigError("surrogate n_target and n_test must be nonnegative");
    }
    if (c.workers < 1) {
        throw ConfigError("workers must be at least 1");
    }
    c.optimizer.validate();
    return c;
}

PipelineConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) {
        throw ConfigError("config file not found: " + path.string());
    }
    return config_from_json(io::read_json(path));
}

std::uint64_t stage_seed(const PipelineConfig& config, std::string_view stage) {
    return derive_seed(config.seed, stage);
}

ResolvedProblem resolve_problem(const ProblemConfig& config) {
    std::optional<ExternalProblem> external;
    auto make = [&]() -> DataInformedProblem {
        switch (config.kind) {
            case ProblemKind::harmonic_ball: return harmonic_ball_problem(config.dimension);
            case ProblemKind::disc_quadratic: return disc_quadratic_problem();
            case ProblemKind::external: {
                ExternalCommandConfig ec;
                ec.command_template = config.command;
                ec.dimension = config.dimension;
                ec.workdir = config.workdir;
                ec.timeout_seconds = config.timeout_seconds;
                ec.retries = config.retries;
                ec.max_concurrency = config.max_concurrency;
                if (config.box_half_width) {
                    ec.suggested_box = Box::cube(config.dimension, *config.box_half_width);
                }
                external = external_problem_from_command(ec);
                return external->problem;
            }
        }
        throw ConfigError("unknown problem kind");
    };
    DataInformedProblem problem = make();
    if (config.evaluation_budget) {
        problem.set_evaluation_budget(config.evaluation_budget);
    }
    return ResolvedProblem{std::move(problem), std::move(external)};
}

classifier::ClassifierIterationConfig classifier_config(const PipelineConfig& config,
                                                        const DataInformedProblem& problem) {
    classifier::ClassifierIterationConfig k = config.classifier;
    if (config.problem.box_half_width) {
        k.initial_box = Box::cube(problem.dimension(), *config.problem.box_half_width);
    } else if (problem.suggested_box()) {
        k.initial_box = *problem.suggested_box();
    } else {
        throw ConfigError("problem has no suggested initial box; set problem.box_half_width");
    }
    k.search.box = k.initial_box;
    return k;
}

json stage_to_json(const StageRecord& s) {
    return json{{"name", s.name},
                {"started", s.started},
                {"finished", s.finished},
                {"artifacts", s.artifacts},
                {"oracle_calls",
                 {{"feasibility", s.feasibility_calls}, {"objective", s.objective_calls}}},
                {"resumed", s.resumed},
                {"summary", s.summary}};
}

StageRecord stage_from_json(const json& doc) {
    StageRecord s;
    s.name = doc.at("name").get<std::string>();
    s.started = doc.value("started", "");
    s.finished = doc.value("finished", "");
    s.artifacts = doc.value("artifacts", std::vector<std::string>{});
    s.feasibility_calls = doc.at("oracle_calls").at("feasibility").get<std::uint64_t>();
    s.objective_calls = doc.at("oracle_calls").at("objective").get<std::uint64_t>();
    s.resumed = doc.value("resumed", false);
    s.summary = doc.value("summary", json::object());
    return s;
}

// ---------------------------------------------------------------------------
// Persistence

void save_classifier(const fs::path& dir, const classifier::ClassifierState& state) {
    fs::create_directories(dir);
    io::save_checkpoint(dir / "model.json", io::Checkpoint{state.model, state.input_stats, std::nullopt});
    io::write_points_csv(dir / "training_set.csv", state.points, {{"label", state.labels}});
    const auto& b = state.search;
    json box{{"lower", std::vector<double>(b.box.lower.data(), b.box.lower.data() + b.box.lower.size())},
             {"upper", std::vector<double>(b.box.upper.data(), b.box.upper.data() + b.box.upper.size())}};
    json history = json::array();
    for (const auto& r : state.history) {
        history.push_back({{"iteration", r.iteration},
                           {"n_train", r.n_train},
                           {"sigma", r.sigma},
                           {"accuracy", r.accuracy},
                           {"n_evaluated", r.n_evaluated},
                           {"eval_seed", r.eval_seed}});
    }
    io::write_json_atomic(dir / "state.json",
                          json{{"iteration", state.iteration},
                               {"converged", state.converged},
                               {"final_accuracy", state.final_accuracy},
                               {"final_eval_seed", state.final_eval_seed},
                               {"class_weighted", state.class_weighted},
                               {"history", history},
                               {"boundary_search",
                                {{"chain_init", to_string(b.init)},
                                 {"pool_factor", b.pool_factor},
                                 {"band", b.band},
                                 {"box", box},
                                 {"lmc", lmc_to_json(b.lmc)}}}});
}

namespace {

fs::path stage_dir_of(const fs::path& path) {
    if (fs::is_directory(path)) {
        return path;
    }
    return path.parent_path();
}

void require_exists(const fs::path& p, const char* what) {
    if (!fs::exists(p)) {
        throw ConfigError(std::string(what) + " not found: " + p.string());
    }
}

Vector to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

classifier::ClassifierState load_classifier(const fs::path& path) {
    require_exists(path, "classifier checkpoint");
    const fs::path dir = stage_dir_of(path);
    const fs::path model = fs::is_directory(path) ? dir / "model.json" : path;
    require_exists(model, "classifier checkpoint");
    const io::Checkpoint ckpt = io::load_checkpoint(model);
    classifier::ClassifierState state;
    state.model = ckpt.model;
    state.input_stats = ckpt.input_stats;
    const fs::path ts = dir / "training_set.csv";
    require_exists(ts, "classifier training set");
    const io::CsvTable table = io::read_csv(ts);
    state.points = io::read_points_csv(ts);
    state.labels = io::csv_column(table, "label");
    const fs::path st = dir / "state.json";
    require_exists(st, "classifier state");
    const json s = io::read_json(st);
    state.iteration = s.at("iteration").get<int>();
    state.converged = s.at("converged").get<bool>();
    state.final_accuracy = s.at("final_accuracy").get<double>();
    state.final_eval_seed = s.at("final_eval_seed").get<std::uint64_t>();
    state.class_weighted = s.at("class_weighted").get<bool>();
    for (const auto& r : s.at("history")) {
        state.history.push_back({r.at("iteration").get<int>(), r.at("n_train").get<std::size_t>(),
                                 r.at("sigma").get<double>(), r.at("accuracy").get<double>(),
                                 r.at("n_evaluated").get<std::size_t>(),
                                 r.at("eval_seed").get<std::uint64_t>()});
    }
    const json& b = s.at("boundary_search");
    state.search.init = classifier::parse_chain_init(b.at("chain_init").get<std::string>());
    state.search.pool_factor = b.at("pool_factor").get<int>();
    state.search.band = b.at("band").get<double>();
    state.search.box = Box{to_vector(b.at("box").at("lower").get<std::vector<double>>()),
                           to_vector(b.at("box").at("upper").get<std::vector<double>>())};
    lmc_from(Section(b.at("lmc"), "boundary_search.lmc"), state.search.lmc);
    if (state.points.cols() != state.model.input_dim()) {
        throw ShapeError("classifier training set and model dimensions differ");
    }
    return state;
}

void save_surrogate(const fs::path& dir, const surrogate::ObjectiveSurrogate& s) {
    fs::create_directories(dir);
    io::save_checkpoint(dir / "model.json", io::Checkpoint{s.model, s.input_stats, s.target_stats});
    io::write_json_atomic(dir / "stats.json",
                          json{{"input_standardization", io::standardizer_to_json(s.input_stats)},
                               {"target_standardization", io::target_stats_to_json(s.target_stats)}});
}

surrogate::ObjectiveSurrogate load_surrogate(const fs::path& path) {
    require_exists(path, "surrogate checkpoint");
    const fs::path model = fs::is_directory(path) ? path / "model.json" : path;
    require_exists(model, "surrogate checkpoint");
    const io::Checkpoint ckpt = io::load_checkpoint(model);
    if (!ckpt.target_stats) {
        throw ConfigError("checkpoint " + model.string() + " has no target standardization");
    }
    return surrogate::ObjectiveSurrogate{ckpt.model, ckpt.input_stats, *ckpt.target_stats};
}

Matrix load_surrogate_starts(const fs::path& surrogate_dir) {
    const fs::path ds = surrogate_dir / "dataset.csv";
    require_exists(ds, "surrogate dataset");
    const Matrix all = io::read_points_csv(ds);
    const fs::path split = surrogate_dir / "split.json";
    if (!fs::exists(split)) {
        return all;
    }
    const auto train = io::read_json(split).at("train").get<std::vector<std::size_t>>();
    Matrix out(static_cast<Eigen::Index>(train.size()), all.cols());
    for (std::size_t k = 0; k < train.size(); ++k) {
        if (train[k] >= static_cast<std::size_t>(all.rows())) {
            throw ShapeError("split.json refers to a row outside the surrogate dataset");
        }
        out.row(static_cast<Eigen::Index>(k)) = all.row(static_cast<Eigen::Index>(train[k]));
    }
    return out;
}

json candidate_to_json(const optimizer::OptimizationCandidate& c) {
    json j{{"point", std::vector<double>(c.point.data(), c.point.data() + c.point.size())},
           {"point_standardized",
            std::vector<double>(c.point_std.data(), c.point_std.data() + c.point_std.size())},
           {"surrogate_value", c.surrogate_value},
           {"classifier_probability", c.classifier_probability},
           {"true_feasible", c.true_feasible},
           {"start_index", c.start_index},
           {"steps_taken", c.steps_taken},
           {"stalled", c.stalled},
           {"converged", c.converged}};
    j["true_objective"] = c.true_objective ? json(*c.true_objective) : json(nullptr);
    return j;
}

json report_to_json(const optimizer::OptimizationReport& r) {
    json candidates = json::array();
    for (const auto& c : r.candidates) {
        candidates.push_back(candidate_to_json(c));
    }
    json j{{"starts_given", r.starts_given},
           {"starts_used", r.starts_used},
           {"starts_rejected", r.starts_rejected},
           {"falsely_feasible", r.falsely_feasible},
           {"false_feasible_fraction", r.false_feasible_fraction},
           {"barrier_parameters", r.barrier_parameters},
           {"candidates", candidates}};
    const auto* best = r.best_feasible();
    j["best_true_objective"] = best ? json(*best->true_objective) : json(nullptr);
    return j;
}

// ---------------------------------------------------------------------------
// Stages

namespace {

struct CallCounter {
    const DataInformedProblem& problem;
    std::uint64_t f0 = problem.feasibility_calls();
    std::uint64_t o0 = problem.objective_calls();

    void fill(StageRecord& r) const {
        r.feasibility_calls = problem.feasibility_calls() - f0;
        r.objective_calls = problem.objective_calls() - o0;
    }
};

}  // namespace

ClassifierStageResult run_classifier_stage(const PipelineConfig& config,
                                           const DataInformedProblem& problem, const fs::path& dir) {
    return with_stage("classifier", [&] {
        ClassifierStageResult out;
        out.record.name = "classifier";
        out.record.started = timestamp_now();
        const CallCounter calls{problem};
        const auto k = classifier_config(config, problem);
        fs::create_directories(dir / "iterations");
        std::vector<std::string> artifacts;
        auto per_iteration = [&](const classifier::ClassifierState& s) {
            std::ostringstream name;
            name << "iteration_" << std::setw(2) << std::setfill('0') << s.iteration;
            const fs::path it_dir = dir / "iterations" / name.str();
            fs::create_directories(it_dir);
            io::save_checkpoint(it_dir / "model.json", io::Checkpoint{s.model, s.input_stats, std::nullopt});
            io::write_points_csv(it_dir / "training_set.csv", s.points, {{"label", s.labels}});
            artifacts.push_back(rel(config.output_dir, it_dir / "model.json"));
            artifacts.push_back(rel(config.output_dir, it_dir / "training_set.csv"));
            write_history_csv(dir / "accuracy_history.csv", s.history);
        };
        out.state = classifier::iterate_classifier(problem, k, stage_seed(config, "classifier"),
                                                   per_iteration);
        save_classifier(dir, out.state);
        write_history_csv(dir / "accuracy_history.csv", out.state.history);
        calls.fill(out.record);
        out.record.artifacts = {rel(config.output_dir, dir / "model.json"),
                                rel(config.output_dir, dir / "training_set.csv"),
                                rel(config.output_dir, dir / "state.json"),
                                rel(config.output_dir, dir / "accuracy_history.csv")};
        out.record.artifacts.insert(out.record.artifacts.end(), artifacts.begin(), artifacts.end());
        out.record.summary = {{"converged", out.state.converged},
                              {"final_accuracy", out.state.final_accuracy},
                              {"iterations", out.state.history.size()},
                              {"n_train", out.state.size()}};
        if (!out.state.converged) {
            spdlog::warn("classifier stage: stopping criterion not met; continuing with the best iteration");
        }
        out.record.finished = timestamp_now();
        out.record.artifacts.push_back(rel(config.output_dir, dir / "stage.json"));
        io::write_json_atomic(dir / "stage.json", stage_to_json(out.record));
        return out;
    });
}

SurrogateStageResult run_surrogate_stage(const PipelineConfig& config,
                                         const DataInformedProblem& problem,
                                         const classifier::ClassifierState& state,
                                         const fs::path& dir) {
    return with_stage("surrogate", [&] {
        if (state.model.input_dim() != problem.dimension()) {
            throw ShapeError("classifier checkpoint has dimension " +
                             std::to_string(state.model.input_dim()) + " but the problem has " +
                             std::to_string(problem.dimension()));
        }
        const int total = config.surrogate.n_target + config.surrogate.n_test;
        if (config.surrogate.n_target <= 0 || total < 10) {
            throw DomainError("surrogate dataset would be empty or below 10 points (n_target = " +
                              std::to_string(config.surrogate.n_target) + ")");
        }
        SurrogateStageResult out;
        out.record.name = "surrogate";
        out.record.started = timestamp_now();
        const CallCounter calls{problem};
        const std::uint64_t seed = stage_seed(config, "surrogate");
        const surrogate::FeasibleSample sample = surrogate::sample_feasible_inputs(
            state, problem, total, config.surrogate.sampling, derive_seed(seed, "sampling"));
        out.dataset = surrogate::build_surrogate_dataset(sample.points, problem);
        const double test_fraction = config.surrogate.n_test > 0 ? config.surrogate.test_fraction() : 0.0;
        if (!(test_fraction > 0.0)) {
            throw ConfigError("surrogate n_test must be positive to report a test error");
        }
        out.fit = surrogate::fit_objective(out.dataset, config.surrogate.hidden, config.surrogate.train,
                                           test_fraction, derive_seed(seed, "fit"));
        fs::create_directories(dir);
        io::write_points_csv(dir / "dataset.csv", out.dataset.points, {{"f", out.dataset.raw_targets}});
        save_surrogate(dir, out.fit.surrogate);
        io::CsvTable loss;
        loss.header = {"epoch", "train_rmse", "test_rmse"};
        for (const auto& e : out.fit.history) {
            loss.rows.push_back({static_cast<double>(e.epoch), e.train_loss, e.test_loss.value_or(0.0)});
        }
        io::write_csv(dir / "loss_history.csv", loss);
        io::write_json_atomic(dir / "split.json",
                              json{{"train", out.fit.train_indices}, {"test", out.fit.test_indices}});
        const json report{{"train_rmse_normalized", out.fit.train_rmse},
                          {"test_rmse_normalized", out.fit.test_rmse},
                          {"train_rmse", out.fit.train_rmse_raw},
                          {"test_rmse", out.fit.test_rmse_raw},
                          {"degenerate", out.fit.degenerate},
                          {"n_train", out.fit.train_indices.size()},
                          {"n_test", out.fit.test_indices.size()},
                          {"yield_rate", sample.yield_rate()},
                          {"sampling_rounds", sample.cycles},
                          {"dropped", out.dataset.dropped}};
        io::write_json_atomic(dir / "report.json", report);
        calls.fill(out.record);
        out.record.artifacts = {rel(config.output_dir, dir / "dataset.csv"),
                                rel(config.output_dir, dir / "stats.json"),
                                rel(config.output_dir, dir / "model.json"),
                                rel(config.output_dir, dir / "loss_history.csv"),
                                rel(config.output_dir, dir / "split.json"),
                                rel(config.output_dir, dir / "report.json")};
        out.record.summary = report;
        out.record.finished = timestamp_now();
        out.record.artifacts.push_back(rel(config.output_dir, dir / "stage.json"));
        io::write_json_atomic(dir / "stage.json", stage_to_json(out.record));
        spdlog::info("surrogate: normalized RMSE train {:.4f}, test {:.4f}", out.fit.train_rmse,
                     out.fit.test_rmse);
        return out;
    });
}

OptimizeStageResult run_optimize_stage(const PipelineConfig& config,
                                       const DataInformedProblem& problem,
                                       const classifier::ClassifierState& state,
                                       const surrogate::ObjectiveSurrogate& objective,
                                       const Matrix& starts_raw, const fs::path& dir) {
    return with_stage("optimize", [&] {
        const int d = problem.dimension();
        if (state.model.input_dim() != d || objective.model.input_dim() != d) {
            throw ShapeError("checkpoint dimensions do not match the problem dimension " +
                             std::to_string(d));
        }
        OptimizeStageResult out;
        out.record.name = "optimize";
        out.record.started = timestamp_now();
        const CallCounter calls{problem};
        optimizer::BarrierConfig bc = config.optimizer;
        bc.workers = effective_workers(config);
        const auto pair = optimizer::make_surrogate_pair(state, objective);
        out.report = optimizer::optimize_multi_start(pair, starts_raw, problem, bc);
        fs::create_directories(dir);
        json results = report_to_json(out.report);
        results["seed"] = config.seed;
        results["optimizer_seed"] = stage_seed(config, "optimizer");
        results["config"] = config_to_json(config)["optimizer"];
        io::write_json_atomic(dir / "results.json", results);

        io::CsvTable csv;
        csv.header = {"rank", "start_index", "true_feasible", "true_objective", "surrogate_value",
                      "classifier_probability", "steps_taken", "stalled"};
        const double nan = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t r = 0; r < out.report.candidates.size(); ++r) {
            const auto& c = out.report.candidates[r];
            csv.rows.push_back({static_cast<double>(r), static_cast<double>(c.start_index),
                                c.true_feasible ? 1.0 : 0.0, c.true_objective.value_or(nan),
                                c.surrogate_value, c.classifier_probability,
                                static_cast<double>(c.steps_taken), c.stalled ? 1.0 : 0.0});
        }
        io::write_csv(dir / "candidates.csv", csv);
        calls.fill(out.record);
        out.record.artifacts = {rel(config.output_dir, dir / "results.json"),
                                rel(config.output_dir, dir / "candidates.csv")};
        const auto* best = out.report.best_feasible();
        out.record.summary = {{"best_true_objective", best ? json(*best->true_objective) : json(nullptr)},
                              {"candidates", out.report.candidates.size()},
                              {"false_feasible_fraction", out.report.false_feasible_fraction}};
        out.record.finished = timestamp_now();
        out.record.artifacts.push_back(rel(config.output_dir, dir / "stage.json"));
        io::write_json_atomic(dir / "stage.json", stage_to_json(out.record));
        return out;
    });
}

fs::path write_manifest(const PipelineConfig& config, const std::vector<StageRecord>& stages) {
    const fs::path path = config.output_dir / "manifest.json";
    json doc;
    if (fs::exists(path)) {
        try {
            doc = io::read_json(path);
        } catch (const std::exception&) {
            doc = json::object();
        }
    }
    json stage_map = doc.contains("stages") && doc["stages"].is_object() ? doc["stages"] : json::object();
    for (const auto& s : stages) {
        for (const auto& a : s.artifacts) {
            if (!fs::exists(config.output_dir / a)) {
                throw Error("manifest refers to a missing artifact: " + a);
            }
        }
        stage_map[s.name] = stage_to_json(s);
    }
    std::uint64_t feas = 0;
    std::uint64_t obj = 0;
    for (const auto& [name, s] : stage_map.items()) {
        feas += s.at("oracle_calls").at("feasibility").get<std::uint64_t>();
        obj += s.at("oracle_calls").at("objective").get<std::uint64_t>();
    }
    doc["schema_version"] = kSchemaVersion;
    doc["config"] = config_to_json(config);
    doc["stages"] = stage_map;
    doc["oracle_calls_total"] = {{"feasibility", feas}, {"objective", obj}};
    doc["files"] = {"config.json", "manifest.json"};
    doc["written"] = timestamp_now();
    io::write_json_atomic(config.output_dir / "config.json", config_to_json(config));
    io::write_json_atomic(path, doc);
    return path;
}

RunAllResult run_all(const PipelineConfig& config, const RunOptions& options) {
    fs::create_directories(config.output_dir);
    ResolvedProblem resolved = resolve_problem(config.problem);
    const DataInformedProblem& problem = resolved.problem;
    RunAllResult out;
    std::vector<StageRecord> records;

    const fs::path cdir = config.output_dir / "classifier";
    if (options.resume && fs::exists(cdir / "stage.json")) {
        spdlog::info("resuming: reusing classifier checkpoint in {}", cdir.string());
        out.classifier.state = load_classifier(cdir);
        out.classifier.record = stage_from_json(io::read_json(cdir / "stage.json"));
        out.classifier.record.resumed = true;
    } else {
        out.classifier = run_classifier_stage(config, problem, cdir);
    }
    records.push_back(out.classifier.record);
    write_manifest(config, records);

    const fs::path sdir = config.output_dir / "surrogate";
    if (options.resume && fs::exists(sdir / "stage.json") &&
        !out.classifier.record.started.empty() && out.classifier.record.resumed) {
        spdlog::info("resuming: reusing surrogate checkpoint in {}", sdir.string());
        out.surrogate.fit.surrogate = load_surrogate(sdir);
        out.surrogate.record = stage_from_json(io::read_json(sdir / "stage.json"));
        out.surrogate.record.resumed = true;
    } else {
        out.surrogate = run_surrogate_stage(config, problem, out.classifier.state, sdir);
    }
    records.push_back(out.surrogate.record);
    write_manifest(config, records);

    const Matrix starts = load_surrogate_starts(sdir);
    out.optimize = run_optimize_stage(config, problem, out.classifier.state,
                                      out.surrogate.fit.surrogate, starts,
                                      config.output_dir / "optimize");
    records.push_back(out.optimize.record);
    out.manifest = write_manifest(config, records);
    return out;
}

}  // namespace dido::pipeline
