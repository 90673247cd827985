#include "homopursuit/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <limits>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "homopursuit/errors.hpp"
#include "homopursuit/io.hpp"
#include "homopursuit/metrics.hpp"
#include "homopursuit/selection.hpp"
#include "homopursuit/simlab.hpp"

namespace homopursuit::cli {

namespace {

using io::json;
namespace fs = std::filesystem;

struct Options {
    std::string command;
    std::string config;
    std::string out;
    std::string data;
    std::string fit;
    std::string truth;
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

// ---- strict config accessors ------------------------------------------------

std::string where_of(const std::string& ctx, const char* key) {
    return ctx + "." + key;
}

std::optional<double> opt_double(const json& obj, const char* key, const std::string& ctx) {
    if (!obj.contains(key)) return std::nullopt;
    const json& v = obj[key];
    if (!v.is_number()) throw ConfigError(where_of(ctx, key) + " must be a number");
    return v.get<double>();
}

std::optional<Index> opt_index(const json& obj, const char* key, const std::string& ctx) {
    if (!obj.contains(key)) return std::nullopt;
    const json& v = obj[key];
    if (!v.is_number_integer()) throw ConfigError(where_of(ctx, key) + " must be an integer");
    return v.get<Index>();
}

std::optional<std::string> opt_string(const json& obj, const char* key, const std::string& ctx) {
    if (!obj.contains(key)) return std::nullopt;
    const json& v = obj[key];
    if (!v.is_string()) throw ConfigError(where_of(ctx, key) + " must be a string");
    return v.get<std::string>();
}

std::vector<Index> index_list(const json& obj, const char* key, const std::string& ctx) {
    const json& v = obj[key];
    if (!v.is_array() || v.empty()) throw ConfigError(where_of(ctx, key) + " must be a non-empty array");
    std::vector<Index> out;
    for (const json& e : v) {
        if (!e.is_number_integer()) throw ConfigError(where_of(ctx, key) + " must hold integers");
        out.push_back(e.get<Index>());
    }
    return out;
}

Ranks parse_ranks(const json& v, const std::string& ctx, bool need_k) {
    io::reject_unknown_keys(v, {"r", "K1", "K2"}, ctx);
    Ranks r;
    const auto rr = opt_index(v, "r", ctx);
    if (!rr) throw ConfigError(ctx + ".r is required");
    r.r = *rr;
    const auto k1 = opt_index(v, "K1", ctx), k2 = opt_index(v, "K2", ctx);
    if (need_k && (!k1 || !k2)) throw ConfigError(ctx + ": K1 and K2 are required");
    r.K1 = k1.value_or(r.r);
    r.K2 = k2.value_or(r.r);
    return r;
}

json ranks_json(const Ranks& r) {
    return {{"r", r.r}, {"K1", r.K1}, {"K2", r.K2}};
}

template <typename Fn>
auto as_config(Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const ArgumentError& e) {
        throw ConfigError(e.what());
    }
}

// ---- run manifest -----------------------------------------------------------

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

class RunManifest {
public:
    RunManifest(const Options& opt, fs::path dir) : dir_(std::move(dir)) {
        doc_ = {{"command", opt.command},
                {"config_path", opt.config},
                {"seed", opt.seed ? json(*opt.seed) : json(nullptr)},
                {"threads", opt.threads},
                {"output_dir", dir_.string()},
                {"version", io::kVersion},
                {"started_at", utc_now()},
                {"finished_at", nullptr},
                {"status", "running"}};
        if (!opt.data.empty()) doc_["dataset_dir"] = opt.data;
        if (!opt.fit.empty()) doc_["fit_dir"] = opt.fit;
        if (!opt.truth.empty()) doc_["truth_dir"] = opt.truth;
        fs::create_directories(dir_);
        flush();
    }

    void set_seed(std::uint64_t seed) {
        doc_["seed"] = seed;
        flush();
    }

    void finish(const std::string& status) {
        doc_["finished_at"] = utc_now();
        doc_["status"] = status;
        flush();
    }

private:
    void flush() const { io::write_json(dir_ / "manifest.json", doc_); }

    fs::path dir_;
    json doc_;
};

// ---- simulate ----------------------------------------------------------------

struct SimPlan {
    std::string experiment;  // rank, rate, dataset
    SimConfig base;
    std::vector<Index> grid_n, grid_m;
    std::vector<SparseSetting> grid_setting;
    RateAxis axis = RateAxis::N;
    std::vector<Index> values;
    json echo;
};

SimPlan parse_sim_plan(const json& cfg, const Options& opt) {
    const std::string ctx = "config";
    io::reject_unknown_keys(cfg,
                            {"experiment", "p1", "p2", "n", "m", "ranks", "model", "noise_sd", "core_scale", "setting",
                             "reps", "seed", "rbar", "support", "eta", "max_iters", "tol", "grid", "axis", "values",
                             "oracle_ranks"},
                            ctx);
    SimPlan plan;
    plan.experiment = opt_string(cfg, "experiment", ctx).value_or("");
    if (plan.experiment != "rank" && plan.experiment != "rate" && plan.experiment != "dataset") {
        throw ConfigError("config.experiment must be one of rank, rate, dataset");
    }
    SimConfig& s = plan.base;
    s.p1 = opt_index(cfg, "p1", ctx).value_or(s.p1);
    s.p2 = opt_index(cfg, "p2", ctx).value_or(s.p2);
    s.n = opt_index(cfg, "n", ctx).value_or(s.n);
    s.m = opt_index(cfg, "m", ctx).value_or(s.m);
    if (cfg.contains("ranks")) s.ranks = parse_ranks(cfg["ranks"], "config.ranks", true);
    if (auto v = opt_string(cfg, "model", ctx)) s.model = as_config([&] { return parse_link(*v); });
    s.noise_sd = opt_double(cfg, "noise_sd", ctx).value_or(s.noise_sd);
    if (cfg.contains("core_scale")) {
        const json& v = cfg["core_scale"];
        if (!v.is_array()) throw ConfigError("config.core_scale must be an array");
        s.core_scale.clear();
        for (const json& e : v) {
            if (!e.is_number()) throw ConfigError("config.core_scale must hold numbers");
            s.core_scale.push_back(e.get<double>());
        }
    } else if (static_cast<Index>(s.core_scale.size()) != s.ranks.r) {
        s.core_scale.assign(static_cast<std::size_t>(s.ranks.r), 5.0);
    }
    if (auto v = opt_string(cfg, "setting", ctx)) s.setting = as_config([&] { return parse_setting(*v); });
    if (auto v = opt_index(cfg, "reps", ctx)) s.reps = static_cast<int>(*v);
    if (cfg.contains("seed")) {
        if (!cfg["seed"].is_number_unsigned()) throw ConfigError("config.seed must be a nonnegative integer");
        s.seed = cfg["seed"].get<std::uint64_t>();
    }
    if (opt.seed) s.seed = *opt.seed;
    s.rbar = opt_index(cfg, "rbar", ctx).value_or(s.rbar);
    s.support = opt_index(cfg, "support", ctx).value_or(s.support);
    s.eta = opt_double(cfg, "eta", ctx);
    if (auto v = opt_index(cfg, "max_iters", ctx)) s.max_iters = static_cast<int>(*v);
    s.tol = opt_double(cfg, "tol", ctx).value_or(s.tol);
    s.threads = opt.threads;

    if (cfg.contains("grid")) {
        if (plan.experiment != "rank") throw ConfigError("config.grid applies to rank experiments only");
        const json& g = cfg["grid"];
        io::reject_unknown_keys(g, {"n", "m", "setting"}, "config.grid");
        if (g.contains("n")) plan.grid_n = index_list(g, "n", "config.grid");
        if (g.contains("m")) plan.grid_m = index_list(g, "m", "config.grid");
        if (g.contains("setting")) {
            if (!g["setting"].is_array() || g["setting"].empty()) {
                throw ConfigError("config.grid.setting must be a non-empty array");
            }
            for (const json& e : g["setting"]) {
                if (!e.is_string()) throw ConfigError("config.grid.setting must hold strings");
                plan.grid_setting.push_back(as_config([&] { return parse_setting(e.get<std::string>()); }));
            }
        }
    }
    if (plan.grid_n.empty()) plan.grid_n = {s.n};
    if (plan.grid_m.empty()) plan.grid_m = {s.m};
    if (plan.grid_setting.empty()) plan.grid_setting = {s.setting};

    if (plan.experiment == "rate") {
        const std::string ax = opt_string(cfg, "axis", ctx).value_or("");
        if (ax != "n" && ax != "m") throw ConfigError("config.axis must be \"n\" or \"m\" for rate experiments");
        plan.axis = ax == "n" ? RateAxis::N : RateAxis::M;
        if (!cfg.contains("values")) throw ConfigError("config.values is required for rate experiments");
        plan.values = index_list(cfg, "values", ctx);
        if (plan.values.size() < 2) throw ConfigError("config.values needs at least two grid points");
        if (cfg.contains("oracle_ranks")) {
            if (!cfg["oracle_ranks"].is_boolean()) throw ConfigError("config.oracle_ranks must be a boolean");
            s.oracle_ranks = cfg["oracle_ranks"].get<bool>();
        }
    } else if (cfg.contains("axis") || cfg.contains("values") || cfg.contains("oracle_ranks")) {
        throw ConfigError("config.axis/values/oracle_ranks apply to rate experiments only");
    }

    // Validate every cell up front so a bad sweep fails before any output.
    for (Index n : plan.grid_n) {
        for (Index m : plan.grid_m) {
            for (SparseSetting st : plan.grid_setting) {
                SimConfig c = s;
                c.n = n;
                c.m = m;
                c.setting = st;
                as_config([&] { c.validate(); return 0; });
            }
        }
    }
    for (Index v : plan.values) {
        SimConfig c = s;
        (plan.axis == RateAxis::N ? c.n : c.m) = v;
        as_config([&] { c.validate(); return 0; });
    }

    plan.echo = {{"experiment", plan.experiment},
                 {"p1", s.p1},
                 {"p2", s.p2},
                 {"n", s.n},
                 {"m", s.m},
                 {"ranks", ranks_json(s.ranks)},
                 {"model", std::string(to_string(s.model))},
                 {"noise_sd", s.noise_sd},
                 {"core_scale", s.core_scale},
                 {"setting", std::string(to_string(s.setting))},
                 {"reps", s.reps},
                 {"seed", s.seed},
                 {"rbar", s.rbar},
                 {"support", s.support},
                 {"eta", s.eta ? json(*s.eta) : json(nullptr)},
                 {"max_iters", s.max_iters},
                 {"tol", s.tol}};
    if (plan.experiment == "rank") {
        json settings = json::array();
        for (SparseSetting st : plan.grid_setting) settings.push_back(std::string(to_string(st)));
        plan.echo["grid"] = {{"n", plan.grid_n}, {"m", plan.grid_m}, {"setting", settings}};
    }
    if (plan.experiment == "rate") {
        plan.echo["axis"] = plan.axis == RateAxis::N ? "n" : "m";
        plan.echo["values"] = plan.values;
        plan.echo["oracle_ranks"] = s.oracle_ranks;
    }
    return plan;
}

json rep_json(const RepOutcome& o) {
    json j = {{"index", o.index}, {"seed", o.seed}, {"ok", o.ok}};
    if (!o.ok) j["error"] = o.error;
    j["selected"] = ranks_json(o.selected);
    j["correct"] = o.correct;
    j["err_B"] = o.err_B;
    j["err_C"] = o.err_C;
    j["err_R"] = o.err_R;
    j["iters"] = o.iters;
    j["seconds"] = o.seconds;
    return j;
}

json cell_json(const ExperimentCell& cell) {
    const CellSummary& s = cell.summary;
    json reps = json::array();
    for (const RepOutcome& o : cell.reps) reps.push_back(rep_json(o));
    return {{"n", s.n},
            {"m", s.m},
            {"setting", std::string(to_string(s.setting))},
            {"summary",
             {{"reps", s.reps},
              {"failures", s.failures},
              {"prop_correct", s.prop_correct},
              {"neglog_err_B", s.neglog_err_B},
              {"neglog_err_C", s.neglog_err_C},
              {"neglog_err_R", s.neglog_err_R},
              {"mean_iters", s.mean_iters}}},
            {"replications", reps}};
}

void write_rank_outputs(const fs::path& dir, const std::vector<ExperimentCell>& cells, const json& echo) {
    json cj = json::array();
    io::CsvTable table({"n", "m", "setting", "reps", "failures", "prop_correct"});
    for (const ExperimentCell& c : cells) {
        cj.push_back(cell_json(c));
        const CellSummary& s = c.summary;
        table.add_row({std::to_string(s.n), std::to_string(s.m), std::string(to_string(s.setting)),
                       std::to_string(s.reps), std::to_string(s.failures), io::format_double(s.prop_correct)});
    }
    io::write_json(dir / "records.json", {{"kind", "rank"}, {"config", echo}, {"cells", cj}});
    table.write(dir / "summary.csv");
}

void write_rate_outputs(const fs::path& dir, const ExperimentRecord& rec, const json& echo) {
    json cj = json::array();
    io::CsvTable table({"n", "m", "setting", "reps", "failures", "prop_correct", "neglog_err_B", "neglog_err_C",
                        "neglog_err_R"});
    for (const ExperimentCell& c : rec.cells) {
        cj.push_back(cell_json(c));
        const CellSummary& s = c.summary;
        table.add_row({std::to_string(s.n), std::to_string(s.m), std::string(to_string(s.setting)),
                       std::to_string(s.reps), std::to_string(s.failures), io::format_double(s.prop_correct),
                       io::format_double(s.neglog_err_B), io::format_double(s.neglog_err_C),
                       io::format_double(s.neglog_err_R)});
    }
    json doc = {{"kind", "rate"}, {"config", echo}, {"cells", cj}};
    if (rec.slopes) {
        doc["slopes"] = {{"axis", rec.slopes->axis},
                         {"neglog_err_B", rec.slopes->slope_B},
                         {"neglog_err_C", rec.slopes->slope_C},
                         {"neglog_err_R", rec.slopes->slope_R}};
        io::CsvTable slopes({"axis", "metric", "slope"});
        slopes.add_row({rec.slopes->axis, "neglog_err_B", io::format_double(rec.slopes->slope_B)});
        slopes.add_row({rec.slopes->axis, "neglog_err_C", io::format_double(rec.slopes->slope_C)});
        slopes.add_row({rec.slopes->axis, "neglog_err_R", io::format_double(rec.slopes->slope_R)});
        slopes.write(dir / "slopes.csv");
    }
    io::write_json(dir / "records.json", doc);
    table.write(dir / "summary.csv");
}

int cmd_simulate(const Options& opt, std::ostream& out) {
    if (opt.config.empty()) throw ConfigError("simulate requires --config");
    if (opt.out.empty()) throw ConfigError("simulate requires --out");
    const SimPlan plan = parse_sim_plan(io::read_json(opt.config), opt);
    const fs::path dir = opt.out;
    RunManifest manifest(opt, dir);
    manifest.set_seed(plan.base.seed);
    io::write_json(dir / "config.json", plan.echo);

    try {
        if (plan.experiment == "rank") {
            std::vector<ExperimentCell> cells;
            for (SparseSetting st : plan.grid_setting) {
                for (Index n : plan.grid_n) {
                    for (Index m : plan.grid_m) {
                        SimConfig c = plan.base;
                        c.n = n;
                        c.m = m;
                        c.setting = st;
                        cells.push_back(run_rank_experiment(c));
                        const CellSummary& s = cells.back().summary;
                        out << "rank n=" << n << " m=" << m << " setting=" << to_string(st)
                            << " prop_correct=" << io::format_double(s.prop_correct) << "\n";
                        write_rank_outputs(dir, cells, plan.echo);
                    }
                }
            }
        } else if (plan.experiment == "rate") {
            const ExperimentRecord rec = run_rate_experiment(plan.base, plan.axis, plan.values);
            write_rate_outputs(dir, rec, plan.echo);
            out << "rate slopes vs log " << rec.slopes->axis << ": B " << io::format_double(rec.slopes->slope_B)
                << " C " << io::format_double(rec.slopes->slope_C) << " R "
                << io::format_double(rec.slopes->slope_R) << "\n";
        } else {
            const std::uint64_t seed = sub_seed(plan.base.seed, 0);
            Rng rng(seed);
            const TrueParamPack truth = gen_true_params(plan.base, rng);
            const DatasetBundle bundle = gen_dataset(truth, plan.base, rng);
            io::write_dataset(dir / "data", bundle.data, plan.base.model);
            io::write_theta(dir / "truth", truth.theta_star, {{"kind", "truth"}});
            const double norm_b = std::sqrt(truth.B_star.squared_norm());
            io::CsvTable table({"n", "m", "p1", "p2", "model", "setting", "seed", "norm_B"});
            table.add_row({std::to_string(plan.base.n), std::to_string(plan.base.m), std::to_string(plan.base.p1),
                           std::to_string(plan.base.p2), std::string(to_string(plan.base.model)),
                           std::string(to_string(plan.base.setting)), std::to_string(seed), io::format_double(norm_b)});
            table.write(dir / "summary.csv");
            io::write_json(dir / "records.json",
                           {{"kind", "dataset"}, {"config", plan.echo}, {"seed", seed}, {"data_dir", "data"},
                            {"truth_dir", "truth"}});
            out << "dataset written to " << (dir / "data").string() << "\n";
        }
    } catch (...) {
        manifest.finish("failed");
        throw;
    }
    manifest.finish("ok");
    return kOk;
}

// ---- fit / ranks ---------------------------------------------------------------

struct FitPlan {
    std::string algorithm;
    bool auto_ranks = true;
    Ranks ranks;
    FitConfig cfg;
    SelectionOptions sel;
    json echo;
};

const std::vector<std::string> kTuningKeys = {"sparsity", "eta", "max_iters", "tol", "ridge_eps", "damping",
                                              "rbar",     "delta1", "delta2",     "search_max", "dataset"};

void parse_tuning(const json& cfg, const std::string& ctx, LinkKind link, FitConfig& fc, SelectionOptions& sel) {
    fc = FitConfig::defaults(link);
    fc.eta = opt_double(cfg, "eta", ctx).value_or(fc.eta);
    if (auto v = opt_index(cfg, "max_iters", ctx)) fc.max_iters = static_cast<int>(*v);
    fc.tol = opt_double(cfg, "tol", ctx).value_or(fc.tol);
    fc.ridge_eps = opt_double(cfg, "ridge_eps", ctx).value_or(fc.ridge_eps);
    fc.damping = opt_double(cfg, "damping", ctx).value_or(fc.damping);
    if (cfg.contains("sparsity")) {
        const json& s = cfg["sparsity"];
        io::reject_unknown_keys(s, {"s1", "s2"}, ctx + ".sparsity");
        const auto s1 = opt_index(s, "s1", ctx + ".sparsity"), s2 = opt_index(s, "s2", ctx + ".sparsity");
        if (!s1 || !s2) throw ConfigError(ctx + ".sparsity needs s1 and s2");
        fc.sparsity = Sparsity{*s1, *s2};
    }
    sel.rbar = opt_index(cfg, "rbar", ctx).value_or(sel.rbar);
    sel.delta1 = opt_double(cfg, "delta1", ctx);
    sel.delta2 = opt_double(cfg, "delta2", ctx);
    sel.search_max = opt_index(cfg, "search_max", ctx);
}

json tuning_echo(const FitConfig& fc, const SelectionOptions& sel) {
    json j = {{"link", std::string(to_string(fc.link))},
              {"eta", fc.eta},
              {"max_iters", fc.max_iters},
              {"tol", fc.tol},
              {"ridge_eps", fc.ridge_eps},
              {"damping", fc.damping},
              {"rbar", sel.rbar}};
    j["sparsity"] = fc.sparsity ? json{{"s1", fc.sparsity->s1}, {"s2", fc.sparsity->s2}} : json(nullptr);
    j["delta1"] = sel.delta1 ? json(*sel.delta1) : json(nullptr);
    j["delta2"] = sel.delta2 ? json(*sel.delta2) : json(nullptr);
    j["search_max"] = sel.search_max ? json(*sel.search_max) : json(nullptr);
    return j;
}

std::string dataset_dir(const Options& opt, const json& cfg) {
    if (!opt.data.empty()) return opt.data;
    if (cfg.contains("dataset")) {
        if (!cfg["dataset"].is_string()) throw ConfigError("config.dataset must be a string");
        fs::path p = cfg["dataset"].get<std::string>();
        if (p.is_relative() && !opt.config.empty()) p = fs::path(opt.config).parent_path() / p;
        return p.string();
    }
    throw ConfigError("no dataset: pass --data or set config.dataset");
}

FitPlan parse_fit_plan(const json& cfg, LinkKind link, const io::DatasetFiles& ds) {
    const std::string ctx = "config";
    std::vector<std::string> keys = kTuningKeys;
    keys.insert(keys.end(), {"algorithm", "ranks"});
    io::reject_unknown_keys(cfg, keys, ctx);
    FitPlan plan;
    plan.algorithm = opt_string(cfg, "algorithm", ctx).value_or("");
    const std::vector<std::string> algos = {"homo", "hetero", "homo-sparse", "hetero-sparse"};
    if (std::find(algos.begin(), algos.end(), plan.algorithm) == algos.end()) {
        throw ConfigError("config.algorithm must be one of homo, hetero, homo-sparse, hetero-sparse");
    }
    parse_tuning(cfg, ctx, link, plan.cfg, plan.sel);
    const bool sparse = plan.algorithm.ends_with("-sparse");
    if (sparse && !plan.cfg.sparsity) throw ConfigError("config.sparsity is required for " + plan.algorithm);
    if (!sparse && plan.cfg.sparsity) throw ConfigError("config.sparsity only applies to sparse algorithms");
    const bool hetero = plan.algorithm.starts_with("hetero");
    if (!cfg.contains("ranks") || (cfg["ranks"].is_string() && cfg["ranks"] == "auto")) {
        plan.auto_ranks = true;
    } else if (cfg["ranks"].is_object()) {
        plan.auto_ranks = false;
        plan.ranks = parse_ranks(cfg["ranks"], "config.ranks", !hetero);
    } else {
        throw ConfigError("config.ranks must be \"auto\" or an object {r, K1, K2}");
    }
    FitConfig check = plan.cfg;
    if (!plan.auto_ranks) check.ranks = plan.ranks;
    as_config([&] { check.validate(ds.data.p1(), ds.data.p2()); return 0; });

    plan.echo = tuning_echo(plan.cfg, plan.sel);
    plan.echo["algorithm"] = plan.algorithm;
    plan.echo["ranks"] = plan.auto_ranks ? json("auto") : ranks_json(plan.ranks);
    return plan;
}

json selection_json(const SelectionResult& s) {
    return {{"r", s.choice.r},
            {"K1", s.choice.K1},
            {"K2", s.choice.K2},
            {"ratios_r", s.choice.ratios_r},
            {"ratios_K1", s.choice.ratios_K1},
            {"ratios_K2", s.choice.ratios_K2},
            {"eigvals_C", std::vector<double>(s.aggregate.eigvals_C.begin(), s.aggregate.eigvals_C.end())},
            {"eigvals_R", std::vector<double>(s.aggregate.eigvals_R.begin(), s.aggregate.eigvals_R.end())}};
}

json rows_json(const ActiveRows& a) {
    return {{"S1", a.S1}, {"S2", a.S2}};
}

// iters is the maximum over individuals for the per-individual fits.
void write_fit_summary(const fs::path& dir, const std::string& algorithm, const Ranks& ranks, int iters,
                       bool converged, double loss) {
    io::CsvTable table({"algorithm", "r", "K1", "K2", "iters", "converged", "final_loss"});
    table.add_row({algorithm, std::to_string(ranks.r), std::to_string(ranks.K1), std::to_string(ranks.K2),
                   std::to_string(iters), converged ? "1" : "0", io::format_double(loss)});
    table.write(dir / "summary.csv");
}

int cmd_fit(const Options& opt, std::ostream& out) {
    if (opt.config.empty()) throw ConfigError("fit requires --config");
    if (opt.out.empty()) throw ConfigError("fit requires --out");
    const json cfg = io::read_json(opt.config);
    const std::string data_dir = dataset_dir(opt, cfg);
    const io::DatasetFiles ds = io::read_dataset(data_dir);
    FitPlan plan = parse_fit_plan(cfg, ds.model, ds);
    plan.cfg.threads = opt.threads;
    if (opt.seed) plan.cfg.seed = static_cast<unsigned>(*opt.seed);
    plan.echo["dataset"] = data_dir;

    const fs::path dir = opt.out;
    Options with_data = opt;
    with_data.data = data_dir;
    RunManifest manifest(with_data, dir);
    io::write_json(dir / "config.json", plan.echo);
    const Dataset& data = ds.data;

    try {
        std::optional<SelectionResult> sel;
        Ranks ranks = plan.ranks;
        if (plan.auto_ranks) {
            sel = select_ranks(data, plan.cfg, plan.sel);
            ranks = Ranks{sel->choice.r, sel->choice.K1, sel->choice.K2};
            io::write_json(dir / "selection.json", selection_json(*sel));
            out << "selected ranks r=" << ranks.r << " K1=" << ranks.K1 << " K2=" << ranks.K2 << "\n";
        }
        FitConfig fc = plan.cfg;
        fc.ranks = ranks;
        const json info = {{"algorithm", plan.algorithm}, {"ranks", ranks_json(ranks)}};

        if (plan.algorithm.starts_with("hetero")) {
            const HeteroFit fit = sel ? sel->fits_at_r : fit_individuals(data, fc, ranks.r);
            io::write_hetero(dir, fit, info);
            io::CsvTable table({"individual", "iters", "converged", "loss"});
            const Link link{fc.link};
            double total_loss = 0.0;
            for (Index i = 0; i < fit.n(); ++i) {
                const auto k = static_cast<std::size_t>(i);
                const double li = individual_loss(fit.coefficient(i), data.individual(i), link);
                total_loss += li;
                table.add_row({std::to_string(i + 1), std::to_string(fit.iters[k]), fit.converged[k] ? "1" : "0",
                               io::format_double(li)});
            }
            table.write(dir / "individual_fits.csv");
            int max_iters = 0;
            bool all_converged = true;
            for (Index i = 0; i < fit.n(); ++i) {
                max_iters = std::max(max_iters, fit.iters[static_cast<std::size_t>(i)]);
                all_converged = all_converged && fit.converged[static_cast<std::size_t>(i)];
            }
            write_fit_summary(dir, plan.algorithm, ranks, max_iters, all_converged, total_loss);
            if (!fit.active_rows.empty()) {
                json rows = json::array();
                for (const ActiveRows& a : fit.active_rows) rows.push_back(rows_json(a));
                io::write_json(dir / "active_rows.json", {{"individuals", rows}});
            }
            out << "fitted " << fit.n() << " individual low-rank models at r=" << ranks.r << "\n";
        } else {
            const HeteroFit pre = sel ? sel->fits_at_r : balance(fit_individuals(data, fc, ranks.r));
            const ParameterSet init = initialize_shared(pre, ranks.K1, ranks.K2);
            const FitReport rep = fc.sparsity ? fit_homogeneous_sparse(data, init, fc) : fit_homogeneous(data, init, fc);
            json meta = info;
            meta["iters"] = rep.iters;
            meta["converged"] = rep.converged;
            io::write_theta(dir, rep.theta, meta);
            io::CsvTable trace({"iter", "loss"});
            for (std::size_t t = 0; t < rep.loss_trace.size(); ++t) {
                trace.add_row({std::to_string(t), io::format_double(rep.loss_trace[t])});
            }
            trace.write(dir / "loss_trace.csv");
            if (rep.active_rows) io::write_json(dir / "active_rows.json", rows_json(*rep.active_rows));
            write_fit_summary(dir, plan.algorithm, ranks, rep.iters, rep.converged, rep.loss_trace.back());
            out << "fit finished after " << rep.iters << " iterations, final loss "
                << io::format_double(rep.loss_trace.back()) << "\n";
        }
    } catch (...) {
        manifest.finish("failed");
        throw;
    }
    manifest.finish("ok");
    return kOk;
}

int cmd_ranks(const Options& opt, std::ostream& out) {
    if (opt.out.empty()) throw ConfigError("ranks requires --out");
    const json cfg = opt.config.empty() ? json::object() : io::read_json(opt.config);
    io::reject_unknown_keys(cfg, kTuningKeys, "config");
    const std::string data_dir = dataset_dir(opt, cfg);
    const io::DatasetFiles ds = io::read_dataset(data_dir);
    FitConfig fc;
    SelectionOptions sel;
    parse_tuning(cfg, "config", ds.model, fc, sel);
    fc.threads = opt.threads;
    FitConfig check = fc;
    check.ranks = Ranks{1, 1, 1};
    as_config([&] { check.validate(ds.data.p1(), ds.data.p2()); return 0; });
    if (sel.rbar < 2 || sel.rbar > std::min(ds.data.p1(), ds.data.p2())) {
        throw ConfigError("config.rbar must lie in [2, min(p1, p2)]");
    }

    const fs::path dir = opt.out;
    Options with_data = opt;
    with_data.data = data_dir;
    RunManifest manifest(with_data, dir);
    json echo = tuning_echo(fc, sel);
    echo["dataset"] = data_dir;
    io::write_json(dir / "config.json", echo);
    try {
        const SelectionResult res = select_ranks(ds.data, fc, sel);
        io::write_json(dir / "ranks.json", selection_json(res));
        io::CsvTable table({"r", "K1", "K2"});
        table.add_row({std::to_string(res.choice.r), std::to_string(res.choice.K1), std::to_string(res.choice.K2)});
        table.write(dir / "summary.csv");
        out << "selected ranks r=" << res.choice.r << " K1=" << res.choice.K1 << " K2=" << res.choice.K2 << "\n";
    } catch (...) {
        manifest.finish("failed");
        throw;
    }
    manifest.finish("ok");
    return kOk;
}

// ---- eval --------------------------------------------------------------------

int cmd_eval(const Options& opt, std::ostream& out) {
    if (opt.fit.empty() || opt.truth.empty()) throw ConfigError("eval requires --fit and --truth");
    if (opt.out.empty()) throw ConfigError("eval requires --out");
    const io::ThetaFiles fit = io::read_theta(opt.fit);
    const io::ThetaFiles truth = io::read_theta(opt.truth);
    if (truth.layout != "shared") throw ConfigError(opt.truth + ": truth must use the shared layout");
    const Tensor3 b_hat = io::coefficients(fit);
    const TrueParamPack pack = true_pack_from_factors(truth.shared);
    if (b_hat.dims() != pack.B_star.dims()) {
        throw ConfigError("fit and truth dimensions differ");
    }

    const fs::path dir = opt.out;
    RunManifest manifest(opt, dir);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const TensorErrors te = tensor_errors(b_hat, pack.B_star);
    const double norm_star = pack.B_star.squared_norm();
    const double rel = norm_star > 0.0 ? std::sqrt(te.total / norm_star) : nan;
    double pc = nan, pr = nan, dist = nan;
    std::string dist_state = "unavailable";
    if (fit.layout == "shared") {
        pc = proj_frob_error(fit.shared.C, pack.theta_star.C);
        pr = proj_frob_error(fit.shared.R, pack.theta_star.R);
        const ParameterSet& s = pack.theta_star;
        if (fit.shared.K1() == s.K1() && fit.shared.K2() == s.K2() && fit.shared.r() == s.r()) {
            try {
                const AlignmentTransforms t = align_and_dist(fit.shared, pack);
                dist = t.objective;
                dist_state = t.converged ? "upper_bound" : "upper_bound_unconverged";
            } catch (const SingularityError&) {
                dist_state = "singular";
            }
        }
    }
    io::CsvTable table({"total_error", "per_individual_error", "relative_error", "proj_error_C", "proj_error_R",
                        "dist_sq", "dist_status"});
    table.add_row({io::format_double(te.total), io::format_double(te.per_individual_avg), io::format_double(rel),
                   io::format_double(pc), io::format_double(pr), io::format_double(dist), dist_state});
    table.write(dir / "metrics.csv");
    manifest.finish("ok");
    out << "relative error " << io::format_double(rel) << "\n";
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"homopursuit: shared-subspace trace regression"};
    app.require_subcommand(1);
    Options opt;
    const auto common = [&opt](CLI::App* sub) {
        sub->add_option("--config", opt.config, "JSON config file");
        sub->add_option("--out", opt.out, "output directory");
        sub->add_option("--seed", opt.seed, "master seed (overrides the config)");
        sub->add_option("--threads", opt.threads, "worker cap")->check(CLI::PositiveNumber);
    };
    CLI::App* sim = app.add_subcommand("simulate", "run a synthetic experiment or write a synthetic dataset");
    CLI::App* fit = app.add_subcommand("fit", "fit a dataset directory");
    CLI::App* ev = app.add_subcommand("eval", "compare a fit with known truth");
    CLI::App* rk = app.add_subcommand("ranks", "select (r, K1, K2) for a dataset");
    for (CLI::App* sub : {sim, fit, ev, rk}) common(sub);
    fit->add_option("--data", opt.data, "dataset directory");
    rk->add_option("--data", opt.data, "dataset directory");
    ev->add_option("--fit", opt.fit, "fit output directory");
    ev->add_option("--truth", opt.truth, "truth directory");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n" << app.help();
        return kUsage;
    }

    try {
        if (*sim) {
            opt.command = "simulate";
            return cmd_simulate(opt, out);
        }
        if (*fit) {
            opt.command = "fit";
            return cmd_fit(opt, out);
        }
        if (*ev) {
            opt.command = "eval";
            return cmd_eval(opt, out);
        }
        opt.command = "ranks";
        return cmd_ranks(opt, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const ArgumentError& e) {
        err << "invalid input: " << e.what() << "\n";
        return kUsage;
    } catch (const DivergenceError& e) {
        err << "diverged: " << e.what() << "\n";
        return kDivergence;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << "\n";
        return kRuntime;
    }
}

}  // namespace homopursuit::cli
