#include "nfm/experiment.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "nfm/digest.hpp"
#include "nfm/theory.hpp"

namespace nfm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kSchemeNames[] = {"baseline",       "noise", "mixup",     "noisy_mixup",
                                        "manifold_mixup", "nfm",   "pgd_train", "dropout",
                                        "weight_decay"};

std::string num(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return ec == std::errc() ? std::string(buf, end) : "nan";
}

std::string noise_law_name(NoiseLaw l) { return l == NoiseLaw::gaussian ? "gaussian" : "uniform"; }

NoiseLaw noise_law_from(const std::string& s) {
    if (s == "gaussian") return NoiseLaw::gaussian;
    if (s == "uniform") return NoiseLaw::uniform;
    throw std::invalid_argument("unknown noise law '" + s + "'");
}

json bound_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

// ---- Serialization -----------------------------------------------------------

json perturbation_json(const PerturbationSpec& p) {
    return {{"kind", to_string(p.kind)},
            {"severity", p.severity},
            {"norm", to_string(p.norm)},
            {"iterations", p.iterations},
            {"step_size", p.step_size},
            {"random_start", p.random_start},
            {"bounds", {bound_json(p.bounds.min), bound_json(p.bounds.max)}}};
}

json config_json(const ExperimentConfig& c) {
    const TrainConfig& t = c.train;
    const NFMConfig& n = t.nfm;
    json schemes = json::array();
    for (Scheme s : c.schemes) schemes.push_back(to_string(s));
    json evals = json::array();
    for (const EvalSpec& e : c.evaluations)
        evals.push_back({{"kind", to_string(e.kind)},
                         {"severities", e.severities},
                         {"replicates", e.replicates},
                         {"norm", to_string(e.norm)},
                         {"iterations", e.iterations}});
    const TheorySpec& th = c.theory;
    return {
        {"name", c.name},
        {"data",
         {{"source", c.data.source},
          {"circles",
           {{"n", c.data.circles.n},
            {"scale_factor", c.data.circles.scale_factor},
            {"noise_std", c.data.circles.noise_std},
            {"train_fraction", c.data.circles.train_fraction},
            {"stratified", c.data.circles.stratified}}},
          {"train_path", c.data.train_path},
          {"test_path", c.data.test_path},
          {"features", c.data.schema.features},
          {"classes", c.data.schema.classes},
          {"label_column", c.data.schema.label_column}}},
        {"model", {{"hidden", c.model.hidden}, {"activation", to_string(c.model.activation)}}},
        {"train",
         {{"optimizer", to_string(t.optimizer)},
          {"learning_rate", t.learning_rate},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"momentum", t.momentum},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"adam_eps", t.adam_eps},
          {"loss", to_string(t.loss)},
          {"eval_every", t.eval_every}}},
        {"nfm",
         {{"alpha", n.law.alpha},
          {"beta", n.law.beta},
          {"sigma_add", n.sigma_add},
          {"sigma_mult", n.sigma_mult},
          {"eligible", n.eligible},
          {"noise_law", noise_law_name(n.noise_law)},
          {"epsilon", n.epsilon},
          {"per_pair_lambda", n.per_pair_lambda},
          {"lambda_fixed_to_one", n.lambda_fixed_to_one}}},
        {"schemes", schemes},
        {"scheme_params",
         {{"dropout", c.scheme_params.dropout},
          {"weight_decay", c.scheme_params.weight_decay},
          {"input_noise_sigma", c.scheme_params.input_noise_sigma},
          {"pgd", perturbation_json(c.scheme_params.pgd)}}},
        {"evaluations", evals},
        {"theory",
         {{"taylor", th.taylor},
          {"eps_grid", th.eps_grid},
          {"twin_sharpness", th.twin_sharpness},
          {"subset", th.subset},
          {"eligible", th.eligible},
          {"quadrature_order", th.quadrature_order},
          {"mc_groups", th.mc_groups},
          {"margin", th.margin},
          {"margin_layer", th.margin_layer},
          {"hull_samples", th.hull_samples},
          {"adv_bound", th.adv_bound}}},
        {"decision_grid",
         {{"enabled", c.decision_grid},
          {"resolution", c.grid_resolution},
          {"box", {c.grid_box.x_min, c.grid_box.x_max, c.grid_box.y_min, c.grid_box.y_max}}}},
        {"seeds", c.seeds},
        {"output_dir", c.output_dir},
    };
}

// Reads the keys of one object, rejecting any it was not asked for.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw std::invalid_argument(where() + "expected an object");
    }

    template <class T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw std::invalid_argument(where() + key + ": " + e.what());
        }
    }

    template <class T, class F>
    void get_as(const std::string& key, T& out, F convert) {
        std::string s;
        get(key, s);
        if (j_.contains(key)) out = convert(s);
    }

    void bound(const json& v, double& out, double missing) {
        if (v.is_null()) out = missing;
        else if (v.is_number()) out = v.get<double>();
        else throw std::invalid_argument(where() + "bounds must be numbers or null");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }
    Reader child(const std::string& key) { return Reader(j_.at(key), path_ + key + "."); }
    const json& raw(const std::string& key) const { return j_.at(key); }
    std::string where() const { return "config " + (path_.empty() ? std::string() : path_); }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw std::invalid_argument("config: unknown key '" + path_ + it.key() + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

PerturbationSpec read_perturbation(Reader r) {
    PerturbationSpec p;
    r.get_as("kind", p.kind, perturbation_from_string);
    r.get("severity", p.severity);
    r.get_as("norm", p.norm, norm_from_string);
    r.get("iterations", p.iterations);
    r.get("step_size", p.step_size);
    r.get("random_start", p.random_start);
    if (r.has("bounds")) {
        const json& b = r.raw("bounds");
        if (!b.is_array() || b.size() != 2)
            throw std::invalid_argument(r.where() + "bounds must be [min, max]");
        r.bound(b[0], p.bounds.min, -std::numeric_limits<double>::infinity());
        r.bound(b[1], p.bounds.max, std::numeric_limits<double>::infinity());
    }
    r.finish();
    return p;
}

ExperimentConfig read_config(const json& j) {
    ExperimentConfig c;
    Reader r(j, "");
    r.get("name", c.name);
    if (r.has("data")) {
        Reader d = r.child("data");
        d.get("source", c.data.source);
        if (d.has("circles")) {
            Reader cr = d.child("circles");
            cr.get("n", c.data.circles.n);
            cr.get("scale_factor", c.data.circles.scale_factor);
            cr.get("noise_std", c.data.circles.noise_std);
            cr.get("train_fraction", c.data.circles.train_fraction);
            cr.get("stratified", c.data.circles.stratified);
            cr.finish();
        }
        d.get("train_path", c.data.train_path);
        d.get("test_path", c.data.test_path);
        d.get("features", c.data.schema.features);
        d.get("classes", c.data.schema.classes);
        d.get("label_column", c.data.schema.label_column);
        d.finish();
    }
    if (r.has("model")) {
        Reader m = r.child("model");
        m.get("hidden", c.model.hidden);
        m.get_as("activation", c.model.activation, activation_from_string);
        m.finish();
    }
    if (r.has("train")) {
        Reader t = r.child("train");
        t.get_as("optimizer", c.train.optimizer, optimizer_from_string);
        t.get("learning_rate", c.train.learning_rate);
        t.get("epochs", c.train.epochs);
        t.get("batch_size", c.train.batch_size);
        t.get("momentum", c.train.momentum);
        t.get("adam_beta1", c.train.adam_beta1);
        t.get("adam_beta2", c.train.adam_beta2);
        t.get("adam_eps", c.train.adam_eps);
        t.get_as("loss", c.train.loss, loss_from_string);
        t.get("eval_every", c.train.eval_every);
        t.finish();
    }
    if (r.has("nfm")) {
        Reader n = r.child("nfm");
        NFMConfig& f = c.train.nfm;
        n.get("alpha", f.law.alpha);
        n.get("beta", f.law.beta);
        n.get("sigma_add", f.sigma_add);
        n.get("sigma_mult", f.sigma_mult);
        n.get("eligible", f.eligible);
        n.get_as("noise_law", f.noise_law, noise_law_from);
        n.get("epsilon", f.epsilon);
        n.get("per_pair_lambda", f.per_pair_lambda);
        n.get("lambda_fixed_to_one", f.lambda_fixed_to_one);
        n.finish();
    }
    if (r.has("schemes")) {
        std::vector<std::string> names;
        r.get("schemes", names);
        c.schemes.clear();
        for (const std::string& s : names) c.schemes.push_back(scheme_from_string(s));
    }
    if (r.has("scheme_params")) {
        Reader s = r.child("scheme_params");
        s.get("dropout", c.scheme_params.dropout);
        s.get("weight_decay", c.scheme_params.weight_decay);
        s.get("input_noise_sigma", c.scheme_params.input_noise_sigma);
        if (s.has("pgd")) c.scheme_params.pgd = read_perturbation(s.child("pgd"));
        s.finish();
    }
    if (r.has("evaluations")) {
        const json& arr = r.raw("evaluations");
        if (!arr.is_array()) throw std::invalid_argument("config evaluations: expected an array");
        c.evaluations.clear();
        for (std::size_t i = 0; i < arr.size(); ++i) {
            Reader e(arr[i], "evaluations[" + std::to_string(i) + "].");
            EvalSpec spec;
            e.get_as("kind", spec.kind, perturbation_from_string);
            e.get("severities", spec.severities);
            e.get("replicates", spec.replicates);
            e.get_as("norm", spec.norm, norm_from_string);
            e.get("iterations", spec.iterations);
            e.finish();
            c.evaluations.push_back(spec);
        }
    }
    if (r.has("theory")) {
        Reader t = r.child("theory");
        TheorySpec& th = c.theory;
        t.get("taylor", th.taylor);
        t.get("eps_grid", th.eps_grid);
        t.get("twin_sharpness", th.twin_sharpness);
        t.get("subset", th.subset);
        t.get("eligible", th.eligible);
        t.get("quadrature_order", th.quadrature_order);
        t.get("mc_groups", th.mc_groups);
        t.get("margin", th.margin);
        t.get("margin_layer", th.margin_layer);
        t.get("hull_samples", th.hull_samples);
        t.get("adv_bound", th.adv_bound);
        t.finish();
    }
    if (r.has("decision_grid")) {
        Reader g = r.child("decision_grid");
        g.get("enabled", c.decision_grid);
        g.get("resolution", c.grid_resolution);
        std::vector<double> box;
        g.get("box", box);
        if (g.has("box")) {
            if (box.size() != 4) throw std::invalid_argument("config decision_grid.box: expected 4 numbers");
            c.grid_box = {box[0], box[1], box[2], box[3]};
        }
        g.finish();
    }
    r.get("seeds", c.seeds);
    r.get("output_dir", c.output_dir);
    r.finish();
    return c;
}

// ---- Files and digests ---------------------------------------------------------

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> listed_files(const fs::path& dir) {
    std::vector<std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string rel = fs::relative(e.path(), dir).generic_string();
        if (rel == "manifest.json") continue;
        out.push_back(rel);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// A run directory may only replace an earlier run (identified by its manifest).
void prepare_directory(const fs::path& dir) {
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a directory");
        if (!fs::is_empty(dir)) {
            if (!fs::exists(dir / "manifest.json"))
                throw std::runtime_error(dir.string() +
                                         " is not empty and holds no run manifest; refusing to overwrite");
            fs::remove_all(dir);
        }
    }
    fs::create_directories(dir);
}

json stage_json(const StageRecord& s) {
    json j{{"stage", s.stage}, {"scheme", s.scheme}, {"seed", s.seed}, {"status", s.status}};
    if (!s.error.empty()) j["error"] = s.error;
    return j;
}

void write_manifest(const fs::path& dir, const std::string& config_text, const RunResult& r,
                    const std::string& kind) {
    json files = json::array();
    for (const std::string& rel : listed_files(dir))
        files.push_back({{"path", rel},
                         {"sha256", sha256_file((dir / rel).string())},
                         {"bytes", fs::file_size(dir / rel)}});
    json stages = json::array();
    for (const StageRecord& s : r.stages) stages.push_back(stage_json(s));
    const json m{{"schema", "nfm-run-manifest"},
                 {"version", 1},
                 {"kind", kind},
                 {"config_sha256", sha256_hex(config_text)},
                 {"ok", r.ok},
                 {"stages", stages},
                 {"files", files}};
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

// ---- Metrics -----------------------------------------------------------------

struct MetricRow {
    std::string scheme;
    std::uint64_t seed;
    std::string metric;
    double value;
};

struct Aggregate {
    double mean = 0, std = 0;
    std::size_t n = 0;
};

Aggregate aggregate(const std::vector<double>& v) {
    Aggregate a;
    a.n = v.size();
    if (v.empty()) return a;
    for (double x : v) a.mean += x;
    a.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double s = 0.0;
        for (double x : v) s += (x - a.mean) * (x - a.mean);
        a.std = std::sqrt(s / static_cast<double>(v.size() - 1));
    }
    return a;
}

// (scheme, metric) -> values, in first-seen order.
std::vector<std::pair<std::pair<std::string, std::string>, std::vector<double>>>
group_metrics(const std::vector<MetricRow>& rows) {
    std::vector<std::pair<std::pair<std::string, std::string>, std::vector<double>>> out;
    for (const MetricRow& r : rows) {
        auto key = std::make_pair(r.scheme, r.metric);
        auto it = std::find_if(out.begin(), out.end(), [&](const auto& e) { return e.first == key; });
        if (it == out.end()) out.push_back({key, {r.value}});
        else it->second.push_back(r.value);
    }
    return out;
}

std::string aggregate_csv(const std::vector<MetricRow>& rows) {
    std::ostringstream out;
    out << "scheme,metric,mean,std,n\n";
    for (const auto& [key, values] : group_metrics(rows)) {
        const Aggregate a = aggregate(values);
        out << key.first << ',' << key.second << ',' << num(a.mean) << ',' << num(a.std) << ','
            << a.n << '\n';
    }
    return out.str();
}

std::vector<MetricRow> parse_results_csv(const std::string& text) {
    std::vector<MetricRow> rows;
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (cells.size() != 4) throw std::runtime_error("results.csv: malformed row '" + line + "'");
        rows.push_back({cells[0], std::stoull(cells[1]), cells[2], std::stod(cells[3])});
    }
    return rows;
}

Dataset with_head_labels(const Dataset& d, const LayerSplitNetwork& net) {
    Dataset out = d;
    out.labels = head_labels(net, d);
    return out;
}

std::string severity_tag(double s) { return num(s); }

// ---- One scheme and seed -----------------------------------------------------

class StageRunner {
public:
    StageRunner(RunResult& result, std::string scheme, std::uint64_t seed)
        : result_(result), scheme_(std::move(scheme)), seed_(seed) {}

    // Runs `fn` unless an earlier required stage failed; returns success.
    bool operator()(const std::string& stage, const std::function<void()>& fn, bool required = false) {
        StageRecord rec{stage, scheme_, seed_, "ok", {}};
        if (blocked_) {
            rec.status = "skipped";
            rec.error = "an earlier stage failed";
        } else {
            try {
                fn();
            } catch (const std::exception& e) {
                rec.status = "failed";
                rec.error = e.what();
                result_.ok = false;
                if (required) blocked_ = true;
            }
        }
        result_.stages.push_back(rec);
        return rec.status == "ok";
    }

private:
    RunResult& result_;
    std::string scheme_;
    std::uint64_t seed_;
    bool blocked_ = false;
};

void run_one(const ExperimentConfig& cfg, Scheme scheme, std::uint64_t seed, const Dataset& train_raw,
             const Dataset& test_raw, const fs::path& dir, RunResult& result,
             std::vector<MetricRow>& metrics) {
    const std::string name = to_string(scheme);
    auto metric = [&](const std::string& m, double v) { metrics.push_back({name, seed, m, v}); };
    StageRunner stage(result, name, seed);

    const TrainConfig tc = scheme_train_config(cfg, scheme, seed);
    LayerSplitNetwork net;
    Dataset train_set, test_set;
    stage(
        "train",
        [&] {
            const LayerSplitNetwork init = initial_network(cfg, train_raw.dim(), train_raw.classes(), seed);
            train_set = with_head_labels(train_raw, init);
            test_set = with_head_labels(test_raw, init);
            TrainOptions opt;
            opt.test = &test_set;
            const TrainResult tr = train(init, train_set, tc, opt);
            net = tr.net;
            write_text(dir / "metrics.jsonl", metrics_jsonl(tr.history));
            write_text(dir / "model.json", checkpoint_json(net) + "\n");
            metric("train_accuracy", evaluate(net, train_set, tc.loss).accuracy);
            metric("test_accuracy", evaluate(net, test_set, tc.loss).accuracy);
            metric("test_loss", evaluate(net, test_set, tc.loss).loss);
        },
        true);

    if (!cfg.evaluations.empty())
        stage("robustness", [&] {
            std::vector<RobustnessCurve> curves;
            for (const EvalSpec& e : cfg.evaluations) {
                PerturbationSpec base;
                base.kind = e.kind;
                base.norm = e.norm;
                base.iterations = e.iterations;
                if (e.kind == PerturbationKind::salt_pepper) base.bounds = data_bounds(train_set.inputs);
                curves.push_back(robustness_curve(net, test_set, base, e.severities, e.replicates, seed));
                const RobustnessCurve& c = curves.back();
                for (std::size_t i = 0; i < c.severity.size(); ++i)
                    metric(to_string(e.kind) + "@" + severity_tag(c.severity[i]), c.accuracy[i]);
            }
            write_text(dir / "robustness.csv", curve_csv(curves));
        });

    if (cfg.decision_grid && train_raw.dim() == 2)
        stage("decision_grid", [&] {
            write_text(dir / "grid.csv", grid_csv(decision_grid(net, cfg.grid_box, cfg.grid_resolution)));
        });

    if (cfg.theory.taylor)
        stage("taylor", [&] {
            const TheorySpec& th = cfg.theory;
            const std::size_t m = std::min(th.subset, train_set.size());
            std::vector<std::size_t> idx(m);
            for (std::size_t i = 0; i < m; ++i) idx[i] = i;
            Dataset sub;
            sub.inputs = gather_rows(train_set.inputs, idx);
            sub.labels = gather_rows(train_set.labels, idx);
            NFMConfig nc = cfg.train.nfm;
            nc.eligible = th.eligible;
            McSpec mc;
            mc.groups = th.mc_groups;
            mc.quadrature_order = th.quadrature_order;
            mc.seed = seed;
            const TaylorReport rep = taylor_residual(net.smooth_twin(th.twin_sharpness), sub, nc,
                                                     th.eps_grid, mc, QuadSpec{th.quadrature_order});
            write_text(dir / "taylor.json", taylor_json(rep) + "\n");
            metric("taylor_slope", rep.slope);
            metric("q_epsilon", rep.regularizers.q_epsilon());
        });

    if (cfg.theory.margin)
        stage("margin", [&] {
            const std::size_t k = cfg.theory.margin_layer;
            const HullSuprema sup = estimate_hull_suprema(
                net, k, train_set.inputs, HullSpec{cfg.theory.hull_samples, 50, seed});
            const Tensor logits = net.forward(test_set.inputs);
            const std::vector<std::size_t> cls = label_classes(test_set.labels);
            std::ostringstream csv;
            csv << "index,score,bound,empirical,capped\n";
            std::size_t total = 0, held = 0, capped = 0;
            for (std::size_t i = 0; i < test_set.size(); ++i) {
                const double s = score(logits.row_span(i), cls[i]);
                if (!(s > 0.0)) continue;
                const std::vector<std::size_t> one{i};
                const Tensor x = gather_rows(test_set.inputs, one);
                const double bound = margin_bound(net, x, cls[i], sup);
                MarginSearch search;
                search.seed = seed * 1000003 + i;
                const double emp = empirical_margin(net, x, cls[i], search);
                // A search that found nothing inside radius_max says nothing above it.
                const bool cap = emp >= search.radius_max;
                if (cap) {
                    ++capped;
                } else {
                    ++total;
                    held += bound <= emp;
                }
                csv << i << ',' << num(s) << ',' << num(bound) << ',' << num(emp) << ',' << cap << '\n';
            }
            write_text(dir / "margins.csv", csv.str());
            metric("margin_chain_rate", total ? static_cast<double>(held) / static_cast<double>(total) : 1.0);
            metric("margin_capped", static_cast<double>(capped));
        });

    if (cfg.theory.adv_bound)
        stage("adv_bound", [&] {
            AdvBoundSpec spec;
            spec.seed = seed;
            const AdvBoundReport rep = adv_bound_quantities(net, train_set, cfg.train.nfm, spec);
            write_text(dir / "adv_bound.json", adv_bound_json(rep) + "\n");
            metric("L_reg", rep.L_reg);
            metric("eps_mix", rep.eps_mix);
        });
}

std::string results_csv(const std::vector<MetricRow>& rows) {
    std::ostringstream out;
    out << "scheme,seed,metric,value\n";
    for (const MetricRow& r : rows)
        out << r.scheme << ',' << r.seed << ',' << r.metric << ',' << num(r.value) << '\n';
    return out.str();
}

json* find_path(json& root, const std::string& path) {
    json* cur = &root;
    std::istringstream in(path);
    std::string part;
    while (std::getline(in, part, '.')) {
        if (!cur->is_object() || !cur->contains(part)) return nullptr;
        cur = &(*cur)[part];
    }
    return cur;
}

json parse_value(const std::string& text) {
    try {
        return json::parse(text);
    } catch (const json::exception&) {
        return json(text);
    }
}

std::string safe_name(std::string s) {
    for (char& ch : s)
        if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '.' || ch == '-' || ch == '_')) ch = '_';
    return s;
}

}  // namespace

// ---- Public API ----------------------------------------------------------------

std::string to_string(Scheme s) { return kSchemeNames[static_cast<int>(s)]; }

Scheme scheme_from_string(const std::string& name) {
    for (Scheme s : all_schemes())
        if (to_string(s) == name) return s;
    throw std::invalid_argument("unknown scheme '" + name + "'");
}

const std::vector<Scheme>& all_schemes() {
    static const std::vector<Scheme> v{Scheme::baseline,       Scheme::noise,     Scheme::mixup,
                                       Scheme::noisy_mixup,    Scheme::manifold_mixup, Scheme::nfm,
                                       Scheme::pgd_train,      Scheme::dropout,   Scheme::weight_decay};
    return v;
}

const std::vector<Scheme>& toy_figure_schemes() {
    static const std::vector<Scheme> v{Scheme::baseline,    Scheme::dropout,        Scheme::weight_decay,
                                       Scheme::noise,       Scheme::mixup,          Scheme::manifold_mixup,
                                       Scheme::noisy_mixup, Scheme::nfm};
    return v;
}

void ExperimentConfig::validate() const {
    if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..")
        throw std::invalid_argument("config: name must be a plain directory name");
    if (data.source != "circles" && data.source != "table")
        throw std::invalid_argument("config: data.source must be 'circles' or 'table'");
    if (data.source == "table" && (data.train_path.empty() || data.test_path.empty()))
        throw std::invalid_argument("config: table data needs train_path and test_path");
    if (model.hidden.empty()) throw std::invalid_argument("config: model needs at least one hidden layer");
    for (std::size_t w : model.hidden)
        if (w == 0) throw std::invalid_argument("config: hidden widths must be positive");
    train.validate();
    train.nfm.validate();
    if (schemes.empty()) throw std::invalid_argument("config: no schemes");
    if (!(scheme_params.dropout >= 0.0 && scheme_params.dropout < 1.0))
        throw std::invalid_argument("config: scheme_params.dropout must be in [0, 1)");
    if (!(scheme_params.weight_decay >= 0.0))
        throw std::invalid_argument("config: scheme_params.weight_decay must be nonnegative");
    if (!(scheme_params.input_noise_sigma >= 0.0))
        throw std::invalid_argument("config: scheme_params.input_noise_sigma must be nonnegative");
    if (scheme_params.pgd.kind != PerturbationKind::pgd)
        throw std::invalid_argument("config: scheme_params.pgd must be a pgd attack");
    scheme_params.pgd.validate();
    for (const EvalSpec& e : evaluations) {
        if (e.severities.empty()) throw std::invalid_argument("config: evaluation with no severities");
        for (std::size_t i = 0; i < e.severities.size(); ++i) {
            PerturbationSpec p;
            p.kind = e.kind;
            p.severity = e.severities[i];
            p.iterations = e.iterations;
            p.validate();
            if (i > 0 && !(e.severities[i] > e.severities[i - 1]))
                throw std::invalid_argument("config: severities must be strictly increasing");
        }
        if (e.replicates == 0) throw std::invalid_argument("config: evaluation needs replicates >= 1");
    }
    if (theory.taylor && (theory.subset < 2 || theory.eligible.empty()))
        throw std::invalid_argument("config: theory.taylor needs subset >= 2 and eligible layers");
    if (grid_resolution < 2) throw std::invalid_argument("config: grid resolution must be at least 2");
    if (seeds.empty()) throw std::invalid_argument("config: no seeds");
}

ExperimentConfig toy_figure_config() {
    ExperimentConfig c;
    c.name = "toy_figure";
    c.schemes = toy_figure_schemes();
    c.train.eval_every = 10;
    c.train.nfm.eligible = {1};
    c.evaluations = {EvalSpec{PerturbationKind::white_noise, {0.1, 0.2, 0.3}, 10},
                     EvalSpec{PerturbationKind::salt_pepper, {0.02, 0.04, 0.1}, 10}};
    c.seeds = {0, 1, 2, 3, 4};
    return c;
}

std::string serialize_config(const ExperimentConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: ") + e.what());
    }
    ExperimentConfig c = read_config(j);
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_text(path)); }

TrainConfig scheme_train_config(const ExperimentConfig& cfg, Scheme scheme, std::uint64_t seed) {
    TrainConfig t = cfg.train;
    t.seed = seed;
    t.augmentation = Augmentation::none;
    t.dropout = 0.0;
    t.weight_decay = 0.0;
    t.adversarial.reset();
    t.input_noise_sigma = cfg.scheme_params.input_noise_sigma;
    switch (scheme) {
        case Scheme::baseline: break;
        case Scheme::noise: t.augmentation = Augmentation::input_noise; break;
        case Scheme::mixup:
            t.augmentation = Augmentation::mixup;
            t.nfm.eligible = {0};
            break;
        case Scheme::noisy_mixup:
            t.augmentation = Augmentation::nfm;
            t.nfm.eligible = {0};
            break;
        case Scheme::manifold_mixup: t.augmentation = Augmentation::mixup; break;
        case Scheme::nfm: t.augmentation = Augmentation::nfm; break;
        case Scheme::pgd_train: t.adversarial = cfg.scheme_params.pgd; break;
        case Scheme::dropout: t.dropout = cfg.scheme_params.dropout; break;
        case Scheme::weight_decay: t.weight_decay = cfg.scheme_params.weight_decay; break;
    }
    return t;
}

std::pair<Dataset, Dataset> load_data(const DataSpec& spec, std::uint64_t seed) {
    if (spec.source == "circles") {
        RngStream rng(seed, streams::data);
        return make_circles(spec.circles, rng);
    }
    if (spec.source == "table") {
        Dataset train = load_table(spec.train_path, spec.schema);
        Dataset test = load_table(spec.test_path, spec.schema);
        train.split = "train";
        test.split = "test";
        return {std::move(train), std::move(test)};
    }
    throw std::invalid_argument("unknown data source '" + spec.source + "'");
}

LayerSplitNetwork initial_network(const ExperimentConfig& cfg, std::size_t input_dim,
                                  std::size_t classes, std::uint64_t seed) {
    NetSpec spec;
    spec.widths.push_back(input_dim);
    for (std::size_t w : cfg.model.hidden) spec.widths.push_back(w);
    spec.widths.push_back(cfg.train.loss == LossKind::bce_logit ? 1 : classes);
    spec.hidden = cfg.model.activation;
    RngStream rng(seed, streams::init);
    return init_params(spec, rng);
}

std::string output_root(const ExperimentConfig& cfg) {
    const char* env = std::getenv("NFM_OUTPUT_ROOT");
    return env && *env ? std::string(env) : cfg.output_dir;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
    return run_experiment(cfg, (fs::path(output_root(cfg)) / cfg.name).string());
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& directory) {
    cfg.validate();
    const fs::path dir(directory);
    prepare_directory(dir);
    const std::string config_text = serialize_config(cfg);
    write_text(dir / "config.json", config_text);

    RunResult result;
    result.directory = dir.string();
    std::vector<MetricRow> metrics;
    for (std::uint64_t seed : cfg.seeds) {
        std::pair<Dataset, Dataset> data;
        StageRunner data_stage(result, "", seed);
        const bool have_data = data_stage("data", [&] {
            data = load_data(cfg.data, seed);
            const fs::path ddir = dir / "data" / ("seed_" + std::to_string(seed));
            fs::create_directories(ddir);
            save_table(data.first, (ddir / "train.csv").string());
            save_table(data.second, (ddir / "test.csv").string());
        });
        for (Scheme s : cfg.schemes) {
            const fs::path rdir = dir / to_string(s) / ("seed_" + std::to_string(seed));
            if (!have_data) {
                result.stages.push_back({"train", to_string(s), seed, "skipped", "data stage failed"});
                continue;
            }
            fs::create_directories(rdir);
            run_one(cfg, s, seed, data.first, data.second, rdir, result, metrics);
        }
    }
    write_text(dir / "results.csv", results_csv(metrics));
    write_text(dir / "aggregate.csv", aggregate_csv(metrics));
    write_manifest(dir, config_text, result, "run");
    return result;
}

RunResult sweep(const ExperimentConfig& cfg, const std::string& axis,
                const std::vector<std::string>& values) {
    if (values.empty()) throw std::invalid_argument("sweep: empty value list");
    cfg.validate();
    const json base = config_json(cfg);
    {
        json probe = base;
        if (axis != "alpha" && !find_path(probe, axis))
            throw std::invalid_argument("sweep: '" + axis + "' does not name a config field");
    }
    std::vector<ExperimentConfig> points;
    for (const std::string& v : values) {
        json j = base;
        const json value = parse_value(v);
        if (axis == "alpha") {
            j["nfm"]["alpha"] = value;
            j["nfm"]["beta"] = value;
        } else {
            *find_path(j, axis) = value;
        }
        ExperimentConfig c = read_config(j);
        c.validate();
        points.push_back(std::move(c));
    }

    const fs::path dir = fs::path(output_root(cfg)) / (cfg.name + "_sweep_" + safe_name(axis));
    prepare_directory(dir);
    const std::string config_text = serialize_config(cfg);
    write_text(dir / "config.json", config_text);

    RunResult result;
    result.directory = dir.string();
    std::ostringstream summary;
    summary << "axis,value,scheme,metric,mean,std,n\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
        const std::string sub = safe_name(axis + "=" + values[i]);
        const RunResult r = run_experiment(points[i], (dir / sub).string());
        result.ok = result.ok && r.ok;
        for (StageRecord s : r.stages) {
            s.stage = sub + "/" + s.stage;
            result.stages.push_back(s);
        }
        const std::vector<MetricRow> rows = parse_results_csv(read_text(dir / sub / "results.csv"));
        for (const auto& [key, vals] : group_metrics(rows)) {
            const Aggregate a = aggregate(vals);
            summary << axis << ',' << values[i] << ',' << key.first << ',' << key.second << ','
                    << num(a.mean) << ',' << num(a.std) << ',' << a.n << '\n';
        }
    }
    write_text(dir / "summary.csv", summary.str());
    write_manifest(dir, config_text, result, "sweep");
    return result;
}

ReportSummary report(const std::string& directory) {
    const fs::path dir(directory);
    ReportSummary out;
    const json m = json::parse(read_text(dir / "manifest.json"));
    std::set<std::string> listed;
    for (const json& f : m.at("files")) {
        const std::string rel = f.at("path").get<std::string>();
        listed.insert(rel);
        if (!fs::exists(dir / rel)) {
            out.problems.push_back("missing file " + rel);
        } else if (sha256_file((dir / rel).string()) != f.at("sha256").get<std::string>()) {
            out.problems.push_back("digest mismatch for " + rel);
        }
    }
    for (const std::string& rel : listed_files(dir))
        if (!listed.count(rel)) out.problems.push_back("file not in manifest: " + rel);
    if (fs::exists(dir / "config.json") &&
        sha256_file((dir / "config.json").string()) != m.at("config_sha256").get<std::string>())
        out.problems.push_back("config digest mismatch");
    for (const json& s : m.at("stages"))
        if (s.at("status").get<std::string>() != "ok")
            out.problems.push_back("stage " + s.at("stage").get<std::string>() + " (" +
                                   s.at("scheme").get<std::string>() + ", seed " +
                                   std::to_string(s.at("seed").get<std::uint64_t>()) + ") " +
                                   s.at("status").get<std::string>() +
                                   (s.contains("error") ? ": " + s.at("error").get<std::string>() : ""));
    if (fs::exists(dir / "aggregate.csv")) out.table = read_text(dir / "aggregate.csv");
    else if (fs::exists(dir / "summary.csv")) out.table = read_text(dir / "summary.csv");
    out.ok = out.problems.empty();
    return out;
}

}  // namespace nfm
