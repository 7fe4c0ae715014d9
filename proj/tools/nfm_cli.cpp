#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "nfm/data.hpp"
#include "nfm/experiment.hpp"
#include "nfm/network.hpp"
#include "nfm/robustness.hpp"
#include "nfm/theory.hpp"

namespace fs = std::filesystem;
using namespace nfm;

namespace {

void emit(const std::string& text, const std::string& out) {
    if (out.empty() || out == "-") {
        std::cout << text;
        return;
    }
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    f << text;
}

Dataset load_for_model(const std::string& path, const LayerSplitNetwork& net) {
    const std::size_t classes = net.output_dim() == 1 ? 2 : net.output_dim();
    Dataset d = load_table(path, {net.input_dim(), classes, "label"});
    d.labels = head_labels(net, d);
    return d;
}

double parse_p(const std::string& s) {
    if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
    const double p = std::stod(s);
    if (p != 2.0) throw std::invalid_argument("--p must be 2 or inf");
    return p;
}

ExperimentConfig config_from(const std::string& path, const std::string& suite) {
    if (!path.empty()) return load_config(path);
    if (suite == "toy-figure") return toy_figure_config();
    if (suite.empty() || suite == "default") return ExperimentConfig{};
    throw std::invalid_argument("unknown suite '" + suite + "'");
}

int print_run(const RunResult& r) {
    std::size_t failed = 0;
    for (const StageRecord& s : r.stages)
        if (s.status != "ok") {
            ++failed;
            std::cerr << "stage " << s.stage << " [" << s.scheme << ", seed " << s.seed << "] "
                      << s.status << (s.error.empty() ? "" : ": " + s.error) << '\n';
        }
    std::cout << r.directory << '\n';
    if (failed) std::cerr << failed << " stage(s) did not complete\n";
    return r.ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Noisy feature mixup experiments"};
    app.require_subcommand(1);

    // generate-data
    auto* gen = app.add_subcommand("generate-data", "Write the two-circles toy split as CSV tables");
    CirclesSpec circles;
    std::uint64_t gen_seed = 0;
    std::string gen_out = ".";
    gen->add_option("--n", circles.n, "Number of points")->capture_default_str();
    gen->add_option("--scale-factor", circles.scale_factor, "Inner radius")->capture_default_str();
    gen->add_option("--noise-std", circles.noise_std, "Gaussian noise level")->capture_default_str();
    gen->add_option("--train-fraction", circles.train_fraction)->capture_default_str();
    gen->add_flag("--stratified", circles.stratified, "Split each class separately");
    gen->add_option("--seed", gen_seed)->capture_default_str();
    gen->add_option("--out", gen_out, "Output directory")->capture_default_str();

    // train
    auto* tr = app.add_subcommand("train", "Train one scheme for one seed");
    std::string tr_config, tr_suite, tr_scheme = "nfm", tr_out;
    std::uint64_t tr_seed = 0;
    tr->add_option("--config", tr_config, "Experiment config (JSON)");
    tr->add_option("--suite", tr_suite, "Built-in config: default | toy-figure");
    tr->add_option("--scheme", tr_scheme)->capture_default_str();
    tr->add_option("--seed", tr_seed)->capture_default_str();
    tr->add_option("--out", tr_out, "Run directory")->required();

    // eval-robustness
    auto* ev = app.add_subcommand("eval-robustness", "Accuracy curve of a model under perturbations");
    std::string ev_model, ev_data, ev_kind = "white_noise", ev_norm = "l2", ev_out, ev_bounds;
    std::vector<double> ev_sev{0.1, 0.2, 0.3};
    std::size_t ev_reps = 10, ev_iters = 7;
    std::uint64_t ev_seed = 0;
    ev->add_option("--model", ev_model, "Model checkpoint (model.json)")->required();
    ev->add_option("--data", ev_data, "Test table (CSV)")->required();
    ev->add_option("--kind", ev_kind, "white_noise | salt_pepper | pgd")->capture_default_str();
    ev->add_option("--severities", ev_sev)->delimiter(',')->capture_default_str();
    ev->add_option("--replicates", ev_reps)->capture_default_str();
    ev->add_option("--norm", ev_norm, "l2 | linf (pgd)")->capture_default_str();
    ev->add_option("--iterations", ev_iters, "PGD iterations")->capture_default_str();
    ev->add_option("--bounds-from", ev_bounds, "Table whose input range sets salt-and-pepper levels");
    ev->add_option("--seed", ev_seed)->capture_default_str();
    ev->add_option("--out", ev_out, "CSV output (stdout when omitted)");

    // verify-theory
    auto* vt = app.add_subcommand("verify-theory", "Expansion check, regularizers or adversarial-bound terms");
    std::string vt_model, vt_data, vt_mode = "taylor", vt_out;
    std::size_t vt_subset = 16, vt_order = 16, vt_groups = 8;
    double vt_sharp = 10.0;
    std::vector<double> vt_eps{0.2, 0.1, 0.05, 0.025};
    std::vector<std::size_t> vt_eligible{0, 1};
    NFMConfig vt_nfm;
    std::uint64_t vt_seed = 0;
    vt->add_option("--model", vt_model, "Model checkpoint (model.json)")->required();
    vt->add_option("--data", vt_data, "Training table (CSV)")->required();
    vt->add_option("--mode", vt_mode, "taylor | regularizers | adv-bound")->capture_default_str();
    vt->add_option("--subset", vt_subset, "Rows used (first n)")->capture_default_str();
    vt->add_option("--sharpness", vt_sharp, "Softplus sharpness of the smooth twin")->capture_default_str();
    vt->add_option("--eps", vt_eps)->delimiter(',')->capture_default_str();
    vt->add_option("--eligible", vt_eligible)->delimiter(',')->capture_default_str();
    vt->add_option("--alpha", vt_nfm.law.alpha)->capture_default_str();
    vt->add_option("--beta", vt_nfm.law.beta)->capture_default_str();
    vt->add_option("--sigma-add", vt_nfm.sigma_add)->capture_default_str();
    vt->add_option("--sigma-mult", vt_nfm.sigma_mult)->capture_default_str();
    vt->add_option("--order", vt_order, "Quadrature nodes")->capture_default_str();
    vt->add_option("--groups", vt_groups, "Monte-Carlo replicate groups")->capture_default_str();
    vt->add_option("--seed", vt_seed)->capture_default_str();
    vt->add_option("--out", vt_out, "JSON output (stdout when omitted)");

    // certify
    auto* ce = app.add_subcommand("certify", "Probabilistic robustness certificate of the noisy classifier");
    std::string ce_model, ce_data, ce_p = "2", ce_out;
    std::size_t ce_index = 0, ce_layer = 1, ce_hull = 64, ce_draws = 2000;
    double ce_alpha = 0.1;
    std::vector<double> ce_tau;
    NFMConfig ce_nfm;
    std::uint64_t ce_seed = 0;
    ce->add_option("--model", ce_model, "Model checkpoint (model.json)")->required();
    ce->add_option("--data", ce_data, "Table; its inputs span the hull")->required();
    ce->add_option("--index", ce_index, "Row to certify")->capture_default_str();
    ce->add_option("--layer", ce_layer, "Noise layer k")->capture_default_str();
    ce->add_option("--p", ce_p, "2 | inf")->capture_default_str();
    ce->add_option("--alpha", ce_alpha, "Attack radius")->capture_default_str();
    ce->add_option("--tau", ce_tau, "Perturbation (defaults to alpha along the first axis)")->delimiter(',');
    ce->add_option("--sigma-add", ce_nfm.sigma_add)->capture_default_str();
    ce->add_option("--sigma-mult", ce_nfm.sigma_mult)->capture_default_str();
    ce->add_option("--hull-samples", ce_hull)->capture_default_str();
    ce->add_option("--noise-draws", ce_draws)->capture_default_str();
    ce->add_option("--seed", ce_seed)->capture_default_str();
    ce->add_option("--out", ce_out, "JSON output (stdout when omitted)");

    // sweep
    auto* sw = app.add_subcommand("sweep", "Run a config once per value of one field");
    std::string sw_config, sw_suite, sw_axis;
    std::vector<std::string> sw_values;
    sw->add_option("--config", sw_config, "Experiment config (JSON)");
    sw->add_option("--suite", sw_suite, "Built-in config: default | toy-figure");
    sw->add_option("--axis", sw_axis, "Dotted config path, or 'alpha' for both Beta parameters")->required();
    sw->add_option("--values", sw_values, "Comma-separated values")->delimiter(',')->required();

    // report
    auto* rp = app.add_subcommand("report", "Check a run directory and print its summary");
    std::string rp_dir;
    rp->add_option("--run", rp_dir, "Run directory")->required();

    // run
    auto* rn = app.add_subcommand("run", "Run every scheme and seed of a config");
    std::string rn_config, rn_suite, rn_dir;
    rn->add_option("--config", rn_config, "Experiment config (JSON)");
    rn->add_option("--suite", rn_suite, "Built-in config: default | toy-figure");
    rn->add_option("--out", rn_dir, "Run directory (default <output root>/<name>)");

    // print-config
    auto* pc = app.add_subcommand("print-config", "Print a config with every default filled in");
    std::string pc_config, pc_suite;
    pc->add_option("--config", pc_config, "Experiment config (JSON)");
    pc->add_option("--suite", pc_suite, "Built-in config: default | toy-figure");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            RngStream rng(gen_seed, streams::data);
            auto [train, test] = make_circles(circles, rng);
            fs::create_directories(gen_out);
            save_table(train, (fs::path(gen_out) / "train.csv").string());
            save_table(test, (fs::path(gen_out) / "test.csv").string());
            std::cout << (fs::path(gen_out) / "train.csv").string() << '\n'
                      << (fs::path(gen_out) / "test.csv").string() << '\n';
            return 0;
        }
        if (*tr) {
            ExperimentConfig cfg = config_from(tr_config, tr_suite);
            cfg.schemes = {scheme_from_string(tr_scheme)};
            cfg.seeds = {tr_seed};
            cfg.evaluations.clear();
            cfg.theory = {};
            return print_run(run_experiment(cfg, tr_out));
        }
        if (*ev) {
            const LayerSplitNetwork net = load_checkpoint(ev_model);
            const Dataset test = load_for_model(ev_data, net);
            PerturbationSpec base;
            base.kind = perturbation_from_string(ev_kind);
            base.norm = norm_from_string(ev_norm);
            base.iterations = ev_iters;
            if (base.kind == PerturbationKind::salt_pepper)
                base.bounds = data_bounds(ev_bounds.empty() ? test.inputs : load_for_model(ev_bounds, net).inputs);
            emit(curve_csv({robustness_curve(net, test, base, ev_sev, ev_reps, ev_seed)}), ev_out);
            return 0;
        }
        if (*vt) {
            const LayerSplitNetwork net = load_checkpoint(vt_model);
            const Dataset full = load_for_model(vt_data, net);
            const std::size_t m = std::min(vt_subset, full.size());
            std::vector<std::size_t> idx(m);
            for (std::size_t i = 0; i < m; ++i) idx[i] = i;
            Dataset sub;
            sub.inputs = gather_rows(full.inputs, idx);
            sub.labels = gather_rows(full.labels, idx);
            vt_nfm.eligible = vt_eligible;
            if (vt_mode == "taylor") {
                McSpec mc;
                mc.groups = vt_groups;
                mc.quadrature_order = vt_order;
                mc.seed = vt_seed;
                const TaylorReport rep =
                    taylor_residual(net.smooth_twin(vt_sharp), sub, vt_nfm, vt_eps, mc, QuadSpec{vt_order});
                emit(taylor_json(rep) + "\n", vt_out);
                std::cerr << "slope " << rep.slope << (rep.noise_limited ? " (noise-limited)" : "") << '\n';
            } else if (vt_mode == "regularizers") {
                emit(regularizer_json(compute_regularizers(net.smooth_twin(vt_sharp), sub, vt_nfm,
                                                           QuadSpec{vt_order})) + "\n",
                     vt_out);
            } else if (vt_mode == "adv-bound") {
                AdvBoundSpec spec;
                spec.seed = vt_seed;
                spec.quadrature_order = vt_order;
                emit(adv_bound_json(adv_bound_quantities(net, sub, vt_nfm, spec)) + "\n", vt_out);
            } else {
                throw std::invalid_argument("unknown mode '" + vt_mode + "'");
            }
            return 0;
        }
        if (*ce) {
            const LayerSplitNetwork net = load_checkpoint(ce_model);
            const Dataset data = load_for_model(ce_data, net);
            if (ce_index >= data.size()) throw std::out_of_range("--index beyond the table");
            const std::vector<std::size_t> row{ce_index};
            const Tensor x = gather_rows(data.inputs, row);
            Tensor tau = Tensor::matrix(1, net.input_dim());
            if (ce_tau.empty()) {
                tau[0] = ce_alpha;
            } else {
                if (ce_tau.size() != net.input_dim()) throw std::invalid_argument("--tau has the wrong length");
                for (std::size_t j = 0; j < ce_tau.size(); ++j) tau[j] = ce_tau[j];
            }
            CertifySpec spec{ce_hull, ce_draws, ce_seed};
            const TVCertificate cert =
                robustness_radius(net, ce_nfm, ce_layer, x, tau, parse_p(ce_p), ce_alpha, data.inputs, spec);
            emit(certificate_json(cert) + "\n", ce_out);
            return 0;
        }
        if (*sw) {
            const ExperimentConfig cfg = config_from(sw_config, sw_suite);
            const RunResult r = sweep(cfg, sw_axis, sw_values);
            return print_run(r);
        }
        if (*rp) {
            const ReportSummary s = report(rp_dir);
            std::cout << s.table;
            for (const std::string& p : s.problems) std::cerr << p << '\n';
            return s.ok ? 0 : 1;
        }
        if (*rn) {
            const ExperimentConfig cfg = config_from(rn_config, rn_suite);
            return print_run(rn_dir.empty() ? run_experiment(cfg) : run_experiment(cfg, rn_dir));
        }
        if (*pc) {
            std::cout << serialize_config(config_from(pc_config, pc_suite));
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
