// holotea: 3D-aware flow-matching imputation of spot expression on serial
// sections. Subcommands cover the whole pipeline: gen -> pretrain-prior ->
// train -> infer -> eval, plus gradcheck / bench-gsa / split diagnostics.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "holotea/checkpoint.hpp"
#include "holotea/config.hpp"
#include "holotea/flow.hpp"
#include "holotea/metrics.hpp"
#include "holotea/synth.hpp"

namespace {

using namespace holotea;

struct Common {
    std::string config_file;
    std::vector<std::string> sets;
    std::uint64_t seed = 0;
    std::string manifest = "manifest.txt";
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_file, "run config file (key value lines)");
    cmd->add_option("--set", c.sets, "override, key=value (repeatable)");
    cmd->add_option("--seed", c.seed, "rng seed")->required();
    cmd->add_option("--manifest", c.manifest, "manifest file to append to");
}

RunConfig resolve_config(const Common& c) {
    RunConfig rc = c.config_file.empty() ? RunConfig::defaults() : RunConfig::from_file(c.config_file);
    for (const std::string& s : c.sets) rc.set_kv(s);
    return rc;
}

SplitKind split_kind(const std::string& s) {
    if (s == "even") return SplitKind::EvenSlice;
    if (s == "single") return SplitKind::SingleLabel;
    throw std::invalid_argument("--split must be 'even' or 'single'");
}

void apply_ablation(RunConfig& rc, const std::string& ablation) {
    if (ablation == "full") return;
    if (ablation == "vanilla") {
        rc.set("prior.kind", "fixed-zinb");
        rc.set("control.enabled", "0");
        rc.set("model.m", "0");
    } else if (ablation == "prior") {
        rc.set("control.enabled", "0");
        rc.set("model.m", "0");
    } else if (ablation == "prior+control") {
        rc.set("model.m", "0");
    } else {
        throw std::invalid_argument("--ablation must be vanilla|prior|prior+control|full");
    }
}

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

int cmd_gen(const Common& c, const std::string& out) {
    Timer timer;
    RunConfig rc = resolve_config(c);
    SynthResult res = generate_stack(synth_config(rc, c.seed));
    save_stack(out, res.stack, &res.labels);
    append_manifest(c.manifest, rc, c.seed, timer.seconds(), {{"cmd", "gen"}, {"out", out}});
    std::cout << "wrote stack: Z=" << res.stack.depth() << " G=" << res.stack.gene_count
              << " D=" << res.stack.embedding_dim << " -> " << out << "\n";
    return 0;
}

int cmd_pretrain_prior(const Common& c, const std::string& stack_dir, const std::string& out,
                       const std::string& split_name) {
    Timer timer;
    RunConfig rc = resolve_config(c);
    SlideStack stack = load_stack(stack_dir);
    Split split = make_split(stack, split_kind(split_name), c.seed);
    SlideStack masked = apply_split(stack, split);
    std::vector<std::int64_t> train_z = split.sections_with(SectionRole::Train);
    std::vector<std::int64_t> val_z = split.sections_with(SectionRole::Validation);
    std::vector<EpochRecord> log;
    ParamStore prior = pretrain_prior(masked, train_z, val_z, prior_net_config(rc), c.seed, &log);
    save_checkpoint(out, prior);
    for (const EpochRecord& r : log)
        std::cout << "epoch " << r.epoch << " train " << r.train_loss << " val " << r.val_loss
                  << " wall " << r.wall_seconds << "\n";
    append_manifest(c.manifest, rc, c.seed, timer.seconds(),
                    {{"cmd", "pretrain-prior"}, {"out", out}});
    return 0;
}

int cmd_train(const Common& c, const std::string& stack_dir, const std::string& prior_path,
              const std::string& out, const std::string& split_name, const std::string& ablation) {
    Timer timer;
    RunConfig rc = resolve_config(c);
    apply_ablation(rc, ablation);
    SlideStack stack = load_stack(stack_dir);
    Split split = make_split(stack, split_kind(split_name), c.seed);
    SlideStack masked = apply_split(stack, split);
    std::vector<std::int64_t> train_z = split.sections_with(SectionRole::Train);
    std::vector<std::int64_t> val_z = split.sections_with(SectionRole::Validation);

    DenoiserConfig dcfg = denoiser_config(rc, masked.gene_count, masked.embedding_dim);
    fit_rbf(dcfg, masked);
    FlowTrainConfig tcfg = flow_train_config(rc, c.seed);

    ParamStore prior;
    const bool learned = tcfg.start.kind == PriorKind::LearnedZinb;
    if (learned) {
        if (prior_path.empty())
            throw std::invalid_argument("train: learned-zinb prior needs --prior checkpoint");
        prior = load_checkpoint(prior_path);
    }

    GeneProjection proj;
    if (dcfg.use_control) {
        std::vector<std::int64_t> labeled = train_z;
        labeled.insert(labeled.end(), val_z.begin(), val_z.end());
        proj = top_variance_projection(masked, labeled, dcfg.control.proj_rank);
    }

    std::mt19937_64 rng(c.seed);
    ParamStore params = init_denoiser(dcfg, rng);
    std::vector<EpochRecord> log;
    train_fm(masked, train_z, val_z, dcfg, tcfg, learned ? &prior : nullptr,
             dcfg.use_control ? &proj : nullptr, params, &log);
    if (dcfg.use_control) store_projection(params, proj);
    save_checkpoint(out, params);
    for (const EpochRecord& r : log)
        std::cout << "epoch " << r.epoch << " train " << r.train_loss << " val " << r.val_loss
                  << " wall " << r.wall_seconds << "\n";
    append_manifest(c.manifest, rc, c.seed, timer.seconds(),
                    {{"cmd", "train"}, {"out", out}, {"ablation", ablation}});
    return 0;
}

int cmd_infer(const Common& c, const std::string& stack_dir, const std::string& ckpt,
              const std::string& prior_path, const std::string& out,
              const std::string& split_name, std::int64_t threads) {
    Timer timer;
    RunConfig rc = resolve_config(c);
    SlideStack stack = load_stack(stack_dir);
    Split split = make_split(stack, split_kind(split_name), c.seed);
    SlideStack masked = apply_split(stack, split);
    std::vector<std::int64_t> targets = split.sections_with(SectionRole::Test);

    ParamStore params = load_checkpoint(ckpt);
    DenoiserConfig dcfg = denoiser_config_from(params);
    GeneProjection proj;
    if (dcfg.use_control) proj = load_projection(params);

    FlowInferConfig icfg = flow_infer_config(rc, c.seed);
    icfg.threads = threads;
    ParamStore prior;
    const bool learned = icfg.start.kind == PriorKind::LearnedZinb;
    if (learned) {
        if (prior_path.empty())
            throw std::invalid_argument("infer: learned-zinb prior needs --prior checkpoint");
        prior = load_checkpoint(prior_path);
    }
    auto preds = infer_stack(masked, params, dcfg, dcfg.use_control ? &proj : nullptr, targets,
                             learned ? &prior : nullptr, icfg);
    std::filesystem::create_directories(out);
    for (const auto& [z, m] : preds)
        save_matrix(out + "/pred_z" + std::to_string(z) + ".bin", m);
    append_manifest(c.manifest, rc, c.seed, timer.seconds(), {{"cmd", "infer"}, {"out", out}});
    std::cout << "wrote " << preds.size() << " prediction files to " << out << "\n";
    return 0;
}

int cmd_eval(const Common& c, const std::string& stack_dir, const std::string& pred_dir,
             const std::string& split_name, const std::string& out) {
    Timer timer;
    RunConfig rc = resolve_config(c);
    SlideStack stack = load_stack(stack_dir);
    Split split = make_split(stack, split_kind(split_name), c.seed);
    std::vector<std::int64_t> targets = split.sections_with(SectionRole::Test);

    std::int64_t total = 0;
    for (std::int64_t z : targets) total += static_cast<std::int64_t>(stack.section(z).spots.size());
    Tensor2 pred(total, stack.gene_count), truth(total, stack.gene_count);
    std::int64_t row = 0;
    for (std::int64_t z : targets) {
        Tensor2 p = load_matrix(pred_dir + "/pred_z" + std::to_string(z) + ".bin");
        Tensor2 y = expression_matrix(stack.section(z), stack.gene_count);
        check_shape(p.same_shape(y), "eval: prediction shape mismatch on section " +
                                         std::to_string(z));
        for (std::int64_t i = 0; i < p.rows; ++i)
            for (std::int64_t g = 0; g < p.cols; ++g) {
                pred.at(row + i, g) = p.at(i, g);
                truth.at(row + i, g) = y.at(i, g);
            }
        row += p.rows;
    }
    MetricsReport rep = compute_metrics(pred, truth);
    std::cout << rep.to_text();
    if (!out.empty()) {
        std::ofstream f(out);
        f << rep.to_text();
    }
    append_manifest(c.manifest, rc, c.seed, timer.seconds(),
                    {{"cmd", "eval"},
                     {"mse", std::to_string(rep.mse)},
                     {"pcc_gene", std::to_string(rep.pcc_gene_mean)},
                     {"pcc_spot", std::to_string(rep.pcc_spot_mean)}});
    return 0;
}

int cmd_gradcheck(const Common& c) {
    Timer timer;
    RunConfig rc = resolve_config(c);
    GradCheckResult res = denoiser_grad_check(c.seed);
    std::cout << "max_rel_err " << res.max_rel_err << " worst " << res.worst_param << "\n";
    append_manifest(c.manifest, rc, c.seed, timer.seconds(),
                    {{"cmd", "gradcheck"}, {"max_rel_err", std::to_string(res.max_rel_err)}});
    if (!(res.max_rel_err < 1e-4)) {
        std::cerr << "gradcheck FAILED: max relative error >= 1e-4\n";
        return 1;
    }
    return 0;
}

int cmd_bench_gsa(const Common& c, std::int64_t n, std::int64_t m, std::int64_t d,
                  std::int64_t heads, std::int64_t reps) {
    Timer timer;
    RunConfig rc = resolve_config(c);
    const double flop_ratio = gsa_flops(2 * n, m, d) / gsa_flops(n, m, d);
    const double t_half = bench_gsa_forward(n, m, d, heads, reps, c.seed);
    const double t_full = bench_gsa_forward(2 * n, m, d, heads, reps, c.seed);
    const double t_dense = bench_dense_forward(2 * n, d, heads, reps, c.seed);
    std::cout << "flops_ratio_2x " << flop_ratio << "\n"
              << "gsa_seconds_n " << t_half << "\n"
              << "gsa_seconds_2n " << t_full << "\n"
              << "wall_ratio_2x " << t_full / t_half << "\n"
              << "dense_seconds_2n " << t_dense << "\n"
              << "dense_over_gsa " << t_dense / t_full << "\n";
    append_manifest(c.manifest, rc, c.seed, timer.seconds(), {{"cmd", "bench-gsa"}});
    return 0;
}

int cmd_split(const Common& c, const std::string& stack_dir, const std::string& split_name) {
    RunConfig rc = resolve_config(c);
    SlideStack stack = load_stack(stack_dir);
    Split split = make_split(stack, split_kind(split_name), c.seed);
    for (std::int64_t z = 1; z <= stack.depth(); ++z) {
        const SectionRole r = split.roles[z - 1];
        std::cout << "z " << z << " "
                  << (r == SectionRole::Train ? "train"
                                              : r == SectionRole::Validation ? "validation" : "test")
                  << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"holotea: cross-slide flow-matching expression imputation"};
    app.require_subcommand(1);

    Common c_gen, c_pre, c_train, c_infer, c_eval, c_grad, c_bench, c_split;
    std::string gen_out;
    std::string pre_stack, pre_out, pre_split = "even";
    std::string tr_stack, tr_prior, tr_out, tr_split = "even", tr_ablation = "full";
    std::string in_stack, in_ckpt, in_prior, in_out, in_split = "even";
    std::int64_t in_threads = 1;
    std::string ev_stack, ev_pred, ev_split = "even", ev_out;
    std::int64_t bn_n = 2000, bn_m = 16, bn_d = 128, bn_heads = 4, bn_reps = 3;
    std::string sp_stack, sp_split = "even";

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic stack");
    add_common(gen, c_gen);
    gen->add_option("--out", gen_out, "output stack directory")->required();

    CLI::App* pre = app.add_subcommand("pretrain-prior", "phase A: fit the ZINB prior net");
    add_common(pre, c_pre);
    pre->add_option("--stack", pre_stack)->required();
    pre->add_option("--out", pre_out, "prior checkpoint path")->required();
    pre->add_option("--split", pre_split, "even|single");

    CLI::App* tr = app.add_subcommand("train", "phase B: flow-matching training");
    add_common(tr, c_train);
    tr->add_option("--stack", tr_stack)->required();
    tr->add_option("--prior", tr_prior, "prior checkpoint (learned-zinb)");
    tr->add_option("--out", tr_out, "denoiser checkpoint path")->required();
    tr->add_option("--split", tr_split, "even|single");
    tr->add_option("--ablation", tr_ablation, "vanilla|prior|prior+control|full");

    CLI::App* inf = app.add_subcommand("infer", "impute the held-out sections");
    add_common(inf, c_infer);
    inf->add_option("--stack", in_stack)->required();
    inf->add_option("--checkpoint", in_ckpt)->required();
    inf->add_option("--prior", in_prior, "prior checkpoint (learned-zinb)");
    inf->add_option("--out", in_out, "prediction directory")->required();
    inf->add_option("--split", in_split, "even|single");
    inf->add_option("--threads", in_threads, "sections per round run on this many workers");

    CLI::App* ev = app.add_subcommand("eval", "score predictions against stored expression");
    add_common(ev, c_eval);
    ev->add_option("--stack", ev_stack)->required();
    ev->add_option("--pred", ev_pred, "directory with pred_z<k>.bin files")->required();
    ev->add_option("--split", ev_split, "even|single");
    ev->add_option("--out", ev_out, "report file (also printed)");

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of the backbone");
    add_common(gc, c_grad);

    CLI::App* bn = app.add_subcommand("bench-gsa", "GSA vs dense attention scaling measurement");
    add_common(bn, c_bench);
    bn->add_option("--n", bn_n, "base spot count (also times 2n)");
    bn->add_option("--m", bn_m, "inducing tokens");
    bn->add_option("--d", bn_d, "hidden width");
    bn->add_option("--heads", bn_heads);
    bn->add_option("--reps", bn_reps);

    CLI::App* sp = app.add_subcommand("split", "print section roles for a split");
    add_common(sp, c_split);
    sp->add_option("--stack", sp_stack)->required();
    sp->add_option("--split", sp_split, "even|single");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen(c_gen, gen_out);
        if (pre->parsed()) return cmd_pretrain_prior(c_pre, pre_stack, pre_out, pre_split);
        if (tr->parsed())
            return cmd_train(c_train, tr_stack, tr_prior, tr_out, tr_split, tr_ablation);
        if (inf->parsed())
            return cmd_infer(c_infer, in_stack, in_ckpt, in_prior, in_out, in_split, in_threads);
        if (ev->parsed()) return cmd_eval(c_eval, ev_stack, ev_pred, ev_split, ev_out);
        if (gc->parsed()) return cmd_gradcheck(c_grad);
        if (bn->parsed()) return cmd_bench_gsa(c_bench, bn_n, bn_m, bn_d, bn_heads, bn_reps);
        if (sp->parsed()) return cmd_split(c_split, sp_stack, sp_split);
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const holotea::EmptyInputError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const holotea::DimensionError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
