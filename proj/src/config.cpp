#include "holotea/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace holotea {

RunConfig RunConfig::defaults() {
    RunConfig c;
    auto& v = c.values_;
    v["model.layers"] = "4";
    v["model.hidden"] = "128";
    v["model.heads"] = "4";
    v["model.k"] = "8";
    v["model.m"] = "16";
    v["model.dropout"] = "0.2";
    v["model.ff_mult"] = "4";
    v["model.time_dim"] = "16";
    v["model.pos_dim"] = "16";
    v["model.rbf_bins"] = "16";
    v["control.enabled"] = "1";
    v["control.grid"] = "64";
    v["control.channels"] = "32";
    v["control.token_dim"] = "32";
    v["control.scale"] = "1.0";
    v["control.t_warm"] = "0.2";
    v["control.blocks"] = "all";
    v["blend.tau"] = "1.0";
    v["blend.beta"] = "0.5";
    v["proj.rank"] = "32";
    v["train.epochs"] = "100";
    v["train.batch_slides"] = "2";
    v["train.lr"] = "5e-4";
    v["train.clip"] = "1.0";
    v["train.patience"] = "10";
    v["train.kprime"] = "8";
    v["prior.kind"] = "learned-zinb";
    v["prior.hidden"] = "64";
    v["prior.pos_dim"] = "16";
    v["prior.epochs"] = "150";
    v["prior.patience"] = "10";
    v["prior.lr"] = "5e-3";
    v["start.empirical_k"] = "128";
    v["start.empirical_sigma"] = "0.05";
    v["fixed.total_count"] = "1.0";
    v["fixed.logits"] = "0.1";
    v["fixed.zi_logits"] = "0.0";
    v["infer.steps"] = "5";
    v["synth.sections"] = "8";
    v["synth.spots"] = "200";
    v["synth.genes"] = "50";
    v["synth.embed_dim"] = "16";
    v["synth.regions"] = "4";
    v["synth.smoothness"] = "0.9";
    v["synth.snr"] = "4.0";
    v["synth.jitter"] = "0.1";
    v["synth.base_mu"] = "2.0";
    v["synth.marker_fold"] = "8.0";
    v["synth.marker_frac"] = "0.2";
    v["synth.modulation_sigma"] = "0.5";
    v["synth.theta"] = "16.0";
    v["synth.pi"] = "0.05";
    v["eval.hvg"] = "250";
    return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    RunConfig c = defaults();
    std::string line;
    while (std::getline(in, line)) {
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key, value;
        if (!(ls >> key)) continue;
        if (!(ls >> value)) throw std::runtime_error("config: key without value: " + key);
        c.set(key, value);
    }
    return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("config: unknown key " + key);
    it->second = value;
}

void RunConfig::set_kv(const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("config: --set expects key=value, got " + assignment);
    set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("config: unknown key " + key);
    return it->second;
}

double RunConfig::get_real(const std::string& key) const {
    const std::string& s = get(key);
    std::size_t used = 0;
    const double x = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("config: " + key + " is not a number");
    return x;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
    const std::string& s = get(key);
    std::size_t used = 0;
    const long long x = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument("config: " + key + " is not an integer");
    return x;
}

std::string RunConfig::canonical() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " " << v << "\n";
    return os.str();
}

std::string RunConfig::hash() const {
    // FNV-1a, 64-bit.
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : canonical()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

DenoiserConfig denoiser_config(const RunConfig& cfg, std::int64_t gene_count,
                               std::int64_t embed_dim) {
    DenoiserConfig d;
    d.layers = cfg.get_int("model.layers");
    d.hidden = cfg.get_int("model.hidden");
    d.heads = cfg.get_int("model.heads");
    d.k = cfg.get_int("model.k");
    d.m = cfg.get_int("model.m");
    d.dropout = cfg.get_real("model.dropout");
    d.ff_mult = cfg.get_int("model.ff_mult");
    d.time_dim = cfg.get_int("model.time_dim");
    d.pos_dim = cfg.get_int("model.pos_dim");
    d.rbf_bins = cfg.get_int("model.rbf_bins");
    d.gene_count = gene_count;
    d.embed_dim = embed_dim;
    d.use_control = cfg.get_int("control.enabled") != 0;
    d.control.grid_h = d.control.grid_w = cfg.get_int("control.grid");
    d.control.channels = cfg.get_int("control.channels");
    d.control.token_dim = cfg.get_int("control.token_dim");
    d.control.proj_rank = std::min<std::int64_t>(cfg.get_int("proj.rank"), gene_count);
    d.control.scale = cfg.get_real("control.scale");
    d.control.t_warm = cfg.get_real("control.t_warm");
    const std::string blocks = cfg.get("control.blocks");
    if (blocks != "all") {
        std::istringstream bs(blocks);
        std::string tok;
        while (std::getline(bs, tok, ','))
            if (!tok.empty()) d.control.blocks.push_back(std::stoll(tok));
    }
    return d;
}

StartConfig start_config(const RunConfig& cfg) {
    StartConfig s;
    s.kind = prior_kind_from_string(cfg.get("prior.kind"));
    s.fixed.total_count = cfg.get_real("fixed.total_count");
    s.fixed.logits = cfg.get_real("fixed.logits");
    s.fixed.zi_logits = cfg.get_real("fixed.zi_logits");
    s.empirical_k = cfg.get_int("start.empirical_k");
    s.empirical_sigma = cfg.get_real("start.empirical_sigma");
    s.pos_dim = cfg.get_int("prior.pos_dim");
    return s;
}

FlowTrainConfig flow_train_config(const RunConfig& cfg, std::uint64_t seed) {
    FlowTrainConfig t;
    t.epochs = cfg.get_int("train.epochs");
    t.batch_slides = cfg.get_int("train.batch_slides");
    t.adam.lr = cfg.get_real("train.lr");
    t.adam.clip_norm = cfg.get_real("train.clip");
    t.patience = cfg.get_int("train.patience");
    t.kprime = cfg.get_int("train.kprime");
    t.blend.tau = cfg.get_real("blend.tau");
    t.blend.beta = cfg.get_real("blend.beta");
    t.start = start_config(cfg);
    t.seed = seed;
    return t;
}

FlowInferConfig flow_infer_config(const RunConfig& cfg, std::uint64_t seed) {
    FlowInferConfig i;
    i.grid = TimeGrid::uniform(cfg.get_int("infer.steps"));
    i.start = start_config(cfg);
    i.blend.tau = cfg.get_real("blend.tau");
    i.blend.beta = cfg.get_real("blend.beta");
    i.kprime = cfg.get_int("train.kprime");
    i.seed = seed;
    return i;
}

PriorNetConfig prior_net_config(const RunConfig& cfg) {
    PriorNetConfig p;
    p.hidden = cfg.get_int("prior.hidden");
    p.pos_dim = cfg.get_int("prior.pos_dim");
    p.epochs = cfg.get_int("prior.epochs");
    p.patience = cfg.get_int("prior.patience");
    p.lr = cfg.get_real("prior.lr");
    return p;
}

SynthConfig synth_config(const RunConfig& cfg, std::uint64_t seed) {
    SynthConfig s;
    s.sections = cfg.get_int("synth.sections");
    s.spots = cfg.get_int("synth.spots");
    s.genes = cfg.get_int("synth.genes");
    s.embed_dim = cfg.get_int("synth.embed_dim");
    s.regions = cfg.get_int("synth.regions");
    s.smoothness = cfg.get_real("synth.smoothness");
    s.snr = cfg.get_real("synth.snr");
    s.jitter = cfg.get_real("synth.jitter");
    s.program.base_mu = cfg.get_real("synth.base_mu");
    s.program.marker_fold = cfg.get_real("synth.marker_fold");
    s.program.marker_frac = cfg.get_real("synth.marker_frac");
    s.program.modulation_sigma = cfg.get_real("synth.modulation_sigma");
    s.program.theta = cfg.get_real("synth.theta");
    s.program.pi = cfg.get_real("synth.pi");
    s.seed = seed;
    return s;
}

void append_manifest(const std::string& path, const RunConfig& cfg, std::uint64_t seed,
                     double wall_seconds, const std::map<std::string, std::string>& extra) {
    std::string version = "unknown";
#if !defined(_WIN32)
    if (FILE* p = popen("git describe --always --dirty 2>/dev/null", "r")) {
        char buf[128];
        if (fgets(buf, sizeof buf, p)) {
            version = buf;
            while (!version.empty() && (version.back() == '\n' || version.back() == '\r'))
                version.pop_back();
        }
        pclose(p);
        if (version.empty()) version = "unknown";
    }
#endif
    std::ofstream out(path, std::ios::app);
    if (!out) throw std::runtime_error("manifest: cannot open " + path);
    out << "run config_hash=" << cfg.hash() << " seed=" << seed << " version=" << version
        << " wall_seconds=" << wall_seconds;
    for (const auto& [k, v] : extra) out << " " << k << "=" << v;
    out << "\n";
}

}  // namespace holotea
