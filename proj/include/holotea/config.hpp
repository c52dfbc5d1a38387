#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "holotea/denoiser.hpp"
#include "holotea/flow.hpp"
#include "holotea/prior.hpp"
#include "holotea/synth.hpp"

namespace holotea {

/// Flat key/value run configuration. Every tunable has a default; setting an
/// unknown key is an error; the hash canonicalizes content, so it is stable
/// under key reordering.
class RunConfig {
  public:
    static RunConfig defaults();
    static RunConfig from_file(const std::string& path);  // "key value" lines, '#' comments

    void set(const std::string& key, const std::string& value);
    void set_kv(const std::string& assignment);  // "key=value"

    const std::string& get(const std::string& key) const;
    double get_real(const std::string& key) const;
    std::int64_t get_int(const std::string& key) const;
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string canonical() const;  // sorted "key value" lines
    std::string hash() const;       // 16-hex-digit FNV-1a of canonical()

  private:
    std::map<std::string, std::string> values_;
};

// Typed views over a RunConfig.
DenoiserConfig denoiser_config(const RunConfig& cfg, std::int64_t gene_count,
                               std::int64_t embed_dim);
FlowTrainConfig flow_train_config(const RunConfig& cfg, std::uint64_t seed);
FlowInferConfig flow_infer_config(const RunConfig& cfg, std::uint64_t seed);
PriorNetConfig prior_net_config(const RunConfig& cfg);
StartConfig start_config(const RunConfig& cfg);
SynthConfig synth_config(const RunConfig& cfg, std::uint64_t seed);

/// Appends a run record (config hash, seed, source version, wall seconds plus
/// caller extras) to <path>; creates the file on first use.
void append_manifest(const std::string& path, const RunConfig& cfg, std::uint64_t seed,
                     double wall_seconds, const std::map<std::string, std::string>& extra);

}  // namespace holotea
