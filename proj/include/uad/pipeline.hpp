#pragma once

#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "uad/config.hpp"

namespace uad {

enum class Stage { Preprocess, Synth, Train, Infer, Evaluate, Bench };

/// The synth stage is exposed on the command line as three steps.
enum class SynthStep { Train, Sample, Filter };

const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct StageOutcome {
    Stage stage = Stage::Preprocess;
    bool skipped = false;  // outputs were already up to date
    std::string message;
};

struct PipelineResult {
    std::vector<StageOutcome> outcomes;
};

/// Generates the phantom corpora under cfg.paths.data_dir (train/ healthy,
/// eval/ with the configured lesion kind). Not part of the pipeline stages;
/// exposed for the `phantom` subcommand and acceptance runs.
void generate_phantom_data(const RunConfig& cfg, std::ostream* log = nullptr);

/// Runs one synth step (train -> sample -> filter each depend on the previous
/// step's manifest). The full synth stage inside run_pipeline is these three
/// in order.
StageOutcome run_synth_step(const RunConfig& cfg, SynthStep step, std::ostream* log = nullptr);

/// Runs the requested stages in pipeline order. Every stage checks its
/// manifest dependencies, embeds the config hash into its artifacts, and
/// no-ops when its recorded inputs/outputs are unchanged.
PipelineResult run_pipeline(const RunConfig& cfg, const std::set<Stage>& stages,
                            std::ostream* log = nullptr);

}  // namespace uad
