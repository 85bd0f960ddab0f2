#pragma once

// Command-line front end. Lives in a library so tests can drive it in-process.

#include <ostream>
#include <string>
#include <vector>

#include "kdmot/experiment.hpp"

namespace kdmot {

/// args excludes the program name. Returns the process exit code; diagnostics
/// go to err, results and progress to out.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Training frames for a config: the named (or first) sequence under
/// data_root, or a generated 5-object synthetic sequence seeded by config.seed.
TrainingData load_training_data(const DistillConfig& config);

/// Sequence plus its PGM frames from a dataset on disk.
TrainingData load_training_data(const DatasetLayout& layout, const std::string& name);

}  // namespace kdmot
