#pragma once

#include <string>

#include "repairlab/corpus.hpp"
#include "repairlab/verifier.hpp"

namespace repairlab {

// Twenty single-expression repair tasks in the toyexpr language: five target
// operations, each paired with the four other operations as the bug.
TaskSet make_toy_tasks();

// Location of the toyexpr interpreter: $REPAIRLAB_TOYEXPR, else the path baked
// in at build time, else "toyexpr" on PATH.
std::string default_toyexpr_path();

// Run and check commands for the "toyexpr" language tag.
VerifierConfig toy_verifier_config(const std::string& toyexpr_path = default_toyexpr_path());

}  // namespace repairlab
