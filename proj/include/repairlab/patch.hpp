#pragma once

#include <map>
#include <string>

namespace repairlab {

using FileSet = std::map<std::string, std::string>;

// Applies a unified diff with zero fuzz: each hunk must match its old-side
// lines at the stated position. `a/` and `b/` prefixes are stripped.
// PatchApplyError names the file and hunk that failed.
FileSet apply_patch(const FileSet& base_files, const std::string& patch);

// Same, with old and new sides exchanged.
FileSet reverse_patch(const FileSet& patched_files, const std::string& patch);

bool looks_like_unified_diff(const std::string& text);

}  // namespace repairlab
