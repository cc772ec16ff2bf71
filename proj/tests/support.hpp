#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "repairlab/policy.hpp"

namespace testsupport {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "repairlab-test-XXXXXX").string();
    path = mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

// A shape small enough for finite differences (a few thousand parameters).
inline repairlab::ModelShape tiny_shape() {
  repairlab::ModelShape s;
  s.context_window = 32;
  s.embed_dim = 3;
  s.window = 2;
  s.hidden_dim = 5;
  return s;
}

// Central differences over a strided subset of coordinates; returns the
// largest relative error |a - n| / max(|a| + |n|, floor). Below the floor the
// central difference is dominated by round-off in the loss sum.
template <class Loss>
double max_fd_rel_error(std::vector<double>& params, const std::vector<double>& analytic, Loss loss,
                        std::size_t stride = 1, double h = 1e-5, double floor = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); i += stride) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = loss();
    params[i] = keep - h;
    const double down = loss();
    params[i] = keep;
    const double numeric = (up - down) / (2 * h);
    const double denom = std::max(std::abs(analytic[i]) + std::abs(numeric), floor);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace testsupport
