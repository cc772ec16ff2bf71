#include "repairlab/patch.hpp"

#include <regex>
#include <vector>

#include "repairlab/errors.hpp"

namespace repairlab {

namespace {

struct Hunk {
  std::size_t old_start = 0, old_count = 0, new_start = 0, new_count = 0;
  std::vector<std::string> old_lines;  // each carries its '\n' unless it ends the file without one
  std::vector<std::string> new_lines;
};

struct FilePatch {
  std::string old_path, new_path;
  std::vector<Hunk> hunks;
};

std::vector<std::string> split_lines_raw(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      out.push_back(text.substr(pos));
      break;
    }
    out.push_back(text.substr(pos, nl - pos));
    pos = nl + 1;
  }
  return out;
}

// Splits file content keeping terminators, so joining restores it byte-exactly.
std::vector<std::string> split_keep(const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const auto end = nl == std::string::npos ? text.size() : nl + 1;
    out.push_back(text.substr(pos, end - pos));
    pos = end;
  }
  return out;
}

std::string header_path(const std::string& line) {
  std::string p = line.substr(4);
  if (const auto tab = p.find('\t'); tab != std::string::npos) p.resize(tab);
  while (!p.empty() && (p.back() == ' ' || p.back() == '\r')) p.pop_back();
  if (p == "/dev/null") return p;
  if (p.size() > 2 && (p.starts_with("a/") || p.starts_with("b/"))) p = p.substr(2);
  return p;
}

std::vector<FilePatch> parse_patch(const std::string& patch) {
  static const std::regex kHunkHeader(R"(^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@.*$)");
  const auto lines = split_lines_raw(patch);
  std::vector<FilePatch> files;
  std::size_t i = 0;
  while (i < lines.size()) {
    if (!lines[i].starts_with("--- ")) {
      ++i;
      continue;
    }
    if (i + 1 >= lines.size() || !lines[i + 1].starts_with("+++ "))
      throw PatchApplyError("malformed patch: '---' header without '+++' at line " + std::to_string(i + 1));
    FilePatch fp;
    fp.old_path = header_path(lines[i]);
    fp.new_path = header_path(lines[i + 1]);
    i += 2;
    while (i < lines.size() && lines[i].starts_with("@@")) {
      std::smatch m;
      if (!std::regex_match(lines[i], m, kHunkHeader))
        throw PatchApplyError("malformed hunk header: " + lines[i]);
      Hunk h;
      h.old_start = std::stoul(m[1]);
      h.old_count = m[2].matched ? std::stoul(m[2]) : 1;
      h.new_start = std::stoul(m[3]);
      h.new_count = m[4].matched ? std::stoul(m[4]) : 1;
      ++i;
      std::size_t seen_old = 0, seen_new = 0;
      std::string last_side;
      while (i < lines.size() && (seen_old < h.old_count || seen_new < h.new_count ||
                                  (i < lines.size() && lines[i].starts_with("\\")))) {
        const std::string& l = lines[i];
        if (l.starts_with("\\")) {
          // "\ No newline at end of file" applies to the previous line.
          if (last_side.find('o') != std::string::npos && !h.old_lines.empty()) h.old_lines.back().pop_back();
          if (last_side.find('n') != std::string::npos && !h.new_lines.empty()) h.new_lines.back().pop_back();
          ++i;
          continue;
        }
        const char tag = l.empty() ? ' ' : l[0];
        const std::string body = (l.empty() ? std::string() : l.substr(1)) + "\n";
        if (tag == ' ') {
          h.old_lines.push_back(body);
          h.new_lines.push_back(body);
          ++seen_old;
          ++seen_new;
          last_side = "on";
        } else if (tag == '-') {
          h.old_lines.push_back(body);
          ++seen_old;
          last_side = "o";
        } else if (tag == '+') {
          h.new_lines.push_back(body);
          ++seen_new;
          last_side = "n";
        } else {
          break;
        }
        ++i;
      }
      if (seen_old != h.old_count || seen_new != h.new_count)
        throw PatchApplyError("hunk line counts do not match header in " + fp.new_path);
      fp.hunks.push_back(std::move(h));
    }
    files.push_back(std::move(fp));
  }
  return files;
}

FileSet apply_parsed(const FileSet& base, std::vector<FilePatch> files, bool reverse) {
  FileSet out = base;
  for (auto& fp : files) {
    if (reverse) {
      std::swap(fp.old_path, fp.new_path);
      for (auto& h : fp.hunks) {
        std::swap(h.old_start, h.new_start);
        std::swap(h.old_count, h.new_count);
        std::swap(h.old_lines, h.new_lines);
      }
    }
    const bool creating = fp.old_path == "/dev/null";
    const bool deleting = fp.new_path == "/dev/null";
    const std::string& target = creating ? fp.new_path : fp.old_path;
    std::vector<std::string> content;
    if (creating) {
      if (out.contains(target)) throw PatchApplyError("patch creates existing file " + target);
    } else {
      auto it = out.find(target);
      if (it == out.end()) throw PatchApplyError("patch touches unknown file " + target);
      content = split_keep(it->second);
    }

    long offset = 0;
    for (std::size_t hi = 0; hi < fp.hunks.size(); ++hi) {
      const Hunk& h = fp.hunks[hi];
      // A zero-length old side means "insert after line old_start".
      const long anchor = (h.old_count == 0 ? static_cast<long>(h.old_start) : static_cast<long>(h.old_start) - 1) + offset;
      const auto fail = [&](const std::string& why) {
        return PatchApplyError("hunk " + std::to_string(hi + 1) + " of " + target + ": " + why);
      };
      if (anchor < 0 || static_cast<std::size_t>(anchor) + h.old_lines.size() > content.size())
        throw fail("context out of range");
      for (std::size_t k = 0; k < h.old_lines.size(); ++k)
        if (content[static_cast<std::size_t>(anchor) + k] != h.old_lines[k])
          throw fail("context mismatch at line " + std::to_string(anchor + static_cast<long>(k) + 1));
      content.erase(content.begin() + anchor, content.begin() + anchor + static_cast<long>(h.old_lines.size()));
      content.insert(content.begin() + anchor, h.new_lines.begin(), h.new_lines.end());
      offset += static_cast<long>(h.new_lines.size()) - static_cast<long>(h.old_lines.size());
    }

    if (deleting) {
      if (!content.empty()) throw PatchApplyError("deletion of " + target + " leaves content behind");
      out.erase(target);
      continue;
    }
    std::string joined;
    for (const auto& l : content) joined += l;
    if (!creating && fp.new_path != fp.old_path) out.erase(fp.old_path);
    out[fp.new_path] = std::move(joined);
  }
  return out;
}

}  // namespace

FileSet apply_patch(const FileSet& base_files, const std::string& patch) {
  return apply_parsed(base_files, parse_patch(patch), false);
}

FileSet reverse_patch(const FileSet& patched_files, const std::string& patch) {
  return apply_parsed(patched_files, parse_patch(patch), true);
}

bool looks_like_unified_diff(const std::string& text) {
  return (text.starts_with("--- ") || text.find("\n--- ") != std::string::npos) &&
         text.find("\n+++ ") != std::string::npos && text.find("\n@@ ") != std::string::npos;
}

}  // namespace repairlab
