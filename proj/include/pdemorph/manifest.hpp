#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pdemorph {

/// One `key = args...` line. Arguments are whitespace-separated tokens;
/// double-quoted tokens keep their content verbatim (used for expressions).
struct ManifestEntry {
  std::string key;
  std::vector<std::string> args;
  std::size_t line = 0;
};

struct ManifestSection {
  std::string kind;
  std::string name;  // optional second word of the [kind name] header
  std::vector<ManifestEntry> entries;
  std::size_t line = 0;

  const ManifestEntry* find(const std::string& key) const;
  const ManifestEntry& need(const std::string& key) const;
  std::vector<const ManifestEntry*> all(const std::string& key) const;
};

/// Line-oriented fixture description: top-level `version` and `name`
/// entries followed by [kind name] sections. '#' starts a comment outside
/// quotes; blank lines are ignored.
struct Manifest {
  int version = 0;
  std::string name;
  std::string origin;  // file path or label, used in error messages
  std::vector<ManifestSection> sections;

  static Manifest parse(const std::string& text, const std::string& origin);
  static Manifest parse_file(const std::string& path);

  const ManifestSection* find(const std::string& kind,
                              const std::string& name = "") const;
  const ManifestSection& need(const std::string& kind,
                              const std::string& name = "") const;
  std::vector<const ManifestSection*> all(const std::string& kind) const;
};

/// FNV-1a over the raw bytes, as 16 hex digits; pins fixture content.
std::string fnv1a64_hex(const std::string& bytes);

}  // namespace pdemorph
