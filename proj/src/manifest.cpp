#include "pdemorph/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "pdemorph/errors.hpp"

namespace pdemorph {

namespace {

[[noreturn]] void fail(const std::string& origin, std::size_t line,
                       const std::string& msg) {
  throw DomainError(origin + ":" + std::to_string(line) + ": " + msg);
}

// Splits a line into tokens; '"' quotes a single token, '#' starts a comment.
std::vector<std::string> tokenize(const std::string& s,
                                  const std::string& origin, std::size_t line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    char c = s[i];
    if (c == ' ' || c == '\t' || c == '\r') {
      ++i;
      continue;
    }
    if (c == '#') break;
    if (c == '"') {
      std::size_t j = s.find('"', i + 1);
      if (j == std::string::npos) fail(origin, line, "unterminated quote");
      out.push_back(s.substr(i + 1, j - i - 1));
      i = j + 1;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r' &&
           s[j] != '#' && s[j] != '"') {
      ++j;
    }
    out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

const ManifestEntry* ManifestSection::find(const std::string& key) const {
  for (const auto& e : entries) {
    if (e.key == key) return &e;
  }
  return nullptr;
}

const ManifestEntry& ManifestSection::need(const std::string& key) const {
  const ManifestEntry* e = find(key);
  if (!e) {
    throw DomainError("section [" + kind + (name.empty() ? "" : " " + name) +
                      "] is missing '" + key + "'");
  }
  return *e;
}

std::vector<const ManifestEntry*> ManifestSection::all(
    const std::string& key) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.key == key) out.push_back(&e);
  }
  return out;
}

Manifest Manifest::parse(const std::string& text, const std::string& origin) {
  Manifest m;
  m.origin = origin;
  ManifestSection* current = nullptr;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    std::vector<std::string> tok = tokenize(raw, origin, lineno);
    if (tok.empty()) continue;

    if (tok[0].size() >= 1 && tok[0][0] == '[') {
      // Re-join: headers have no quoting, brackets may touch the words.
      std::string head;
      for (const auto& t : tok) head += (head.empty() ? "" : " ") + t;
      if (head.back() != ']') fail(origin, lineno, "unterminated section header");
      std::istringstream hs(head.substr(1, head.size() - 2));
      ManifestSection sec;
      sec.line = lineno;
      hs >> sec.kind;
      hs >> sec.name;
      std::string extra;
      if (hs >> extra) fail(origin, lineno, "section header has extra tokens");
      if (sec.kind.empty()) fail(origin, lineno, "empty section header");
      m.sections.push_back(sec);
      current = &m.sections.back();
      continue;
    }

    auto eq = std::find(tok.begin(), tok.end(), "=");
    if (eq == tok.end() || eq == tok.begin()) {
      fail(origin, lineno, "expected 'key = value'");
    }
    if (eq - tok.begin() != 1) fail(origin, lineno, "multi-word key");
    ManifestEntry entry;
    entry.key = tok[0];
    entry.args.assign(eq + 1, tok.end());
    entry.line = lineno;
    if (entry.args.empty()) fail(origin, lineno, "missing value after '='");

    if (!current) {
      if (entry.key == "version") {
        try {
          m.version = std::stoi(entry.args.at(0));
        } catch (const std::exception&) {
          fail(origin, lineno, "version must be an integer");
        }
      } else if (entry.key == "name") {
        m.name = entry.args.at(0);
      } else {
        fail(origin, lineno, "unknown top-level key '" + entry.key + "'");
      }
      continue;
    }
    current->entries.push_back(std::move(entry));
  }
  if (m.version != 1) {
    throw DomainError(origin + ": unsupported or missing version (want 1)");
  }
  if (m.name.empty()) throw DomainError(origin + ": missing name");
  return m;
}

Manifest Manifest::parse_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

const ManifestSection* Manifest::find(const std::string& kind,
                                      const std::string& name) const {
  for (const auto& s : sections) {
    if (s.kind == kind && (name.empty() || s.name == name)) return &s;
  }
  return nullptr;
}

const ManifestSection& Manifest::need(const std::string& kind,
                                      const std::string& name) const {
  const ManifestSection* s = find(kind, name);
  if (!s) {
    throw DomainError(origin + ": missing section [" + kind +
                      (name.empty() ? "" : " " + name) + "]");
  }
  return *s;
}

std::vector<const ManifestSection*> Manifest::all(const std::string& kind) const {
  std::vector<const ManifestSection*> out;
  for (const auto& s : sections) {
    if (s.kind == kind) out.push_back(&s);
  }
  return out;
}

std::string fnv1a64_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace pdemorph
