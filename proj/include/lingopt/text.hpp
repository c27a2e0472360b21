#pragma once

#include <string>

namespace lingopt {

// Lowercase ASCII letters in place; other bytes pass through untouched.
std::string to_lower(std::string s);

// Strip ASCII whitespace from both ends.
std::string trim(const std::string& s);

// Collapse interior whitespace runs to single spaces and trim the ends.
std::string collapse_whitespace(const std::string& s);

// Replace every "{}" slot with `value`. Templates without slots pass
// through unchanged (caption-style prompts carry no slot).
std::string instantiate_template(const std::string& tmpl, const std::string& value);

// Canonical form for answer comparison: lowercase, collapsed whitespace,
// terminal punctuation removed, then a single leading article (a/an/the)
// dropped.
std::string normalize_answer(const std::string& s);

}  // namespace lingopt
