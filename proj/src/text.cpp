#include "lingopt/text.hpp"

#include <algorithm>
#include <cctype>

namespace lingopt {

namespace {

bool is_space(char c) {
  return std::isspace(static_cast<unsigned char>(c)) != 0;
}

}  // namespace

std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return s;
}

std::string trim(const std::string& s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

std::string collapse_whitespace(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  bool in_run = false;
  for (char c : s) {
    if (is_space(c)) {
      in_run = true;
      continue;
    }
    if (in_run && !out.empty()) out.push_back(' ');
    in_run = false;
    out.push_back(c);
  }
  return out;
}

std::string instantiate_template(const std::string& tmpl, const std::string& value) {
  std::string out;
  out.reserve(tmpl.size() + value.size());
  size_t pos = 0;
  while (true) {
    const size_t slot = tmpl.find("{}", pos);
    if (slot == std::string::npos) {
      out.append(tmpl, pos, std::string::npos);
      return out;
    }
    out.append(tmpl, pos, slot - pos);
    out += value;
    pos = slot + 2;
  }
}

std::string normalize_answer(const std::string& s) {
  std::string out = collapse_whitespace(to_lower(s));
  const std::string punct = ".,!?;:";
  while (!out.empty() && punct.find(out.back()) != std::string::npos) {
    out.pop_back();
    out = trim(out);
  }
  for (const char* article : {"a ", "an ", "the "}) {
    const size_t len = std::char_traits<char>::length(article);
    if (out.size() > len && out.compare(0, len, article) == 0) {
      out = out.substr(len);
      break;
    }
  }
  return out;
}

}  // namespace lingopt
