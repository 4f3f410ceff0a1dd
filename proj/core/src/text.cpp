#include "resee/text.hpp"

#include <algorithm>
#include <cctype>

namespace resee::text {
namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

bool is_split_punct(char c) { return kSplitPunctuation.find(c) != std::string_view::npos; }

bool is_metric_punct(char c) { return kMetricPunctuation.find(c) != std::string_view::npos; }

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<TokenSpan> token_spans(std::string_view s) {
  std::vector<TokenSpan> spans;
  std::size_t i = 0;
  while (i < s.size()) {
    if (is_space(s[i])) {
      ++i;
      continue;
    }
    if (is_split_punct(s[i])) {
      spans.push_back({i, i + 1});
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j]) && !is_split_punct(s[j])) ++j;
    spans.push_back({i, j});
    i = j;
  }
  return spans;
}

std::vector<std::string> tokens_cased(std::string_view s) {
  std::vector<std::string> out;
  for (const auto& span : token_spans(s)) out.emplace_back(s.substr(span.begin, span.end - span.begin));
  return out;
}

std::vector<std::string> tokenize(std::string_view s) {
  auto out = tokens_cased(s);
  for (auto& t : out) t = to_lower(t);
  return out;
}

bool is_punctuation_token(std::string_view token) {
  return !token.empty() && std::all_of(token.begin(), token.end(), is_metric_punct);
}

std::vector<std::string> strip_punctuation(std::span<const std::string> tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (is_punctuation_token(t)) continue;
    std::string_view v = t;
    while (!v.empty() && is_metric_punct(v.back())) v.remove_suffix(1);
    if (!v.empty()) out.emplace_back(v);
  }
  return out;
}

std::string keep_first_tokens(std::string_view s, std::size_t max_tokens) {
  const auto spans = token_spans(s);
  if (spans.size() <= max_tokens) return trim(s);
  if (max_tokens == 0) return {};
  return std::string(s.substr(spans.front().begin, spans[max_tokens - 1].end - spans.front().begin));
}

std::string keep_last_tokens(std::string_view s, std::size_t max_tokens) {
  const auto spans = token_spans(s);
  if (spans.size() <= max_tokens) return trim(s);
  if (max_tokens == 0) return {};
  const auto& first = spans[spans.size() - max_tokens];
  return std::string(s.substr(first.begin, spans.back().end - first.begin));
}

std::string join(std::span<const std::string> parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string singularize(std::string_view word) {
  std::string w(word);
  if (w.size() <= 3) return w;
  if (ends_with(w, "ss") || ends_with(w, "us") || ends_with(w, "is")) return w;
  if (ends_with(w, "ies") && w.size() > 4) return w.substr(0, w.size() - 3) + "y";
  if (ends_with(w, "sses") || ends_with(w, "xes") || ends_with(w, "ches") || ends_with(w, "shes") ||
      ends_with(w, "zes")) {
    return w.substr(0, w.size() - 2);
  }
  if (ends_with(w, "s")) return w.substr(0, w.size() - 1);
  return w;
}

std::string normalize_noun(std::string_view phrase) {
  auto words = split_words(to_lower(phrase));
  if (words.empty()) return {};
  words.back() = singularize(words.back());
  return join(words);
}

}  // namespace resee::text
