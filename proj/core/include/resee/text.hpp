#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace resee::text {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

/// Splits on ASCII whitespace.
std::vector<std::string> split_words(std::string_view s);

struct TokenSpan {
  std::size_t begin = 0;  // byte offset into the source text
  std::size_t end = 0;
};

/// Tokenizer shared by the dataset budgets, the model vocabulary and the
/// metrics: whitespace split, with the characters in `kSplitPunctuation`
/// emitted as single-character tokens. Apostrophes and hyphens stay inside
/// words. Offsets refer to the original text.
std::vector<TokenSpan> token_spans(std::string_view s);

/// Case-preserving tokens.
std::vector<std::string> tokens_cased(std::string_view s);

/// Lowercased tokens. This is the canonical tokenization.
std::vector<std::string> tokenize(std::string_view s);

inline constexpr std::string_view kSplitPunctuation = ".,!?;:\"()[]{}";

/// Characters considered sentence punctuation by the metrics.
inline constexpr std::string_view kMetricPunctuation = ".,!?;:\"'()[]{}-`";

bool is_punctuation_token(std::string_view token);

/// Removes standalone punctuation tokens and trailing punctuation characters.
std::vector<std::string> strip_punctuation(std::span<const std::string> tokens);

/// Longest prefix of `s` holding at most `max_tokens` tokens.
std::string keep_first_tokens(std::string_view s, std::size_t max_tokens);
/// Longest suffix of `s` holding at most `max_tokens` tokens.
std::string keep_last_tokens(std::string_view s, std::size_t max_tokens);

std::string join(std::span<const std::string> parts, std::string_view sep = " ");

/// Suffix-rule singularizer ("flowers" -> "flower", "cities" -> "city").
std::string singularize(std::string_view word);

/// Lowercase and singularize the last word of a phrase.
std::string normalize_noun(std::string_view phrase);

}  // namespace resee::text
