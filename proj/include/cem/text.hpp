#pragma once

#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

namespace cem::text {

// Normalized token stream shared by the leak filter and material truncation.
// Rules: fullwidth ASCII folded to halfwidth, Latin lowercased, punctuation
// and whitespace delimit, CJK runs split into one token per character.
std::vector<std::string> tokenize(const std::string& utf8);

// Hashes of every n-token shingle of the token stream.
std::unordered_set<std::uint64_t> ngram_hashes(
    const std::vector<std::string>& tokens, int n);

// True iff the two texts share at least one n-gram under tokenize().
bool shares_ngram(const std::string& a, const std::string& b, int n);

// First max_tokens tokens' worth of the original text (original bytes, cut at
// a token boundary). Used for material truncation before judging.
std::string truncate_tokens(const std::string& utf8, std::size_t max_tokens);

std::string to_lower_ascii(std::string s);
std::string trim(const std::string& s);

}  // namespace cem::text
