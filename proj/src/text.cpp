#include "cem/text.hpp"

#include <algorithm>
#include <cctype>

#include "cem/rng.hpp"

namespace cem::text {

namespace {

struct Span {
  std::string token;
  std::size_t end;  // byte offset one past the token in the source
};

// Decodes one UTF-8 codepoint; advances i. Invalid bytes decode as U+FFFD.
std::uint32_t decode_utf8(const std::string& s, std::size_t& i) {
  unsigned char c = static_cast<unsigned char>(s[i]);
  if (c < 0x80) {
    ++i;
    return c;
  }
  int extra = 0;
  std::uint32_t cp = 0;
  if ((c & 0xe0) == 0xc0) {
    cp = c & 0x1f;
    extra = 1;
  } else if ((c & 0xf0) == 0xe0) {
    cp = c & 0x0f;
    extra = 2;
  } else if ((c & 0xf8) == 0xf0) {
    cp = c & 0x07;
    extra = 3;
  } else {
    ++i;
    return 0xfffd;
  }
  if (i + extra >= s.size()) {
    i = s.size();
    return 0xfffd;
  }
  std::size_t j = i + 1;
  for (int k = 0; k < extra; ++k, ++j) {
    unsigned char cc = static_cast<unsigned char>(s[j]);
    if ((cc & 0xc0) != 0x80) {
      i = j;
      return 0xfffd;
    }
    cp = (cp << 6) | (cc & 0x3f);
  }
  i = j;
  return cp;
}

bool is_cjk(std::uint32_t cp) {
  return (cp >= 0x3400 && cp <= 0x4dbf) ||   // CJK ext A
         (cp >= 0x4e00 && cp <= 0x9fff) ||   // CJK unified
         (cp >= 0xf900 && cp <= 0xfaff) ||   // compatibility ideographs
         (cp >= 0x3040 && cp <= 0x30ff) ||   // hiragana, katakana
         (cp >= 0xac00 && cp <= 0xd7af) ||   // hangul
         (cp >= 0x20000 && cp <= 0x2ebef);   // ext B..F
}

// Fullwidth ASCII variants fold to their halfwidth forms (the slice of NFKC
// that matters for mixed Chinese/English exam text).
std::uint32_t fold(std::uint32_t cp) {
  if (cp >= 0xff01 && cp <= 0xff5e) return cp - 0xfee0;
  if (cp == 0x3000) return ' ';
  return cp;
}

void append_utf8(std::string& out, std::uint32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xc0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xe0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  } else {
    out += static_cast<char>(0xf0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3f));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3f));
    out += static_cast<char>(0x80 | (cp & 0x3f));
  }
}

std::vector<Span> tokenize_spans(const std::string& s) {
  std::vector<Span> out;
  std::string word;
  std::size_t i = 0;
  auto flush = [&](std::size_t end) {
    if (!word.empty()) {
      out.push_back({word, end});
      word.clear();
    }
  };
  while (i < s.size()) {
    std::size_t start = i;
    std::uint32_t cp = fold(decode_utf8(s, i));
    if (cp < 0x80) {
      char c = static_cast<char>(cp);
      if (std::isalnum(static_cast<unsigned char>(c))) {
        word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      } else {
        flush(start);
      }
    } else if (is_cjk(cp)) {
      flush(start);
      std::string t;
      append_utf8(t, cp);
      out.push_back({t, i});
    } else {
      // other non-ASCII letters (accented Latin etc.) join the current word
      if (cp >= 0x00c0 && cp <= 0x024f) {
        append_utf8(word, cp);
      } else {
        flush(start);
      }
    }
  }
  flush(s.size());
  return out;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& utf8) {
  std::vector<std::string> out;
  for (auto& sp : tokenize_spans(utf8)) out.push_back(std::move(sp.token));
  return out;
}

std::unordered_set<std::uint64_t> ngram_hashes(
    const std::vector<std::string>& tokens, int n) {
  std::unordered_set<std::uint64_t> out;
  if (n <= 0 || tokens.size() < static_cast<std::size_t>(n)) return out;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t j = i; j < i + n; ++j) {
      h = fnv1a64(tokens[j].data(), tokens[j].size(), h);
      h = fnv1a64("\x1f", 1, h);  // separator so ["ab","c"] != ["a","bc"]
    }
    out.insert(h);
  }
  return out;
}

bool shares_ngram(const std::string& a, const std::string& b, int n) {
  auto ha = ngram_hashes(tokenize(a), n);
  if (ha.empty()) return false;
  auto hb = ngram_hashes(tokenize(b), n);
  for (auto h : hb) {
    if (ha.count(h)) return true;
  }
  return false;
}

std::string truncate_tokens(const std::string& utf8, std::size_t max_tokens) {
  auto spans = tokenize_spans(utf8);
  if (spans.size() <= max_tokens) return utf8;
  if (max_tokens == 0) return "";
  return utf8.substr(0, spans[max_tokens - 1].end);
}

std::string to_lower_ascii(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return s;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace cem::text
