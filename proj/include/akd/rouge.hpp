#pragma once

// ROUGE-L (F1 form) over word tokens, and the diversity gate that rejects
// generated instructions too close to anything already in the Cache Pool.
//
// Tokenization: ASCII letters are lowercased, ASCII punctuation becomes a
// separator, and the result is split on whitespace. Bytes >= 0x80 are kept
// verbatim so non-ASCII words survive as tokens.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace akd {

struct TokenSequence {
  std::vector<std::string> tokens;

  static TokenSequence from_text(std::string_view text);
  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }
};

// Length of the longest common subsequence of two id sequences.
std::size_t lcs_length(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);

// 2*lcs/(|a|+|b|), i.e. F1 of P=lcs/|candidate| and R=lcs/|reference|.
// Zero when either side is empty or nothing is shared.
double rouge_l(const TokenSequence& candidate, const TokenSequence& reference);
double rouge_l(std::string_view candidate, std::string_view reference);

struct DiversityVerdict {
  bool valid = true;
  // Highest overlap seen. For a rejected candidate this is the first score
  // that reached the threshold (the scan stops there).
  double max_score = 0.0;
};

// Pre-tokenized comparison set with an inverted index. Entries whose shared
// token count cannot reach the running maximum are skipped without an LCS.
class DiversityIndex {
 public:
  DiversityIndex() = default;
  explicit DiversityIndex(std::span<const std::string> texts);

  void add(std::string_view text);
  std::size_t size() const noexcept { return entries_.size(); }

  // valid iff rouge_l(candidate, e) < threshold for every entry e.
  // threshold must lie in (0, 1].
  DiversityVerdict check(std::string_view candidate, double threshold) const;

 private:
  std::vector<std::uint32_t> intern(const TokenSequence& seq);
  std::vector<std::uint32_t> lookup(const TokenSequence& seq) const;

  std::unordered_map<std::string, std::uint32_t> vocab_;
  std::vector<std::vector<std::uint32_t>> entries_;
  // token id -> (entry index, occurrences of the token in that entry)
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> postings_;
};

DiversityVerdict diversity_check(std::string_view candidate, std::span<const std::string> pool_texts,
                                 double threshold);

}  // namespace akd
