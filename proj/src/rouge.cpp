#include "akd/rouge.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <map>

#include "akd/error.hpp"

namespace akd {

namespace {

constexpr std::uint32_t kUnknownToken = std::numeric_limits<std::uint32_t>::max();

bool is_ascii_punct(unsigned char c) {
  return (c >= 0x21 && c <= 0x2f) || (c >= 0x3a && c <= 0x40) || (c >= 0x5b && c <= 0x60) ||
         (c >= 0x7b && c <= 0x7e);
}

bool is_ascii_space(unsigned char c) { return c == ' ' || (c >= '\t' && c <= '\r'); }

// Per-symbol occurrence bitmasks of one sequence, as used by the bit-vector
// LCS recurrence.
class MatchMasks {
 public:
  explicit MatchMasks(std::span<const std::uint32_t> a) : words_((a.size() + 63) / 64) {
    for (std::size_t i = 0; i < a.size(); ++i) {
      auto& mask = masks_[a[i]];
      if (mask.empty()) mask.assign(words_, 0);
      mask[i / 64] |= std::uint64_t{1} << (i % 64);
    }
    length_ = a.size();
  }

  std::size_t lcs_with(std::span<const std::uint32_t> b) const {
    if (length_ == 0 || b.empty()) return 0;
    std::vector<std::uint64_t> v(words_, ~std::uint64_t{0});
    for (std::uint32_t symbol : b) {
      auto it = masks_.find(symbol);
      if (it == masks_.end()) continue;  // no match: V unchanged
      const auto& m = it->second;
      std::uint64_t carry = 0;
      for (std::size_t w = 0; w < words_; ++w) {
        const std::uint64_t old = v[w];
        const std::uint64_t u = old & m[w];
        const std::uint64_t t = old + carry;
        const std::uint64_t c1 = t < carry ? 1 : 0;
        const std::uint64_t s = t + u;
        const std::uint64_t c2 = s < u ? 1 : 0;
        carry = c1 | c2;
        v[w] = s | (old & ~m[w]);
      }
    }
    std::size_t zeros = 0;
    for (std::size_t w = 0; w < words_; ++w) {
      std::uint64_t word = ~v[w];
      const std::size_t bits_here = std::min<std::size_t>(64, length_ - w * 64);
      if (bits_here < 64) word &= (std::uint64_t{1} << bits_here) - 1;
      zeros += static_cast<std::size_t>(std::popcount(word));
    }
    return zeros;
  }

 private:
  std::size_t words_;
  std::size_t length_ = 0;
  std::unordered_map<std::uint32_t, std::vector<std::uint64_t>> masks_;
};

double f1_from_lcs(std::size_t lcs, std::size_t m, std::size_t n) {
  if (lcs == 0 || m == 0 || n == 0) return 0.0;
  const double p = static_cast<double>(lcs) / static_cast<double>(m);
  const double r = static_cast<double>(lcs) / static_cast<double>(n);
  return 2.0 * p * r / (p + r);
}

void require_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw PreconditionError("ROUGE-L threshold must lie in (0, 1], got " +
                            std::to_string(threshold));
  }
}

}  // namespace

TokenSequence TokenSequence::from_text(std::string_view text) {
  TokenSequence seq;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) seq.tokens.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_ascii_space(c) || is_ascii_punct(c)) {
      flush();
    } else if (c >= 'A' && c <= 'Z') {
      current.push_back(static_cast<char>(c - 'A' + 'a'));
    } else {
      current.push_back(ch);
    }
  }
  flush();
  return seq;
}

std::size_t lcs_length(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
  // Mask the shorter side: fewer words per step.
  if (a.size() > b.size()) std::swap(a, b);
  return MatchMasks(a).lcs_with(b);
}

double rouge_l(const TokenSequence& candidate, const TokenSequence& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  std::map<std::string_view, std::uint32_t> ids;
  auto to_ids = [&](const TokenSequence& seq) {
    std::vector<std::uint32_t> out;
    out.reserve(seq.size());
    for (const auto& tok : seq.tokens) {
      out.push_back(ids.emplace(tok, static_cast<std::uint32_t>(ids.size())).first->second);
    }
    return out;
  };
  const auto a = to_ids(candidate);
  const auto b = to_ids(reference);
  return f1_from_lcs(lcs_length(a, b), a.size(), b.size());
}

double rouge_l(std::string_view candidate, std::string_view reference) {
  return rouge_l(TokenSequence::from_text(candidate), TokenSequence::from_text(reference));
}

DiversityIndex::DiversityIndex(std::span<const std::string> texts) {
  entries_.reserve(texts.size());
  for (const auto& t : texts) add(t);
}

std::vector<std::uint32_t> DiversityIndex::intern(const TokenSequence& seq) {
  std::vector<std::uint32_t> out;
  out.reserve(seq.size());
  for (const auto& tok : seq.tokens) {
    auto [it, inserted] = vocab_.emplace(tok, static_cast<std::uint32_t>(vocab_.size()));
    if (inserted) postings_.emplace_back();
    out.push_back(it->second);
  }
  return out;
}

std::vector<std::uint32_t> DiversityIndex::lookup(const TokenSequence& seq) const {
  std::vector<std::uint32_t> out;
  out.reserve(seq.size());
  for (const auto& tok : seq.tokens) {
    auto it = vocab_.find(tok);
    out.push_back(it == vocab_.end() ? kUnknownToken : it->second);
  }
  return out;
}

void DiversityIndex::add(std::string_view text) {
  auto ids = intern(TokenSequence::from_text(text));
  const auto entry = static_cast<std::uint32_t>(entries_.size());
  std::map<std::uint32_t, std::uint32_t> counts;
  for (auto id : ids) ++counts[id];
  for (auto [id, count] : counts) postings_[id].emplace_back(entry, count);
  entries_.push_back(std::move(ids));
}

DiversityVerdict DiversityIndex::check(std::string_view candidate, double threshold) const {
  require_threshold(threshold);
  const auto ids = lookup(TokenSequence::from_text(candidate));
  DiversityVerdict verdict;
  if (ids.empty()) return verdict;

  std::map<std::uint32_t, std::uint32_t> counts;
  for (auto id : ids) {
    if (id != kUnknownToken) ++counts[id];
  }
  // Shared-token multiset size bounds the LCS from above.
  std::vector<std::uint32_t> shared(entries_.size(), 0);
  std::vector<std::uint32_t> touched;
  for (auto [id, count] : counts) {
    for (auto [entry, entry_count] : postings_[id]) {
      if (shared[entry] == 0) touched.push_back(entry);
      shared[entry] += std::min(count, entry_count);
    }
  }
  std::sort(touched.begin(), touched.end());

  const MatchMasks masks(ids);
  for (auto entry : touched) {
    const std::size_t n = entries_[entry].size();
    const double bound = f1_from_lcs(shared[entry], ids.size(), n);
    if (bound <= verdict.max_score) continue;
    const double score = f1_from_lcs(masks.lcs_with(entries_[entry]), ids.size(), n);
    verdict.max_score = std::max(verdict.max_score, score);
    if (score >= threshold) {
      verdict.valid = false;
      return verdict;
    }
  }
  return verdict;
}

DiversityVerdict diversity_check(std::string_view candidate, std::span<const std::string> pool_texts,
                                 double threshold) {
  require_threshold(threshold);
  return DiversityIndex(pool_texts).check(candidate, threshold);
}

}  // namespace akd
