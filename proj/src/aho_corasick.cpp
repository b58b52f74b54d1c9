#include "snf/aho_corasick.hpp"

#include <deque>
#include <stdexcept>

namespace snf {

AcAutomaton AcAutomaton::build(const std::vector<std::string>& patterns) {
  if (patterns.empty()) throw std::invalid_argument("no patterns");
  AcAutomaton ac;
  ac.patterns_ = patterns;

  // Trie with explicit child table; node 0 is the root.
  struct TrieNode {
    std::int64_t child[256];
    TrieNode() { for (auto& c : child) c = -1; }
  };
  std::deque<TrieNode> trie(1);
  std::vector<std::vector<std::uint32_t>> out(1);
  for (std::uint32_t pi = 0; pi < patterns.size(); ++pi) {
    const std::string& p = patterns[pi];
    if (p.empty()) throw std::invalid_argument("empty pattern");
    std::size_t node = 0;
    for (unsigned char c : p) {
      if (trie[node].child[c] < 0) {
        trie[node].child[c] = static_cast<std::int64_t>(trie.size());
        trie.emplace_back();
        out.emplace_back();
      }
      node = static_cast<std::size_t>(trie[node].child[c]);
    }
    out[node].push_back(pi);
  }

  // BFS fail links, flattening goto into a dense next table and merging
  // output sets down the fail chain.
  std::size_t n = trie.size();
  std::vector<std::uint32_t> fail(n, 0);
  ac.next_.assign(n * 256, 0);
  std::deque<std::uint32_t> q;
  for (int c = 0; c < 256; ++c) {
    std::int64_t ch = trie[0].child[c];
    if (ch >= 0) {
      ac.next_[c] = static_cast<std::uint32_t>(ch);
      q.push_back(static_cast<std::uint32_t>(ch));
    }
  }
  while (!q.empty()) {
    std::uint32_t u = q.front();
    q.pop_front();
    for (std::uint32_t pi : out[fail[u]]) out[u].push_back(pi);
    for (int c = 0; c < 256; ++c) {
      std::int64_t ch = trie[u].child[c];
      if (ch >= 0) {
        fail[static_cast<std::size_t>(ch)] = ac.next_[fail[u] * 256 + c];
        ac.next_[u * 256 + c] = static_cast<std::uint32_t>(ch);
        q.push_back(static_cast<std::uint32_t>(ch));
      } else {
        ac.next_[u * 256 + c] = ac.next_[fail[u] * 256 + c];
      }
    }
  }
  ac.out_ = std::move(out);
  return ac;
}

std::uint32_t AcAutomaton::scan(std::uint32_t node, const std::uint8_t* data,
                                std::size_t len, std::uint64_t base,
                                std::vector<Match>& out) const {
  for (std::size_t i = 0; i < len; ++i) {
    node = step(node, data[i]);
    for (std::uint32_t pi : out_[node]) out.push_back({pi, base + i + 1});
  }
  return node;
}

}  // namespace snf
