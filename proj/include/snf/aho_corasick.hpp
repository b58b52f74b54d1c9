#pragma once
// Aho-Corasick multi-pattern matcher with a resumable cursor, so a scan can
// stop at a packet boundary and continue mid-stream on the next packet.

#include <cstdint>
#include <string>
#include <vector>

#include "snf/core.hpp"

namespace snf {

class AcAutomaton {
 public:
  // Builds goto/fail/output tables; throws std::invalid_argument on an empty
  // pattern or an empty pattern set.
  static AcAutomaton build(const std::vector<std::string>& patterns);

  struct Match {
    std::uint32_t pattern;    // index into patterns()
    std::uint64_t end_offset; // stream offset one past the match's last byte
    bool operator==(const Match&) const = default;
  };

  std::uint32_t root() const { return 0; }
  std::uint32_t step(std::uint32_t node, std::uint8_t byte) const {
    return next_[node * 256 + byte];
  }

  // Feeds `data` starting at stream offset `base`, appending matches; returns
  // the node to resume from.
  std::uint32_t scan(std::uint32_t node, const std::uint8_t* data, std::size_t len,
                     std::uint64_t base, std::vector<Match>& out) const;

  std::size_t node_count() const { return next_.size() / 256; }
  const std::vector<std::string>& patterns() const { return patterns_; }

 private:
  AcAutomaton() = default;
  std::vector<std::uint32_t> next_;            // node*256 + byte -> node
  std::vector<std::vector<std::uint32_t>> out_;  // patterns ending at node
  std::vector<std::string> patterns_;
};

}  // namespace snf
