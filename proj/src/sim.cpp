#include "snf/sim.hpp"

#include <stdexcept>
#include <utility>

namespace snf {

std::uint64_t EventQueue::schedule(Us at, Fn fn) {
  if (at < now_) throw std::logic_error("EventQueue: schedule in the past");
  std::uint64_t seq = next_seq_++;
  heap_.push(Ev{at, seq, std::move(fn)});
  return seq;
}

void EventQueue::step() {
  // priority_queue::top is const; move out via const_cast before pop (the
  // moved-from functor is never run again).
  Ev ev = std::move(const_cast<Ev&>(heap_.top()));
  heap_.pop();
  now_ = ev.at;
  ev.fn();
}

std::uint64_t EventQueue::run(std::uint64_t limit) {
  std::uint64_t n = 0;
  while (!heap_.empty() && n < limit) {
    step();
    ++n;
  }
  return n;
}

}  // namespace snf
