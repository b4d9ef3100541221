#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hbsim/block_manager.hpp"

namespace hbsim {

// Baseline: every request reserves a full context window inside one fixed
// PE group (first fit). Used tokens grow inside the reservation.
class CoarseAllocator {
 public:
  struct Group {
    std::vector<int> pes;
    std::uint64_t capacity = 0;  // tokens
    std::uint64_t reserved = 0;
    std::uint64_t used = 0;
  };

  CoarseAllocator(std::vector<std::vector<int>> groups, std::uint64_t tokens_per_pe, std::uint64_t window)
      : window_(window) {
    if (groups.empty()) throw std::invalid_argument("coarse: need at least one group");
    if (window == 0) throw std::invalid_argument("coarse: window must be > 0");
    for (auto& g : groups) {
      if (g.empty()) throw std::invalid_argument("coarse: empty group");
      Group grp;
      grp.capacity = tokens_per_pe * g.size();
      grp.pes = std::move(g);
      groups_.push_back(std::move(grp));
    }
  }

  // Groups of `group_size` consecutive PE indices on an m x m mesh.
  static std::vector<std::vector<int>> contiguous_groups(int m, int group_size) {
    const int n = m * m;
    if (group_size < 1 || n % group_size != 0) throw std::invalid_argument("coarse: group size must divide PE count");
    std::vector<std::vector<int>> g(n / group_size);
    for (int i = 0; i < n; ++i) g[i / group_size].push_back(i);
    return g;
  }

  const std::vector<Group>& groups() const { return groups_; }
  std::uint64_t window() const { return window_; }
  bool contains(RequestId id) const { return owner_.count(id) != 0; }

  // Group index, or nullopt when no single group has a free window.
  std::optional<int> allocate(RequestId id, std::uint64_t tokens) {
    if (owner_.count(id)) throw std::invalid_argument("coarse: duplicate request id " + std::to_string(id));
    if (tokens == 0 || tokens > window_) throw std::invalid_argument("coarse: request length outside window");
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      auto& grp = groups_[g];
      if (grp.capacity - grp.reserved >= window_) {
        grp.reserved += window_;
        grp.used += tokens;
        owner_[id] = {static_cast<int>(g), tokens};
        return static_cast<int>(g);
      }
    }
    return std::nullopt;
  }

  bool grow(RequestId id, std::uint64_t tokens = 1) {
    auto it = owner_.find(id);
    if (it == owner_.end()) throw std::invalid_argument("coarse: unknown request " + std::to_string(id));
    if (it->second.tokens + tokens > window_) return false;
    it->second.tokens += tokens;
    groups_[it->second.group].used += tokens;
    return true;
  }

  void free(RequestId id) {
    auto it = owner_.find(id);
    if (it == owner_.end()) throw std::invalid_argument("coarse: unknown request " + std::to_string(id));
    auto& grp = groups_[it->second.group];
    grp.reserved -= window_;
    grp.used -= it->second.tokens;
    owner_.erase(it);
  }

  int group_of(RequestId id) const { return owner_.at(id).group; }

  std::uint64_t reserved() const {
    std::uint64_t r = 0;
    for (const auto& g : groups_) r += g.reserved;
    return r;
  }
  std::uint64_t used() const {
    std::uint64_t u = 0;
    for (const auto& g : groups_) u += g.used;
    return u;
  }
  std::uint64_t capacity() const {
    std::uint64_t c = 0;
    for (const auto& g : groups_) c += g.capacity;
    return c;
  }

  std::vector<std::uint64_t> used_per_group() const {
    std::vector<std::uint64_t> u;
    for (const auto& g : groups_) u.push_back(g.used);
    return u;
  }

 private:
  struct Owner {
    int group = 0;
    std::uint64_t tokens = 0;
  };
  std::vector<Group> groups_;
  std::map<RequestId, Owner> owner_;
  std::uint64_t window_;
};

}  // namespace hbsim
