#pragma once

// Stack-instruction tags for nested and crossing mention spans.
//
// Every token carries one tag: the stack size before the token, followed by
// POP(k) instructions closing mentions that end here (k counts from the top
// of the stack), PUSH instructions opening mentions that start here, and
// POP instructions closing the single-token mentions just pushed.
//
// Text form: `<depth>:` then comma-separated `PUSH` / `POP<k>`, e.g.
// `1:PUSH,POP1`. The empty tag at depth 0 is `0:`.

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "corpipe/document.hpp"
#include "corpipe/errors.hpp"

namespace corpipe::codec {

// Inclusive token range within a sentence, 0-based.
struct Span {
  int start = 0;
  int end = 0;
  auto operator<=>(const Span&) const = default;
};

struct Instruction {
  enum class Kind { kPush, kPop };
  Kind kind = Kind::kPush;
  int pop_index = 0;  // 1 = top of the stack; 0 for PUSH

  static Instruction push() { return {Kind::kPush, 0}; }
  static Instruction pop(int k) { return {Kind::kPop, k}; }
  bool is_pop() const { return kind == Kind::kPop; }
  auto operator<=>(const Instruction&) const = default;
};

struct Tag {
  int depth_before = 0;
  std::vector<Instruction> instructions;

  int depth_after() const {
    int d = depth_before;
    for (const auto& i : instructions) d += i.is_pop() ? -1 : 1;
    return d;
  }
  bool empty() const { return instructions.empty(); }

  std::string str() const {
    std::string out = std::to_string(depth_before) + ":";
    for (std::size_t i = 0; i < instructions.size(); ++i) {
      if (i) out += ',';
      out += instructions[i].is_pop() ? "POP" + std::to_string(instructions[i].pop_index) : "PUSH";
    }
    return out;
  }

  static Tag parse(std::string_view text) {
    auto colon = text.find(':');
    Tag tag;
    auto bad = [&]() { return CodecError(-1, "malformed tag '" + std::string(text) + "'"); };
    if (colon == std::string_view::npos) throw bad();
    auto [p, ec] = std::from_chars(text.data(), text.data() + colon, tag.depth_before);
    if (ec != std::errc() || p != text.data() + colon || tag.depth_before < 0) throw bad();
    std::string_view rest = text.substr(colon + 1);
    while (!rest.empty()) {
      auto comma = rest.find(',');
      std::string_view item = rest.substr(0, comma);
      if (item == "PUSH") {
        tag.instructions.push_back(Instruction::push());
      } else if (item.size() > 3 && item.substr(0, 3) == "POP") {
        int k = 0;
        auto [q, e2] = std::from_chars(item.data() + 3, item.data() + item.size(), k);
        if (e2 != std::errc() || q != item.data() + item.size() || k < 1) throw bad();
        tag.instructions.push_back(Instruction::pop(k));
      } else {
        throw bad();
      }
      if (comma == std::string_view::npos) break;
      rest = rest.substr(comma + 1);
      if (rest.empty()) throw bad();
    }
    return tag;
  }

  // POP* PUSH* POP*, never popping below an empty stack.
  bool well_formed() const {
    int phase = 0;  // 0 leading pops, 1 pushes, 2 trailing pops
    int depth = depth_before;
    for (const auto& i : instructions) {
      if (i.is_pop()) {
        if (phase == 1) phase = 2;
        if (i.pop_index < 1 || i.pop_index > depth) return false;
        --depth;
      } else {
        if (phase == 2) return false;
        phase = 1;
        ++depth;
      }
    }
    return depth_before >= 0;
  }

  auto operator<=>(const Tag&) const = default;
};

// Encodes a sentence's span set in canonical form. At every token: close the
// mentions ending here, most recently opened first; open the mentions
// starting here, longest first; close the single-token mention, if any.
// Duplicate spans cannot be represented and raise CodecError.
inline std::vector<Tag> encode_mentions(int sentence_length, std::vector<Span> spans) {
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const auto& s = spans[i];
    if (s.start < 0 || s.start > s.end || s.end >= sentence_length)
      throw CodecError(s.start, "span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                                    "] outside a sentence of length " + std::to_string(sentence_length));
    if (i && spans[i - 1] == s)
      throw CodecError(s.start, "duplicate span [" + std::to_string(s.start) + "," + std::to_string(s.end) + "]");
  }
  std::vector<Tag> tags(sentence_length);
  std::vector<Span> stack;  // bottom .. top
  std::size_t next = 0;
  for (int t = 0; t < sentence_length; ++t) {
    Tag& tag = tags[t];
    tag.depth_before = static_cast<int>(stack.size());
    for (int i = static_cast<int>(stack.size()) - 1; i >= 0; --i) {
      if (stack[i].end != t) continue;
      tag.instructions.push_back(Instruction::pop(static_cast<int>(stack.size()) - i));
      stack.erase(stack.begin() + i);
    }
    std::vector<Span> starting;
    while (next < spans.size() && spans[next].start == t) starting.push_back(spans[next++]);
    std::sort(starting.begin(), starting.end(), [](const Span& a, const Span& b) { return a.end > b.end; });
    int singles = 0;
    for (const auto& s : starting) {
      tag.instructions.push_back(Instruction::push());
      if (s.end == t)
        ++singles;
      else
        stack.push_back(s);
    }
    for (int i = 0; i < singles; ++i) tag.instructions.push_back(Instruction::pop(1));
  }
  return tags;
}

struct DecodeResult {
  std::vector<Span> spans;  // sorted
  int discarded_open = 0;   // mentions still open at the end of the sequence
};

// Replays the tags on a stack. Each tag's depth must match the live stack.
inline DecodeResult decode_tags(std::span<const Tag> tags) {
  DecodeResult out;
  std::vector<int> stack;  // start positions, bottom .. top
  for (int t = 0; t < static_cast<int>(tags.size()); ++t) {
    const Tag& tag = tags[t];
    if (tag.depth_before != static_cast<int>(stack.size()))
      throw CodecError(t, "tag " + tag.str() + " expects depth " + std::to_string(tag.depth_before) +
                              " but the stack holds " + std::to_string(stack.size()));
    for (const auto& ins : tag.instructions) {
      if (!ins.is_pop()) {
        stack.push_back(t);
        continue;
      }
      if (ins.pop_index < 1 || ins.pop_index > static_cast<int>(stack.size()))
        throw CodecError(t, "POP" + std::to_string(ins.pop_index) + " on a stack of " +
                                std::to_string(stack.size()));
      auto it = stack.end() - ins.pop_index;
      out.spans.push_back({*it, t});
      stack.erase(it);
    }
  }
  out.discarded_open = static_cast<int>(stack.size());
  std::sort(out.spans.begin(), out.spans.end());
  return out;
}

// Largest run of consecutive positions containing the head.
inline Mention reduce_discontinuous(const Mention& m) {
  const auto& pos = m.token_positions;
  auto head = std::find(pos.begin(), pos.end(), m.head_position);
  if (head == pos.end()) return m;
  auto lo = head, hi = head;
  while (lo != pos.begin() && *(lo - 1) == *lo - 1) --lo;
  while (hi + 1 != pos.end() && *(hi + 1) == *hi + 1) ++hi;
  Mention out = m;
  out.token_positions.assign(lo, hi + 1);
  return out;
}

inline Mention reduce_to_head(const Mention& m) {
  Mention out = m;
  out.token_positions = {m.head_position};
  return out;
}

// Removes repeated spans, keeping the first occurrence; returns how many
// were dropped.
inline int drop_duplicate_spans(std::vector<Span>& spans) {
  std::vector<Span> seen;
  std::vector<Span> kept;
  for (const auto& s : spans) {
    if (std::find(seen.begin(), seen.end(), s) != seen.end()) continue;
    seen.push_back(s);
    kept.push_back(s);
  }
  int dropped = static_cast<int>(spans.size() - kept.size());
  spans = std::move(kept);
  return dropped;
}

class TagVocabulary {
 public:
  TagVocabulary() { rebuild({Tag{}}); }

  // All observed tags plus the empty tag at every depth up to the deepest
  // observed depth_before. Indices follow (depth_before, text) order.
  static TagVocabulary build(const std::vector<std::vector<Tag>>& corpus) {
    std::vector<Tag> tags;
    for (const auto& seq : corpus) tags.insert(tags.end(), seq.begin(), seq.end());
    TagVocabulary v;
    v.rebuild(std::move(tags));
    return v;
  }

  static TagVocabulary from_strings(const std::vector<std::string>& items) {
    std::vector<Tag> tags;
    for (const auto& s : items) tags.push_back(Tag::parse(s));
    TagVocabulary v;
    v.rebuild(std::move(tags));
    return v;
  }

  int size() const { return static_cast<int>(tags_.size()); }
  int max_depth() const { return max_depth_; }
  const Tag& tag(int index) const { return tags_.at(index); }
  const std::vector<Tag>& tags() const { return tags_; }

  std::optional<int> index_of(const Tag& t) const {
    auto it = index_.find(t.str());
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  int empty_tag(int depth) const { return index_.at(std::to_string(depth) + ":"); }

  // a may be followed by b iff a leaves the stack at the depth b expects.
  bool compatible(int a, int b) const { return tags_[a].depth_after() == tags_[b].depth_before; }
  bool can_start(int a) const { return tags_[a].depth_before == 0; }
  bool can_end(int a) const { return tags_[a].depth_after() == 0; }

  std::vector<std::string> strings() const {
    std::vector<std::string> out;
    for (const auto& t : tags_) out.push_back(t.str());
    return out;
  }

 private:
  void rebuild(std::vector<Tag> tags) {
    max_depth_ = 0;
    for (const auto& t : tags) max_depth_ = std::max(max_depth_, t.depth_before);
    for (int d = 0; d <= max_depth_; ++d) tags.push_back(Tag{d, {}});
    std::map<std::pair<int, std::string>, Tag> ordered;
    for (auto& t : tags) ordered.emplace(std::make_pair(t.depth_before, t.str()), t);
    tags_.clear();
    index_.clear();
    for (auto& [key, t] : ordered) {
      index_[key.second] = static_cast<int>(tags_.size());
      tags_.push_back(t);
    }
  }

  std::vector<Tag> tags_;
  std::map<std::string, int> index_;
  int max_depth_ = 0;
};

}  // namespace corpipe::codec
