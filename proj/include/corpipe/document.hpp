#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace corpipe {

// One CoNLL-U line of a sentence: a regular word or an empty node ("n.k").
struct Token {
  std::string form;
  int word_index = 0;                // n of "n" or "n.k"
  std::optional<int> empty_index;    // k of "n.k"
  std::string lemma;
  std::optional<int> head;           // syntactic parent word_index, 0 = root
  bool is_empty = false;
  // Text fed to the model. Equals `form` for regular tokens; empty nodes get
  // theirs from surface_empty_nodes().
  std::string surfaced_form;

  // UPOS, XPOS, FEATS, DEPREL, DEPS, kept verbatim.
  std::array<std::string, 5> columns{"_", "_", "_", "_", "_"};
  // MISC with the Entity attribute removed ("_" when nothing is left).
  std::string misc = "_";
  // Index of the Entity attribute inside MISC, -1 if the token had none.
  int entity_slot = -1;
  // Multiword-token range lines ("3-4 ...") printed right before this token.
  std::vector<std::string> preceding_lines;

  bool operator==(const Token&) const = default;
};

struct Sentence {
  std::string sentence_id;
  std::vector<std::string> comments;  // every comment except sent_id
  std::vector<Token> tokens;

  bool operator==(const Sentence&) const = default;
};

// A (possibly discontinuous) mention over document-global token positions.
// Positions count every token line of the document, empty nodes included,
// starting at 0.
struct Mention {
  std::vector<int> token_positions;
  int head_position = -1;
  std::string attributes;  // trailing opaque fields of the bracket ("new-coref" ...)

  int first() const { return token_positions.front(); }
  int last() const { return token_positions.back(); }
  bool is_continuous() const {
    return token_positions.back() - token_positions.front() + 1 ==
           static_cast<int>(token_positions.size());
  }
  bool operator==(const Mention&) const = default;
};

inline bool mention_order(const Mention& a, const Mention& b) {
  if (a.first() != b.first()) return a.first() < b.first();
  if (a.last() != b.last()) return a.last() < b.last();
  return a.token_positions < b.token_positions;
}

struct Entity {
  std::string entity_id;
  std::string entity_type;
  std::vector<Mention> mentions;

  bool operator==(const Entity&) const = default;
};

struct Document {
  std::string doc_id;
  std::string corpus_id;
  std::vector<std::string> comments;  // document-level comments (global.*)
  std::vector<Sentence> sentences;
  std::vector<Entity> entities;

  bool operator==(const Document&) const = default;

  std::size_t token_count() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.tokens.size();
    return n;
  }
};

// Global position of the first token of every sentence, plus a final entry
// holding the total token count.
inline std::vector<int> sentence_starts(const Document& doc) {
  std::vector<int> starts;
  starts.reserve(doc.sentences.size() + 1);
  int pos = 0;
  for (const auto& s : doc.sentences) {
    starts.push_back(pos);
    pos += static_cast<int>(s.tokens.size());
  }
  starts.push_back(pos);
  return starts;
}

// Index of the sentence containing global position `pos`.
inline int sentence_of(const std::vector<int>& starts, int pos) {
  auto it = std::upper_bound(starts.begin(), starts.end() - 1, pos);
  return static_cast<int>(it - starts.begin()) - 1;
}

inline std::vector<const Token*> flat_tokens(const Document& doc) {
  std::vector<const Token*> out;
  out.reserve(doc.token_count());
  for (const auto& s : doc.sentences)
    for (const auto& t : s.tokens) out.push_back(&t);
  return out;
}

// Syntactic parent of every token as a global position; -1 for the root,
// for empty nodes and for heads that cannot be resolved.
inline std::vector<int> parent_positions(const Document& doc) {
  std::vector<int> parents;
  parents.reserve(doc.token_count());
  int base = 0;
  for (const auto& s : doc.sentences) {
    std::vector<int> word_pos(s.tokens.size() + 1, -1);
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      const auto& t = s.tokens[i];
      if (!t.is_empty && t.word_index >= 0 && t.word_index < static_cast<int>(word_pos.size()))
        word_pos[t.word_index] = base + static_cast<int>(i);
    }
    for (const auto& t : s.tokens) {
      int p = -1;
      if (!t.is_empty && t.head && *t.head > 0 && *t.head < static_cast<int>(word_pos.size()))
        p = word_pos[*t.head];
      parents.push_back(p);
    }
    base += static_cast<int>(s.tokens.size());
  }
  return parents;
}

}  // namespace corpipe
