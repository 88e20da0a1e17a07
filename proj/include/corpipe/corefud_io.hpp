#pragma once

// CorefUD flavoured CoNLL-U reading and writing.
//
// Coreference lives in the MISC column as `Entity=` followed by brackets:
//   (eid-type-head-rest   opens a mention of entity `eid`
//   eid)                  closes the most recently opened mention of `eid`
//   (eid-type-head-rest)  single-token mention
// A discontinuous mention is written as parts `eid[k/n]`, each part opened
// and closed separately. `head` is the 1-based index of the head token
// within the mention; type, head and rest are optional. See docs/formats.md.

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "corpipe/document.hpp"
#include "corpipe/errors.hpp"
#include "corpipe/scorer.hpp"

namespace corpipe::io {

// U+2205 EMPTY SET, prepended to the surfaced form of every empty node.
inline constexpr std::string_view kDefaultEmptyMarker = "\xE2\x88\x85";

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t begin = 0;
  while (true) {
    std::size_t end = s.find(sep, begin);
    if (end == std::string_view::npos) {
      out.push_back(s.substr(begin));
      return out;
    }
    out.push_back(s.substr(begin, end - begin));
    begin = end + 1;
  }
}

inline bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// One bracket of an Entity attribute value.
struct Bracket {
  enum Kind { kOpen, kClose, kSingle } kind;
  std::string eid;
  int part = 0;   // 0 for continuous mentions
  int total = 0;
  std::vector<std::string> fields;  // type, head, rest... (openings only)
};

inline void split_part(std::string_view id, std::string& eid, int& part, int& total) {
  part = total = 0;
  auto lb = id.find('[');
  if (lb == std::string_view::npos || id.back() != ']') {
    eid = std::string(id);
    return;
  }
  eid = std::string(id.substr(0, lb));
  auto inner = id.substr(lb + 1, id.size() - lb - 2);
  auto slash = inner.find('/');
  if (slash == std::string_view::npos || !parse_int(inner.substr(0, slash), part) ||
      !parse_int(inner.substr(slash + 1), total) || part < 1 || part > total)
    throw AnnotationError(eid, "malformed discontinuous part '" + std::string(id) + "'");
}

inline std::vector<Bracket> parse_entity_value(std::string_view value) {
  std::vector<Bracket> out;
  std::size_t i = 0;
  while (i < value.size()) {
    Bracket b;
    std::string_view content;
    if (value[i] == '(') {
      std::size_t j = value.find_first_of("()", i + 1);
      if (j == std::string_view::npos) j = value.size();
      content = value.substr(i + 1, j - i - 1);
      if (j < value.size() && value[j] == ')') {
        b.kind = Bracket::kSingle;
        i = j + 1;
      } else {
        b.kind = Bracket::kOpen;
        i = j;
      }
      auto fields = split(content, '-');
      split_part(fields[0], b.eid, b.part, b.total);
      for (std::size_t f = 1; f < fields.size(); ++f) b.fields.emplace_back(fields[f]);
    } else {
      std::size_t j = value.find(')', i);
      if (j == std::string_view::npos || value.substr(i, j - i).find('(') != std::string_view::npos)
        throw AnnotationError(std::string(value.substr(i)), "closing bracket without ')'");
      content = value.substr(i, j - i);
      b.kind = Bracket::kClose;
      split_part(content, b.eid, b.part, b.total);
      i = j + 1;
    }
    if (b.eid.empty()) throw AnnotationError("", "empty entity id in '" + std::string(value) + "'");
    out.push_back(std::move(b));
  }
  return out;
}

// Mention under construction while scanning a sentence.
struct Pending {
  std::string eid;
  std::vector<std::string> fields;
  int total = 0;
  int parts_closed = 0;
  bool part_open = false;
  int open_start = -1;
  std::vector<int> positions;
};

}  // namespace detail

// Puts entities and mentions into canonical order and keeps the Entity
// slot bookkeeping consistent with the annotation, so that
// parse_document(serialize_document(doc)) == doc.
inline void canonicalize(Document& doc) {
  for (auto& e : doc.entities) std::sort(e.mentions.begin(), e.mentions.end(), mention_order);
  doc.entities.erase(std::remove_if(doc.entities.begin(), doc.entities.end(),
                                    [](const Entity& e) { return e.mentions.empty(); }),
                     doc.entities.end());
  std::stable_sort(doc.entities.begin(), doc.entities.end(), [](const Entity& a, const Entity& b) {
    if (a.mentions.front().token_positions != b.mentions.front().token_positions)
      return mention_order(a.mentions.front(), b.mentions.front());
    return a.entity_id < b.entity_id;
  });
  std::vector<char> annotated(doc.token_count(), 0);
  for (const auto& e : doc.entities)
    for (const auto& m : e.mentions)
      for (int p : m.token_positions)
        if (p >= 0 && p < static_cast<int>(annotated.size())) {
          // only run boundaries carry brackets
          bool starts = p == m.first() ||
                        !std::binary_search(m.token_positions.begin(), m.token_positions.end(), p - 1);
          bool ends = p == m.last() ||
                      !std::binary_search(m.token_positions.begin(), m.token_positions.end(), p + 1);
          if (starts || ends) annotated[p] = 1;
        }
  std::size_t pos = 0;
  for (auto& s : doc.sentences)
    for (auto& t : s.tokens) {
      int n_misc = t.misc == "_" ? 0 : static_cast<int>(detail::split(t.misc, '|').size());
      if (annotated[pos++])
        t.entity_slot = t.entity_slot >= 0 ? std::min(t.entity_slot, n_misc) : n_misc;
      else
        t.entity_slot = -1;
    }
}

// Parses one document. Lines `# newdoc id = X` set the document id; other
// `# global.*` / `# newdoc` comments are kept at document level.
inline Document parse_document(std::string_view text, std::string corpus_id = {}) {
  Document doc;
  doc.corpus_id = std::move(corpus_id);

  Sentence current;
  bool in_sentence = false;
  std::size_t line_no = 0;
  int global_pos = 0;

  std::map<std::string, std::vector<Entity>::size_type> entity_index;
  std::vector<detail::Pending> pending;
  std::vector<std::size_t> pending_open;  // indices into `pending` with an open part
  std::vector<std::string> pending_lines;

  auto add_mention = [&](detail::Pending& p) {
    Mention m;
    std::sort(p.positions.begin(), p.positions.end());
    p.positions.erase(std::unique(p.positions.begin(), p.positions.end()), p.positions.end());
    m.token_positions = p.positions;
    std::string type = p.fields.size() > 0 ? p.fields[0] : "";
    if (p.fields.size() > 1 && !p.fields[1].empty()) {
      int head = 0;
      if (!detail::parse_int(p.fields[1], head) || head < 1 ||
          head > static_cast<int>(m.token_positions.size()))
        throw AnnotationError(p.eid, "head index '" + p.fields[1] + "' outside the mention");
      m.head_position = m.token_positions[head - 1];
    }
    std::vector<std::string> rest(p.fields.size() > 2 ? p.fields.begin() + 2 : p.fields.end(),
                                  p.fields.end());
    m.attributes = detail::join(rest, '-');
    auto [it, inserted] = entity_index.emplace(p.eid, doc.entities.size());
    if (inserted) doc.entities.push_back(Entity{p.eid, type, {}});
    auto& ent = doc.entities[it->second];
    if (ent.entity_type.empty()) ent.entity_type = type;
    ent.mentions.push_back(std::move(m));
  };

  auto finish_sentence = [&]() {
    if (!in_sentence) return;
    if (current.tokens.empty()) throw ParseError(line_no, "sentence without tokens");
    int expected = 1;
    for (const auto& t : current.tokens) {
      if (t.is_empty) continue;
      if (t.word_index != expected)
        throw ParseError(line_no, "word ids must be consecutive; expected " + std::to_string(expected) +
                                      " got " + std::to_string(t.word_index));
      ++expected;
    }
    int n_words = expected - 1;
    for (const auto& t : current.tokens)
      if (t.head && (*t.head < 0 || *t.head > n_words))
        throw ParseError(line_no, "head " + std::to_string(*t.head) + " outside sentence " +
                                      current.sentence_id);
    for (const auto& p : pending)
      if (p.parts_closed < std::max(p.total, 1) || p.part_open)
        throw AnnotationError(p.eid, "mention not closed before the end of sentence '" +
                                         current.sentence_id + "'");
    if (!pending_lines.empty()) throw ParseError(line_no, "multiword token line without a word");
    pending.clear();
    pending_open.clear();
    doc.sentences.push_back(std::move(current));
    current = Sentence{};
    in_sentence = false;
  };

  std::size_t begin = 0;
  while (begin <= text.size()) {
    std::size_t end = text.find('\n', begin);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(begin, end - begin);
    bool last_line = end == text.size();
    begin = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (line.empty()) {
      finish_sentence();
      if (last_line) break;
      continue;
    }
    if (line.front() == '#') {
      if (!in_sentence && doc.sentences.empty() && current.comments.empty() && current.sentence_id.empty()) {
        if (line.rfind("# newdoc id = ", 0) == 0) {
          doc.doc_id = std::string(line.substr(14));
          if (last_line) break;
          continue;
        }
        if (line.rfind("# newdoc", 0) == 0 || line.rfind("# global.", 0) == 0) {
          doc.comments.emplace_back(line);
          if (last_line) break;
          continue;
        }
      }
      in_sentence = true;
      if (line.rfind("# sent_id = ", 0) == 0)
        current.sentence_id = std::string(line.substr(12));
      else
        current.comments.emplace_back(line);
      if (last_line) break;
      continue;
    }

    in_sentence = true;
    auto cols = detail::split(line, '\t');
    if (cols.size() != 10)
      throw ParseError(line_no, "expected 10 tab-separated columns, found " + std::to_string(cols.size()));
    std::string_view id = cols[0];
    if (id.find('-') != std::string_view::npos) {
      pending_lines.emplace_back(line);
      if (last_line) break;
      continue;
    }

    Token tok;
    auto dot = id.find('.');
    if (dot != std::string_view::npos) {
      int k = 0;
      if (!detail::parse_int(id.substr(0, dot), tok.word_index) || !detail::parse_int(id.substr(dot + 1), k) ||
          k < 1 || tok.word_index < 0)
        throw ParseError(line_no, "malformed empty node id '" + std::string(id) + "'");
      tok.empty_index = k;
      tok.is_empty = true;
    } else if (!detail::parse_int(id, tok.word_index) || tok.word_index < 1) {
      throw ParseError(line_no, "malformed token id '" + std::string(id) + "'");
    }
    tok.form = std::string(cols[1]);
    tok.lemma = std::string(cols[2]);
    tok.columns = {std::string(cols[3]), std::string(cols[4]), std::string(cols[5]),
                   std::string(cols[7]), std::string(cols[8])};
    if (cols[6] != "_") {
      if (tok.is_empty) throw ParseError(line_no, "empty node " + std::string(id) + " must not have a basic head");
      int h = 0;
      if (!detail::parse_int(cols[6], h)) throw ParseError(line_no, "malformed head '" + std::string(cols[6]) + "'");
      tok.head = h;
    }
    if (!tok.is_empty) tok.surfaced_form = tok.form;
    if (!current.tokens.empty()) {
      const auto& prev = current.tokens.back();
      bool ordered = tok.is_empty ? (tok.word_index == prev.word_index &&
                                     tok.empty_index.value() == prev.empty_index.value_or(0) + 1)
                                  : tok.word_index == prev.word_index + 1;
      if (!ordered) throw ParseError(line_no, "token id '" + std::string(id) + "' out of order");
    } else if (tok.is_empty ? (tok.word_index != 0 || *tok.empty_index != 1) : tok.word_index != 1) {
      throw ParseError(line_no, "sentence must start with token 1 or empty node 0.1");
    }

    // MISC: split out the Entity attribute.
    std::vector<std::string> misc_rest;
    std::string_view entity_value;
    bool has_entity = false;
    if (cols[9] != "_") {
      for (auto attr : detail::split(cols[9], '|')) {
        if (attr.rfind("Entity=", 0) == 0) {
          tok.entity_slot = static_cast<int>(misc_rest.size());
          entity_value = attr.substr(7);
          has_entity = true;
        } else {
          misc_rest.emplace_back(attr);
        }
      }
    }
    tok.misc = misc_rest.empty() ? "_" : detail::join(misc_rest, '|');
    tok.preceding_lines = std::move(pending_lines);
    pending_lines.clear();

    if (has_entity) {
      for (auto& b : detail::parse_entity_value(entity_value)) {
        if (b.kind == detail::Bracket::kClose) {
          auto it = std::find_if(pending_open.rbegin(), pending_open.rend(), [&](std::size_t idx) {
            return pending[idx].eid == b.eid && (b.part == 0 || pending[idx].parts_closed + 1 == b.part);
          });
          if (it == pending_open.rend()) throw AnnotationError(b.eid, "closing bracket without opening");
          std::size_t idx = *it;
          pending_open.erase(std::next(it).base());
          auto& p = pending[idx];
          for (int q = p.open_start; q <= global_pos; ++q) p.positions.push_back(q);
          p.part_open = false;
          ++p.parts_closed;
          if (p.parts_closed >= std::max(p.total, 1)) {
            add_mention(p);
            pending.erase(pending.begin() + static_cast<long>(idx));
            for (auto& o : pending_open)
              if (o > idx) --o;
          }
          continue;
        }
        // opening or single
        std::size_t idx = pending.size();
        if (b.part > 1) {
          auto it = std::find_if(pending.rbegin(), pending.rend(), [&](const detail::Pending& p) {
            return p.eid == b.eid && p.total == b.total && !p.part_open && p.parts_closed + 1 == b.part;
          });
          if (it == pending.rend()) throw AnnotationError(b.eid, "discontinuous part without its predecessor");
          idx = static_cast<std::size_t>(pending.rend() - it) - 1;
        } else {
          detail::Pending p;
          p.eid = b.eid;
          p.total = b.total;
          p.fields = b.fields;
          pending.push_back(std::move(p));
        }
        auto& p = pending[idx];
        p.open_start = global_pos;
        if (b.kind == detail::Bracket::kSingle) {
          p.positions.push_back(global_pos);
          ++p.parts_closed;
          if (p.parts_closed >= std::max(p.total, 1)) {
            add_mention(p);
            pending.erase(pending.begin() + static_cast<long>(idx));
            for (auto& o : pending_open)
              if (o > idx) --o;
          }
        } else {
          p.part_open = true;
          pending_open.push_back(idx);
        }
      }
    }
    current.tokens.push_back(std::move(tok));
    ++global_pos;
    if (last_line) break;
  }
  finish_sentence();

  // Heads missing from the annotation come from the dependency tree.
  auto parents = parent_positions(doc);
  for (auto& e : doc.entities)
    for (auto& m : e.mentions)
      if (m.head_position < 0) m.head_position = scorer::head_of_span(m.token_positions, parents);
  canonicalize(doc);
  return doc;
}

// Splits a corpus at `# newdoc` lines. Text before the first such line (or
// the whole text, when there is none) forms a single document.
inline std::vector<Document> parse_corpus(std::string_view text, const std::string& corpus_id = {}) {
  std::vector<std::size_t> starts;
  for (std::size_t pos = 0; pos < text.size();) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    if (text.substr(pos, end - pos).rfind("# newdoc", 0) == 0) starts.push_back(pos);
    pos = end + 1;
  }
  std::vector<Document> docs;
  std::size_t first = starts.empty() ? text.size() : starts.front();
  if (text.substr(0, first).find_first_not_of(" \t\r\n") != std::string_view::npos)
    docs.push_back(parse_document(text.substr(0, first), corpus_id));
  for (std::size_t i = 0; i < starts.size(); ++i) {
    std::size_t e = i + 1 < starts.size() ? starts[i + 1] : text.size();
    docs.push_back(parse_document(text.substr(starts[i], e - starts[i]), corpus_id));
  }
  return docs;
}

namespace detail {

// Maximal runs of consecutive positions, as (first, last) pairs.
inline std::vector<std::pair<int, int>> runs(const std::vector<int>& positions) {
  std::vector<std::pair<int, int>> out;
  for (int p : positions) {
    if (!out.empty() && out.back().second + 1 == p)
      out.back().second = p;
    else
      out.emplace_back(p, p);
  }
  return out;
}

struct BracketEvent {
  int start, end;         // run bounds
  std::size_t order;      // entity order, for determinism
  std::string text;
};

}  // namespace detail

inline std::string serialize_document(const Document& doc) {
  std::size_t n = doc.token_count();
  std::vector<std::vector<detail::BracketEvent>> closes(n), opens(n), singles(n);
  for (std::size_t ei = 0; ei < doc.entities.size(); ++ei) {
    const auto& e = doc.entities[ei];
    for (const auto& m : e.mentions) {
      auto rs = detail::runs(m.token_positions);
      int total = static_cast<int>(rs.size());
      for (int k = 0; k < total; ++k) {
        auto [a, b] = rs[k];
        if (a < 0 || static_cast<std::size_t>(b) >= n)
          throw FormatError("mention of entity " + e.entity_id + " outside the document");
        std::string id = e.entity_id;
        if (total > 1) id += "[" + std::to_string(k + 1) + "/" + std::to_string(total) + "]";
        std::string open = "(" + id;
        if (k == 0) {
          auto hit = std::find(m.token_positions.begin(), m.token_positions.end(), m.head_position);
          std::string head = hit == m.token_positions.end()
                                 ? std::string()
                                 : std::to_string(hit - m.token_positions.begin() + 1);
          open += "-" + e.entity_type + "-" + head;
          if (!m.attributes.empty()) open += "-" + m.attributes;
        }
        if (a == b) {
          singles[a].push_back({a, b, ei, open + ")"});
        } else {
          opens[a].push_back({a, b, ei, open});
          closes[b].push_back({a, b, ei, id + ")"});
        }
      }
    }
  }

  std::ostringstream out;
  if (!doc.doc_id.empty()) out << "# newdoc id = " << doc.doc_id << '\n';
  for (const auto& c : doc.comments) out << c << '\n';
  std::size_t pos = 0;
  for (const auto& s : doc.sentences) {
    if (!s.sentence_id.empty()) out << "# sent_id = " << s.sentence_id << '\n';
    for (const auto& c : s.comments) out << c << '\n';
    for (const auto& t : s.tokens) {
      for (const auto& l : t.preceding_lines) out << l << '\n';
      auto& cl = closes[pos];
      auto& op = opens[pos];
      auto& sg = singles[pos];
      // innermost (latest started) closings first, longest openings first
      std::stable_sort(cl.begin(), cl.end(), [](const auto& x, const auto& y) {
        return x.start != y.start ? x.start > y.start : x.order > y.order;
      });
      std::stable_sort(op.begin(), op.end(), [](const auto& x, const auto& y) {
        return x.end != y.end ? x.end > y.end : x.order < y.order;
      });
      std::string entity;
      for (const auto* group : {&cl, &op, &sg})
        for (const auto& ev : *group) entity += ev.text;

      std::vector<std::string> misc;
      if (t.misc != "_")
        for (auto a : detail::split(t.misc, '|')) misc.emplace_back(a);
      if (!entity.empty()) {
        std::size_t slot = t.entity_slot >= 0 ? std::min<std::size_t>(t.entity_slot, misc.size()) : misc.size();
        misc.insert(misc.begin() + static_cast<long>(slot), "Entity=" + entity);
      }

      if (t.is_empty)
        out << t.word_index << '.' << t.empty_index.value_or(1);
      else
        out << t.word_index;
      out << '\t' << t.form << '\t' << t.lemma << '\t' << t.columns[0] << '\t' << t.columns[1] << '\t'
          << t.columns[2] << '\t' << (t.head ? std::to_string(*t.head) : std::string("_")) << '\t'
          << t.columns[3] << '\t' << t.columns[4] << '\t' << (misc.empty() ? "_" : detail::join(misc, '|'))
          << '\n';
      ++pos;
    }
    out << '\n';
  }
  return out.str();
}

inline std::string serialize_corpus(const std::vector<Document>& docs) {
  std::string out;
  for (const auto& d : docs) out += serialize_document(d);
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
}

inline std::vector<Document> read_corpus_file(const std::string& path, const std::string& corpus_id) {
  return parse_corpus(read_text_file(path), corpus_id);
}

namespace detail {
inline bool is_blank_text(const std::string& s) { return s.empty() || s == "_"; }
}  // namespace detail

// Turns every empty node into an ordinary token at its implied position.
// Regular words are renumbered 1..n over the combined sequence and syntactic
// heads follow the renumbering; mention positions are unchanged because they
// already count empty nodes.
inline Document surface_empty_nodes(const Document& doc, std::string_view marker = kDefaultEmptyMarker) {
  if (marker.empty()) throw ConfigError("empty-node marker must not be empty");
  Document out = doc;
  for (auto& s : out.sentences) {
    bool any_empty = false;
    for (const auto& t : s.tokens) {
      if (!t.is_empty && t.form.find(marker) != std::string::npos)
        throw ConfigError("empty-node marker occurs in regular token '" + t.form + "' of sentence " +
                          s.sentence_id);
      any_empty |= t.is_empty;
    }
    if (!any_empty) continue;
    std::map<int, int> renumber{{0, 0}};
    int next = 1;
    for (const auto& t : s.tokens) {
      if (!t.is_empty) renumber[t.word_index] = next;
      ++next;
    }
    next = 1;
    for (auto& t : s.tokens) {
      if (t.is_empty) {
        const std::string& text = detail::is_blank_text(t.form) ? t.lemma : t.form;
        t.surfaced_form = std::string(marker) + (detail::is_blank_text(text) ? std::string() : text);
        t.form = std::string(marker) + t.form;
        t.is_empty = false;
        t.empty_index.reset();
        t.head.reset();
      } else if (t.head) {
        t.head = renumber.at(*t.head);
      }
      t.word_index = next++;
    }
  }
  return out;
}

// Inverse of surface_empty_nodes: tokens whose form starts with the marker
// become empty nodes "n.k" again.
inline Document restore_empty_nodes(const Document& doc, std::string_view marker = kDefaultEmptyMarker) {
  if (marker.empty()) throw ConfigError("empty-node marker must not be empty");
  Document out = doc;
  for (auto& s : out.sentences) {
    auto is_marked = [&](const Token& t) {
      return !t.is_empty && t.form.compare(0, marker.size(), marker) == 0;
    };
    if (std::none_of(s.tokens.begin(), s.tokens.end(), is_marked)) continue;
    std::map<int, int> renumber{{0, 0}};
    std::vector<char> marked(s.tokens.size());
    int word = 0;
    int k = 0;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      auto& t = s.tokens[i];
      if (t.is_empty) throw FormatError("sentence " + s.sentence_id + " mixes surfaced and empty nodes");
      marked[i] = is_marked(t);
      if (marked[i]) {
        if (t.head)
          throw FormatError("surfaced empty node '" + t.form + "' in sentence " + s.sentence_id +
                            " carries a syntactic head and cannot become an empty node");
        ++k;
      } else {
        ++word;
        k = 0;
        renumber[t.word_index] = word;
      }
    }
    word = 0;
    k = 0;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      auto& t = s.tokens[i];
      if (marked[i]) {
        t.is_empty = true;
        t.word_index = word;
        t.empty_index = ++k;
        t.form.erase(0, marker.size());
        t.surfaced_form.clear();
      } else {
        ++word;
        k = 0;
        t.word_index = word;
        if (t.head) {
          auto it = renumber.find(*t.head);
          if (it == renumber.end())
            throw FormatError("token '" + t.form + "' in sentence " + s.sentence_id +
                              " depends on a surfaced empty node");
          t.head = it->second;
        }
      }
    }
  }
  return out;
}

}  // namespace corpipe::io
