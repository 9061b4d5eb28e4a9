#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <spdlog/spdlog.h>

#include "rporag/error.hpp"

namespace rporag {

// Interned id, distinct per tag so entity/relation/type ids never mix.
template <class Tag>
struct Id {
    std::uint32_t value = 0;

    friend auto operator<=>(Id, Id) = default;
};

using EntityId = Id<struct EntityTag>;
using RelationId = Id<struct RelationTag>;
using TypeId = Id<struct TypeTag>;

// Relation traversed along (inverse = false) or against (inverse = true) its direction.
struct Hop {
    RelationId relation;
    bool inverse = false;

    friend auto operator<=>(const Hop&, const Hop&) = default;
};

struct Triple {
    EntityId head;
    RelationId relation;
    EntityId tail;

    friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct Edge {
    RelationId relation;
    EntityId target;

    friend auto operator<=>(const Edge&, const Edge&) = default;
};

struct Step {
    Hop hop;
    EntityId target;

    friend auto operator<=>(const Step&, const Step&) = default;
};

// topic -(r1)-> i1 -(r2)-> ... -(rn)-> terminal, with |intermediates| = n - 1.
struct Path {
    EntityId topic;
    std::vector<Hop> relations;
    std::vector<EntityId> intermediates;
    EntityId terminal;

    bool operator==(const Path&) const = default;
};

// Relation sequence first, then intermediates, then terminal.
inline bool path_less(const Path& a, const Path& b) {
    if (a.relations != b.relations) return a.relations < b.relations;
    if (a.topic != b.topic) return a.topic < b.topic;
    if (a.intermediates != b.intermediates) return a.intermediates < b.intermediates;
    return a.terminal < b.terminal;
}

inline constexpr std::string_view kArrow = " \xE2\x86\x92 ";  // " → "
inline constexpr std::string_view kEndRelation = "END";
inline constexpr std::string_view kInverseSuffix = "~inv";
inline constexpr std::size_t kDefaultPathCap = 10'000;

class LabelTable {
public:
    std::uint32_t intern(std::string_view label) {
        auto it = index_.find(std::string(label));
        if (it != index_.end()) return it->second;
        auto id = static_cast<std::uint32_t>(labels_.size());
        labels_.emplace_back(label);
        index_.emplace(labels_.back(), id);
        return id;
    }

    std::optional<std::uint32_t> find(std::string_view label) const {
        auto it = index_.find(std::string(label));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    const std::string& label(std::uint32_t id) const { return labels_.at(id); }
    std::size_t size() const noexcept { return labels_.size(); }

private:
    std::vector<std::string> labels_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

// Triples with out/in adjacency and an entity -> type-set map. Built by the
// loaders (or add_triple), then treated as immutable and shared read-only.
class KnowledgeGraph {
public:
    EntityId add_entity(std::string_view label) {
        if (label.empty()) throw DomainError("entity label must be non-empty");
        EntityId id{entities_.intern(label)};
        if (id.value >= out_.size()) {
            out_.resize(id.value + 1);
            in_.resize(id.value + 1);
            types_.resize(id.value + 1);
        }
        return id;
    }

    RelationId add_relation(std::string_view label) {
        if (label.empty()) throw DomainError("relation label must be non-empty");
        if (label == kEndRelation) throw DomainError("relation label END is reserved");
        if (label.ends_with(kInverseSuffix))
            throw DomainError("relation label may not end with ~inv: " + std::string(label));
        return RelationId{relations_.intern(label)};
    }

    TypeId add_type(std::string_view label) {
        if (label.empty()) throw DomainError("type label must be non-empty");
        return TypeId{types_table_.intern(label)};
    }

    // Returns false if the triple was already present.
    bool add_triple(std::string_view head, std::string_view relation, std::string_view tail) {
        auto r = add_relation(relation);
        auto h = add_entity(head);
        auto t = add_entity(tail);
        return add_triple(Triple{h, r, t});
    }

    bool add_triple(Triple t) {
        if (!triple_keys_.insert(pack(t)).second) return false;
        triples_.push_back(t);
        sorted_insert(out_[t.head.value], Edge{t.relation, t.tail});
        sorted_insert(in_[t.tail.value], Edge{t.relation, t.head});
        return true;
    }

    void add_entity_type(std::string_view entity, std::string_view type) {
        auto e = add_entity(entity);
        auto ty = add_type(type);
        sorted_insert(types_[e.value], ty);
    }

    std::size_t entity_count() const noexcept { return entities_.size(); }
    std::size_t relation_count() const noexcept { return relations_.size(); }
    std::size_t type_count() const noexcept { return types_table_.size(); }
    std::size_t triple_count() const noexcept { return triples_.size(); }

    // Triples in insertion order.
    const std::vector<Triple>& triples() const noexcept { return triples_; }

    const std::vector<Edge>& out_edges(EntityId e) const { return out_.at(check(e).value); }
    const std::vector<Edge>& in_edges(EntityId e) const { return in_.at(check(e).value); }
    const std::vector<TypeId>& types_of(EntityId e) const { return types_.at(check(e).value); }

    bool contains(const Triple& t) const { return triple_keys_.contains(pack(t)); }

    EntityId entity(std::string_view label) const {
        if (auto id = entities_.find(label)) return EntityId{*id};
        throw LookupError("unknown entity: " + std::string(label));
    }
    std::optional<EntityId> find_entity(std::string_view label) const {
        if (auto id = entities_.find(label)) return EntityId{*id};
        return std::nullopt;
    }
    RelationId relation(std::string_view label) const {
        if (auto id = relations_.find(label)) return RelationId{*id};
        throw LookupError("unknown relation: " + std::string(label));
    }
    std::optional<TypeId> find_type(std::string_view label) const {
        if (auto id = types_table_.find(label)) return TypeId{*id};
        return std::nullopt;
    }

    // Resolves "label" or "label~inv".
    Hop hop(std::string_view label) const {
        if (label.ends_with(kInverseSuffix)) {
            label.remove_suffix(kInverseSuffix.size());
            return Hop{relation(label), true};
        }
        return Hop{relation(label), false};
    }

    const std::string& label(EntityId e) const { return entities_.label(check(e).value); }
    const std::string& label(RelationId r) const { return relations_.label(r.value); }
    const std::string& label(TypeId t) const { return types_table_.label(t.value); }
    std::string label(Hop h) const {
        auto s = relations_.label(h.relation.value);
        if (h.inverse) s += kInverseSuffix;
        return s;
    }

    // Traversable steps out of `e`, sorted by (relation id, inverse, target id).
    std::vector<Step> steps(EntityId e, bool allow_inverse) const {
        std::vector<Step> result;
        for (const auto& edge : out_edges(e)) result.push_back({Hop{edge.relation, false}, edge.target});
        if (allow_inverse) {
            for (const auto& edge : in_edges(e)) result.push_back({Hop{edge.relation, true}, edge.target});
            std::sort(result.begin(), result.end());
        }
        return result;
    }

    EntityId check(EntityId e) const {
        if (e.value >= entities_.size())
            throw LookupError("unknown entity id " + std::to_string(e.value));
        return e;
    }

private:
    struct KeyHash {
        std::size_t operator()(const std::pair<std::uint64_t, std::uint32_t>& k) const noexcept {
            return std::hash<std::uint64_t>{}(k.first * 0x9E3779B97F4A7C15ull ^ k.second);
        }
    };

    static std::pair<std::uint64_t, std::uint32_t> pack(const Triple& t) {
        return {(std::uint64_t{t.head.value} << 32) | t.tail.value, t.relation.value};
    }

    template <class T>
    static void sorted_insert(std::vector<T>& v, const T& x) {
        auto it = std::lower_bound(v.begin(), v.end(), x);
        if (it == v.end() || *it != x) v.insert(it, x);
    }

    LabelTable entities_;
    LabelTable relations_;
    LabelTable types_table_;
    std::vector<Triple> triples_;
    std::unordered_set<std::pair<std::uint64_t, std::uint32_t>, KeyHash> triple_keys_;
    std::vector<std::vector<Edge>> out_;
    std::vector<std::vector<Edge>> in_;
    std::vector<std::vector<TypeId>> types_;
};

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find('\t', start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

// Calls fn(line_number, fields) for every non-blank line.
template <class Fn>
void for_each_tsv_line(std::istream& in, Fn&& fn) {
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        fn(number, split_tabs(line));
    }
}

}  // namespace detail

// Adds `head<TAB>relation<TAB>tail` lines to an existing graph. Returns the
// number of new (non-duplicate) triples.
inline std::size_t load_triples_into(KnowledgeGraph& g, std::istream& in,
                                     const std::string& source = "<triples>") {
    std::size_t added = 0;
    detail::for_each_tsv_line(in, [&](std::size_t line, const std::vector<std::string_view>& f) {
        if (f.size() != 3)
            throw ParseError(source, line, "expected 3 tab-separated fields, got " + std::to_string(f.size()));
        if (f[0].empty() || f[1].empty() || f[2].empty())
            throw ParseError(source, line, "empty field");
        try {
            added += g.add_triple(f[0], f[1], f[2]) ? 1 : 0;
        } catch (const DomainError& e) {
            throw ParseError(source, line, e.what());
        }
    });
    return added;
}

inline KnowledgeGraph load_triples(std::istream& in, const std::string& source = "<triples>") {
    KnowledgeGraph g;
    load_triples_into(g, in, source);
    if (g.triple_count() == 0) throw EmptyGraphError(source + ": no triples");
    return g;
}

// Merges `entity<TAB>type` lines into the graph; unknown entities are created.
inline void load_type_schema(KnowledgeGraph& g, std::istream& in, const std::string& source = "<types>") {
    detail::for_each_tsv_line(in, [&](std::size_t line, const std::vector<std::string_view>& f) {
        if (f.size() != 2)
            throw ParseError(source, line, "expected 2 tab-separated fields, got " + std::to_string(f.size()));
        if (f[0].empty() || f[1].empty()) throw ParseError(source, line, "empty field");
        g.add_entity_type(f[0], f[1]);
    });
}

// All shortest paths from `from` to `to`, ordered lexicographically by
// relation-id sequence (then intermediates), truncated to `cap`.
inline std::vector<Path> enumerate_shortest_paths(const KnowledgeGraph& g, EntityId from, EntityId to,
                                                  std::size_t cap = kDefaultPathCap,
                                                  bool allow_inverse = false) {
    g.check(from);
    g.check(to);
    std::vector<Path> result;
    if (from == to || cap == 0) return result;

    constexpr auto kUnreached = std::numeric_limits<std::uint32_t>::max();
    std::vector<std::uint32_t> dist_to(g.entity_count(), kUnreached);
    std::vector<EntityId> frontier{to};
    dist_to[to.value] = 0;
    for (std::uint32_t d = 1; !frontier.empty() && dist_to[from.value] == kUnreached; ++d) {
        std::vector<EntityId> next;
        auto visit = [&](EntityId e) {
            if (dist_to[e.value] == kUnreached) {
                dist_to[e.value] = d;
                next.push_back(e);
            }
        };
        for (auto v : frontier) {
            for (const auto& edge : g.in_edges(v)) visit(edge.target);
            if (allow_inverse)
                for (const auto& edge : g.out_edges(v)) visit(edge.target);
        }
        frontier = std::move(next);
    }
    if (dist_to[from.value] == kUnreached) return result;

    Path current{from, {}, {}, to};
    bool truncated = false;
    std::function<void(EntityId)> walk = [&](EntityId u) {
        if (u == to) {
            result.push_back(current);
            return;
        }
        for (const auto& step : g.steps(u, allow_inverse)) {
            auto d = dist_to[step.target.value];
            if (d == kUnreached || d + 1 != dist_to[u.value]) continue;
            if (result.size() >= cap) {
                truncated = true;
                return;
            }
            current.relations.push_back(step.hop);
            bool last = step.target == to;
            if (!last) current.intermediates.push_back(step.target);
            walk(step.target);
            if (!last) current.intermediates.pop_back();
            current.relations.pop_back();
        }
    };
    walk(from);
    if (truncated)
        spdlog::info("shortest paths {} -> {} truncated at {}", g.label(from), g.label(to), cap);
    return result;
}

inline std::vector<Path> enumerate_shortest_paths(const KnowledgeGraph& g, std::string_view from,
                                                  std::string_view to, std::size_t cap = kDefaultPathCap,
                                                  bool allow_inverse = false) {
    return enumerate_shortest_paths(g, g.entity(from), g.entity(to), cap, allow_inverse);
}

// "topic → r1 → ... → rn"; the topic label alone for an empty prefix.
inline std::string serialize_prefix(const KnowledgeGraph& g, EntityId topic, const std::vector<Hop>& hops) {
    std::string text = g.label(topic);
    for (const auto& h : hops) {
        text += kArrow;
        text += g.label(h);
    }
    return text;
}

// "topic → r1 → ... → rn → terminal", optionally prefixed with "question [SEP] ".
inline std::string serialize_path(const KnowledgeGraph& g, const Path& p,
                                  std::optional<std::string_view> question = std::nullopt) {
    std::string text;
    if (question) {
        text += *question;
        text += " [SEP] ";
    }
    text += serialize_prefix(g, p.topic, p.relations);
    text += kArrow;
    text += g.label(p.terminal);
    return text;
}

// Replays the path through the adjacency indices.
inline bool is_valid_path(const KnowledgeGraph& g, const Path& p, bool allow_inverse = false) {
    if (p.relations.empty() || p.intermediates.size() + 1 != p.relations.size()) return false;
    auto at = p.topic;
    for (std::size_t i = 0; i < p.relations.size(); ++i) {
        auto next = i + 1 < p.relations.size() ? p.intermediates[i] : p.terminal;
        const auto& h = p.relations[i];
        if (h.inverse && !allow_inverse) return false;
        Triple t = h.inverse ? Triple{next, h.relation, at} : Triple{at, h.relation, next};
        if (!g.contains(t)) return false;
        at = next;
    }
    return true;
}

}  // namespace rporag
