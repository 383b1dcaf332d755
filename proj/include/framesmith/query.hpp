#pragma once

// Filter-query language over frames joined with per-model predictions.
//
//   query     := expr [ "order" "by" fieldref ["asc" | "desc"] ] [ "limit" integer ]
//   expr      := conj { "or" conj }
//   conj      := unary { "and" unary }
//   unary     := "not" unary | "(" expr ")" | predicate
//   predicate := fieldref cmp literal
//              | fieldref "in" "(" literal { "," literal } ")"
//              | "labeled" "(" ident ")"
//   fieldref  := "video" | "frameIndex" | "timestampSec"
//              | ident "." ("topClass" | "topScore")
//              | ident "." ("score" | "count" | "maxScore") "[" ident "]"
//   cmp       := "=" | "!=" | "<" | "<=" | ">" | ">="
//   literal   := number | ident
//   ident     := bare word | double-quoted string
//
// Keywords are case-insensitive; field and attribute names are not. A
// predicate over a model with no prediction for the frame is false.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "framesmith/catalog.hpp"

namespace framesmith {
struct Snapshot;
}

namespace framesmith::query {

enum class FieldKind { video, frame_index, timestamp_sec, labeled, top_class, top_score, score, count, max_score };

struct FieldRef {
    FieldKind kind = FieldKind::frame_index;
    std::string model;  // model attributes and labeled()
    std::string cls;    // score / count / maxScore
    std::size_t offset = 0;

    bool is_string() const { return kind == FieldKind::video || kind == FieldKind::top_class; }
    bool needs_model() const {
        return kind != FieldKind::video && kind != FieldKind::frame_index && kind != FieldKind::timestamp_sec;
    }

    /// Source offsets do not take part in structural equality.
    bool operator==(const FieldRef& o) const { return kind == o.kind && model == o.model && cls == o.cls; }
};

enum class CompareOp { eq, ne, lt, le, gt, ge };

using Literal = std::variant<double, std::string>;

struct Expr {
    enum class Kind { and_, or_, not_, compare, in, labeled };

    Kind kind = Kind::compare;
    std::vector<Expr> children;  // and/or: two, not: one
    FieldRef field;              // compare / in / labeled
    CompareOp op = CompareOp::eq;
    std::vector<Literal> literals;  // compare: one, in: one or more

    static Expr conj(Expr a, Expr b);
    static Expr disj(Expr a, Expr b);
    static Expr negate(Expr a);
    static Expr compare(FieldRef f, CompareOp op, Literal value);
    static Expr in(FieldRef f, std::vector<Literal> values);
    static Expr labeled(std::string model);

    bool operator==(const Expr& o) const;
};

struct OrderBy {
    FieldRef field;
    bool descending = false;

    bool operator==(const OrderBy&) const = default;
};

struct Query {
    Expr where;
    std::optional<OrderBy> order;
    std::optional<std::int64_t> limit;

    bool operator==(const Query&) const = default;
};

/// Throws Error(syntax) with detail {"offset", "expected", "found"}.
Query parse(std::string_view text);

/// Parses a lone field reference such as `workerSize.score[noWorker]`.
FieldRef parse_field(std::string_view text);

/// Canonical text: predicates are fully parenthesized, keywords lower-case,
/// identifiers quoted only when they are not bare words.
std::string pretty_print(const Query& q);
std::string pretty_print(const Expr& e);
std::string pretty_print(const FieldRef& f);

std::string_view to_string(CompareOp op);

/// A query that passed check() against a catalog.
class CheckedQuery {
public:
    const Query& ast() const { return ast_; }

private:
    friend CheckedQuery check(Query q, const Catalog& catalog);
    explicit CheckedQuery(Query q) : ast_(std::move(q)) {}
    Query ast_;
};

/// Resolves every field reference against registered models and classes and
/// enforces the operator/type rules. Throws Error(validation |
/// task_mismatch) with detail {"field", "offset"}.
CheckedQuery check(Query q, const Catalog& catalog);

/// Throws Error(validation) for a model field reference that is unknown or
/// illegal for its task; shared with the analytics axis parser.
void check_field(const FieldRef& f, const Catalog& catalog);

/// Catalog ordinals of the matching frames, ordered and limited as the query
/// asks. Read-only; safe to call concurrently on a shared snapshot.
std::vector<std::size_t> select(const Snapshot& snapshot, const CheckedQuery& q);

std::vector<FrameRecord> run_query(const Snapshot& snapshot, const CheckedQuery& q);

/// parse + check + run in one call.
std::vector<FrameRecord> run_query(const Snapshot& snapshot, std::string_view text);

}  // namespace framesmith::query
