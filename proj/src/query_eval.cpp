#include <algorithm>
#include <cmath>
#include <numeric>

#include "framesmith/error.hpp"
#include "framesmith/query.hpp"
#include "framesmith/store.hpp"

namespace framesmith::query {

using nlohmann::json;

namespace {

[[noreturn]] void field_error(ErrorCode code, const std::string& message, const FieldRef& f) {
    throw Error(code, message, json{{"field", pretty_print(f)}, {"offset", f.offset}});
}

std::string_view attribute_name(FieldKind k) {
    switch (k) {
    case FieldKind::top_class: return "topClass";
    case FieldKind::top_score: return "topScore";
    case FieldKind::score: return "score";
    case FieldKind::count: return "count";
    case FieldKind::max_score: return "maxScore";
    case FieldKind::labeled: return "labeled";
    default: return "field";
    }
}

void check_literals(const FieldRef& f, const std::vector<Literal>& values) {
    for (const auto& v : values) {
        bool is_number = std::holds_alternative<double>(v);
        if (f.is_string() && is_number) field_error(ErrorCode::validation, "string field compared with a number", f);
        if (!f.is_string() && !is_number)
            field_error(ErrorCode::validation, "numeric field compared with a string", f);
    }
}

void check_class_literals(const FieldRef& f, const std::vector<Literal>& values, const Catalog& catalog) {
    if (f.kind != FieldKind::top_class) return;
    const ModelDescriptor* m = catalog.model(f.model);
    for (const auto& v : values) {
        const auto* s = std::get_if<std::string>(&v);
        if (s && !m->class_index(*s))
            field_error(ErrorCode::validation, "unknown class '" + *s + "' for model '" + f.model + "'", f);
    }
}

void check_expr(const Expr& e, const Catalog& catalog) {
    switch (e.kind) {
    case Expr::Kind::and_:
    case Expr::Kind::or_:
    case Expr::Kind::not_:
        for (const auto& c : e.children) check_expr(c, catalog);
        return;
    case Expr::Kind::labeled:
        check_field(e.field, catalog);
        return;
    case Expr::Kind::compare:
        check_field(e.field, catalog);
        if (e.field.is_string() && e.op != CompareOp::eq && e.op != CompareOp::ne)
            field_error(ErrorCode::validation, "ordering operator on string field", e.field);
        check_literals(e.field, e.literals);
        check_class_literals(e.field, e.literals, catalog);
        return;
    case Expr::Kind::in:
        check_field(e.field, catalog);
        check_literals(e.field, e.literals);
        check_class_literals(e.field, e.literals, catalog);
        return;
    }
}

}  // namespace

void check_field(const FieldRef& f, const Catalog& catalog) {
    if (!f.needs_model()) return;
    const ModelDescriptor* m = catalog.model(f.model);
    if (!m) field_error(ErrorCode::validation, "unknown model '" + f.model + "'", f);
    const bool wants_classifier = f.kind == FieldKind::top_class || f.kind == FieldKind::top_score ||
                                  f.kind == FieldKind::score || f.kind == FieldKind::labeled;
    if (wants_classifier && m->task != Task::classification)
        field_error(ErrorCode::task_mismatch, std::string(attribute_name(f.kind)) + " on detection model", f);
    if (!wants_classifier && m->task != Task::detection)
        field_error(ErrorCode::task_mismatch, std::string(attribute_name(f.kind)) + " on classification model", f);
    if ((f.kind == FieldKind::score || f.kind == FieldKind::count || f.kind == FieldKind::max_score) &&
        !m->class_index(f.cls))
        field_error(ErrorCode::validation, "unknown class '" + f.cls + "' for model '" + f.model + "'", f);
}

CheckedQuery check(Query q, const Catalog& catalog) {
    check_expr(q.where, catalog);
    if (q.order) {
        if (q.order->field.kind == FieldKind::labeled)
            field_error(ErrorCode::validation, "labeled() cannot be used for ordering", q.order->field);
        check_field(q.order->field, catalog);
    }
    if (q.limit && *q.limit <= 0) throw Error(ErrorCode::validation, "limit must be positive");
    return CheckedQuery(std::move(q));
}

namespace {

bool compare_numbers(double a, CompareOp op, double b) {
    switch (op) {
    case CompareOp::eq: return a == b;
    case CompareOp::ne: return a != b;
    case CompareOp::lt: return a < b;
    case CompareOp::le: return a <= b;
    case CompareOp::gt: return a > b;
    case CompareOp::ge: return a >= b;
    }
    return false;
}

// A field bound to the snapshot's columns. value() yields nullopt when the
// frame has no prediction for the field's model (or no score for the class).
struct BoundField {
    FieldKind kind = FieldKind::frame_index;
    const Catalog* catalog = nullptr;
    const PredictionTable* table = nullptr;
    std::size_t cls = 0;
    std::vector<char> labeled;  // per ordinal, labeled() only

    std::optional<double> number(std::size_t ord) const {
        const FrameRecord& f = catalog->frames()[ord];
        switch (kind) {
        case FieldKind::frame_index: return static_cast<double>(f.frameIndex);
        case FieldKind::timestamp_sec: return f.timestampSec;
        default: break;
        }
        std::int32_t slot = table->slot(ord);
        if (slot == PredictionTable::none) return std::nullopt;
        switch (kind) {
        case FieldKind::top_score: return table->top_score(slot);
        case FieldKind::score: {
            double s = table->score(slot, cls);
            if (std::isnan(s)) return std::nullopt;
            return s;
        }
        case FieldKind::count: return static_cast<double>(table->count(slot, cls));
        case FieldKind::max_score: return table->max_score(slot, cls);
        default: return std::nullopt;
        }
    }

    // For topClass this is the class index; for video the frame's videoId is
    // compared directly by the caller.
    std::int32_t top_class(std::size_t ord) const {
        std::int32_t slot = table->slot(ord);
        return slot == PredictionTable::none ? -1 : table->top_class(slot);
    }

    const std::string* text(std::size_t ord) const {
        if (kind == FieldKind::video) return &catalog->frames()[ord].videoId;
        std::int32_t c = top_class(ord);
        return c < 0 ? nullptr : &table->model().classes[static_cast<std::size_t>(c)];
    }
};

BoundField bind(const FieldRef& f, const Snapshot& snap) {
    BoundField b;
    b.kind = f.kind;
    b.catalog = snap.catalog.get();
    if (f.needs_model()) {
        b.table = snap.table(f.model);
        if (!b.table) throw Error(ErrorCode::validation, "unknown model '" + f.model + "'");
        if (!f.cls.empty()) b.cls = b.table->model().class_index(f.cls).value_or(0);
    }
    if (f.kind == FieldKind::labeled) {
        b.labeled.assign(snap.catalog->frame_count(), 0);
        for (const auto& l : snap.session->labels()) {
            if (l.modelId != f.model) continue;
            std::size_t ord = snap.catalog->ordinal(l.frameId);
            if (ord != Catalog::npos) b.labeled[ord] = 1;
        }
    }
    return b;
}

class Evaluator {
public:
    Evaluator(const Expr& e, const Snapshot& snap) : kind_(e.kind), op_(e.op) {
        for (const auto& c : e.children) children_.emplace_back(c, snap);
        if (e.kind == Expr::Kind::and_ || e.kind == Expr::Kind::or_ || e.kind == Expr::Kind::not_) return;
        field_ = bind(e.field, snap);
        for (const auto& lit : e.literals) {
            if (const double* d = std::get_if<double>(&lit)) {
                numbers_.push_back(*d);
            } else {
                const auto& s = std::get<std::string>(lit);
                strings_.push_back(s);
                if (e.field.kind == FieldKind::top_class)
                    classes_.push_back(static_cast<std::int32_t>(
                        field_.table->model().class_index(s).value_or(static_cast<std::size_t>(-1))));
            }
        }
    }

    bool operator()(std::size_t ord) const {
        switch (kind_) {
        case Expr::Kind::and_: return children_[0](ord) && children_[1](ord);
        case Expr::Kind::or_: return children_[0](ord) || children_[1](ord);
        case Expr::Kind::not_: return !children_[0](ord);
        case Expr::Kind::labeled: return field_.labeled[ord] != 0;
        case Expr::Kind::compare:
        case Expr::Kind::in: break;
        }
        const bool is_in = kind_ == Expr::Kind::in;
        if (field_.kind == FieldKind::top_class) {
            std::int32_t c = field_.top_class(ord);
            if (c < 0) return false;
            bool hit = std::find(classes_.begin(), classes_.end(), c) != classes_.end();
            return is_in || op_ == CompareOp::eq ? hit : !hit;
        }
        if (field_.kind == FieldKind::video) {
            const std::string& v = *field_.text(ord);
            bool hit = std::find(strings_.begin(), strings_.end(), v) != strings_.end();
            return is_in || op_ == CompareOp::eq ? hit : !hit;
        }
        std::optional<double> v = field_.number(ord);
        if (!v) return false;
        if (is_in) return std::find(numbers_.begin(), numbers_.end(), *v) != numbers_.end();
        return compare_numbers(*v, op_, numbers_[0]);
    }

private:
    Expr::Kind kind_;
    CompareOp op_;
    std::vector<Evaluator> children_;
    BoundField field_;
    std::vector<double> numbers_;
    std::vector<std::string> strings_;
    std::vector<std::int32_t> classes_;
};

// `video = X` conjuncts at the top of the tree restrict the scan to X's
// ordinal span.
std::optional<std::string> pinned_video(const Expr& e) {
    if (e.kind == Expr::Kind::compare && e.field.kind == FieldKind::video && e.op == CompareOp::eq)
        return std::get<std::string>(e.literals[0]);
    if (e.kind == Expr::Kind::and_) {
        if (auto v = pinned_video(e.children[0])) return v;
        return pinned_video(e.children[1]);
    }
    return std::nullopt;
}

}  // namespace

std::vector<std::size_t> select(const Snapshot& snap, const CheckedQuery& checked) {
    const Query& q = checked.ast();
    Evaluator matches(q.where, snap);

    std::size_t begin = 0, end = snap.catalog->frame_count();
    if (auto video = pinned_video(q.where)) {
        auto span = snap.catalog->video_span(*video);
        if (!span) return {};
        std::tie(begin, end) = *span;
    }

    std::vector<std::size_t> out;
    for (std::size_t ord = begin; ord < end; ++ord)
        if (matches(ord)) out.push_back(ord);

    if (q.order) {
        BoundField key = bind(q.order->field, snap);
        const bool desc = q.order->descending;
        // Frames without a value for the key sort last in either direction;
        // ties keep catalog order.
        if (q.order->field.is_string()) {
            std::stable_sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) {
                const std::string* x = key.text(a);
                const std::string* y = key.text(b);
                if (!x || !y) return x && !y;
                return desc ? *y < *x : *x < *y;
            });
        } else {
            std::stable_sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) {
                auto x = key.number(a);
                auto y = key.number(b);
                if (!x || !y) return x.has_value() && !y.has_value();
                return desc ? *y < *x : *x < *y;
            });
        }
    }
    if (q.limit && out.size() > static_cast<std::size_t>(*q.limit)) out.resize(static_cast<std::size_t>(*q.limit));
    return out;
}

std::vector<FrameRecord> run_query(const Snapshot& snap, const CheckedQuery& q) {
    std::vector<FrameRecord> out;
    const auto frames = snap.catalog->frames();
    for (std::size_t ord : select(snap, q)) out.push_back(frames[ord]);
    return out;
}

std::vector<FrameRecord> run_query(const Snapshot& snap, std::string_view text) {
    return run_query(snap, check(parse(text), *snap.catalog));
}

}  // namespace framesmith::query
