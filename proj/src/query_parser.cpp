#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>

#include "framesmith/error.hpp"
#include "framesmith/query.hpp"

namespace framesmith::query {

using nlohmann::json;

Expr Expr::conj(Expr a, Expr b) {
    Expr e;
    e.kind = Kind::and_;
    e.children = {std::move(a), std::move(b)};
    return e;
}

Expr Expr::disj(Expr a, Expr b) {
    Expr e;
    e.kind = Kind::or_;
    e.children = {std::move(a), std::move(b)};
    return e;
}

Expr Expr::negate(Expr a) {
    Expr e;
    e.kind = Kind::not_;
    e.children = {std::move(a)};
    return e;
}

Expr Expr::compare(FieldRef f, CompareOp op, Literal value) {
    Expr e;
    e.kind = Kind::compare;
    e.field = std::move(f);
    e.op = op;
    e.literals = {std::move(value)};
    return e;
}

Expr Expr::in(FieldRef f, std::vector<Literal> values) {
    Expr e;
    e.kind = Kind::in;
    e.field = std::move(f);
    e.literals = std::move(values);
    return e;
}

Expr Expr::labeled(std::string model) {
    Expr e;
    e.kind = Kind::labeled;
    e.field.kind = FieldKind::labeled;
    e.field.model = std::move(model);
    return e;
}

bool Expr::operator==(const Expr& o) const {
    if (kind != o.kind) return false;
    switch (kind) {
    case Kind::and_:
    case Kind::or_:
    case Kind::not_:
        return children == o.children;
    case Kind::compare:
        return field == o.field && op == o.op && literals == o.literals;
    case Kind::in:
        return field == o.field && literals == o.literals;
    case Kind::labeled:
        return field == o.field;
    }
    return false;
}

std::string_view to_string(CompareOp op) {
    switch (op) {
    case CompareOp::eq: return "=";
    case CompareOp::ne: return "!=";
    case CompareOp::lt: return "<";
    case CompareOp::le: return "<=";
    case CompareOp::gt: return ">";
    case CompareOp::ge: return ">=";
    }
    return "?";
}

namespace {

enum class Tok { word, string, number, op, lparen, rparen, comma, dot, lbracket, rbracket, end };

struct Token {
    Tok kind = Tok::end;
    std::string text;  // word/string: identifier text (unescaped); number/op: source text
    std::size_t offset = 0;
};

const std::set<std::string, std::less<>> keywords = {"and", "or", "not", "in", "labeled",
                                                     "order", "by", "asc", "desc", "limit"};

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool is_word_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

[[noreturn]] void syntax_error(std::size_t offset, const std::vector<std::string>& expected, std::string found) {
    std::string msg = "syntax error at offset " + std::to_string(offset) + ": expected ";
    for (std::size_t i = 0; i < expected.size(); ++i) msg += (i ? ", " : "") + expected[i];
    msg += "; found " + found;
    throw Error(ErrorCode::syntax, msg, json{{"offset", offset}, {"expected", expected}, {"found", found}});
}

std::vector<Token> lex(std::string_view src) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < src.size()) {
        char c = src[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        Token t;
        t.offset = i;
        if (is_word_start(c)) {
            std::size_t j = i + 1;
            while (j < src.size() && is_word_char(src[j])) ++j;
            t.kind = Tok::word;
            t.text = std::string(src.substr(i, j - i));
            i = j;
        } else if (is_digit(c) || (c == '-' && i + 1 < src.size() && is_digit(src[i + 1]))) {
            std::size_t j = i + 1;
            while (j < src.size() && is_digit(src[j])) ++j;
            if (j + 1 < src.size() && src[j] == '.' && is_digit(src[j + 1])) {
                j += 2;
                while (j < src.size() && is_digit(src[j])) ++j;
            }
            t.kind = Tok::number;
            t.text = std::string(src.substr(i, j - i));
            i = j;
        } else if (c == '"') {
            std::size_t j = i + 1;
            std::string text;
            bool closed = false;
            while (j < src.size()) {
                if (src[j] == '\\' && j + 1 < src.size() && (src[j + 1] == '"' || src[j + 1] == '\\')) {
                    text += src[j + 1];
                    j += 2;
                } else if (src[j] == '"') {
                    closed = true;
                    ++j;
                    break;
                } else {
                    text += src[j++];
                }
            }
            if (!closed) syntax_error(i, {"closing '\"'"}, "end of input");
            t.kind = Tok::string;
            t.text = std::move(text);
            i = j;
        } else {
            auto two = src.substr(i, 2);
            if (two == "!=" || two == "<=" || two == ">=") {
                t.kind = Tok::op;
                t.text = std::string(two);
                i += 2;
            } else if (c == '=' || c == '<' || c == '>') {
                t.kind = Tok::op;
                t.text = std::string(1, c);
                ++i;
            } else {
                switch (c) {
                case '(': t.kind = Tok::lparen; break;
                case ')': t.kind = Tok::rparen; break;
                case ',': t.kind = Tok::comma; break;
                case '.': t.kind = Tok::dot; break;
                case '[': t.kind = Tok::lbracket; break;
                case ']': t.kind = Tok::rbracket; break;
                default:
                    syntax_error(i, {"identifier", "number", "operator", "'('", "')'"},
                                 "'" + std::string(1, c) + "'");
                }
                t.text = std::string(1, c);
                ++i;
            }
        }
        out.push_back(std::move(t));
    }
    out.push_back(Token{Tok::end, {}, src.size()});
    return out;
}

class Parser {
public:
    explicit Parser(std::string_view src) : tokens_(lex(src)) {}

    Query parse_query() {
        Query q;
        q.where = parse_or();
        if (keyword("order")) {
            ++pos_;
            expect_keyword("by");
            OrderBy ob;
            ob.field = parse_fieldref();
            if (keyword("asc")) {
                ++pos_;
            } else if (keyword("desc")) {
                ob.descending = true;
                ++pos_;
            }
            q.order = std::move(ob);
        }
        if (keyword("limit")) {
            ++pos_;
            const Token& t = peek();
            if (t.kind != Tok::number || t.text.find_first_of(".-") != std::string::npos)
                fail({"positive integer"});
            std::int64_t n = 0;
            auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), n);
            if (ec != std::errc() || n <= 0) fail({"positive integer"});
            q.limit = n;
            ++pos_;
        }
        if (peek().kind != Tok::end) {
            std::vector<std::string> expected = {"'and'", "'or'", "end of input"};
            if (!q.order && !q.limit) expected.insert(expected.end(), {"'order by'", "'limit'"});
            else if (!q.limit) expected.push_back("'limit'");
            fail(expected);
        }
        return q;
    }

    FieldRef parse_lone_field() {
        FieldRef f = parse_fieldref();
        if (peek().kind != Tok::end) fail({"end of input"});
        return f;
    }

private:
    const Token& peek(std::size_t ahead = 0) const {
        return tokens_[std::min(pos_ + ahead, tokens_.size() - 1)];
    }

    bool keyword(std::string_view kw, std::size_t ahead = 0) const {
        const Token& t = peek(ahead);
        return t.kind == Tok::word && lower(t.text) == kw;
    }

    [[noreturn]] void fail(const std::vector<std::string>& expected) const {
        const Token& t = peek();
        syntax_error(t.offset, expected, t.kind == Tok::end ? "end of input" : "'" + t.text + "'");
    }

    void expect(Tok kind, const char* what) {
        if (peek().kind != kind) fail({what});
        ++pos_;
    }

    void expect_keyword(std::string_view kw) {
        if (!keyword(kw)) fail({"'" + std::string(kw) + "'"});
        ++pos_;
    }

    Expr parse_or() {
        Expr e = parse_and();
        while (keyword("or")) {
            ++pos_;
            e = Expr::disj(std::move(e), parse_and());
        }
        return e;
    }

    Expr parse_and() {
        Expr e = parse_unary();
        while (keyword("and")) {
            ++pos_;
            e = Expr::conj(std::move(e), parse_unary());
        }
        return e;
    }

    Expr parse_unary() {
        if (keyword("not")) {
            ++pos_;
            return Expr::negate(parse_unary());
        }
        if (peek().kind == Tok::lparen) {
            ++pos_;
            Expr e = parse_or();
            expect(Tok::rparen, "')'");
            return e;
        }
        if (keyword("labeled") && peek(1).kind == Tok::lparen) {
            pos_ += 2;
            std::size_t at = peek().offset;
            Expr e = Expr::labeled(parse_ident("model name"));
            e.field.offset = at;
            expect(Tok::rparen, "')'");
            return e;
        }
        return parse_predicate();
    }

    std::string parse_ident(const char* what) {
        const Token& t = peek();
        if (t.kind == Tok::string || (t.kind == Tok::word && !keywords.count(lower(t.text)))) {
            ++pos_;
            return t.text;
        }
        fail({what});
    }

    inline static const std::vector<std::string> predicate_start = {
        "video", "frameIndex", "timestampSec", "model.attribute", "labeled(model)", "'not'", "'('"};

    FieldRef parse_fieldref() {
        const Token& head = peek();
        FieldRef f;
        f.offset = head.offset;
        if (peek(1).kind == Tok::dot &&
            (head.kind == Tok::string || (head.kind == Tok::word && !keywords.count(lower(head.text))))) {
            f.model = head.text;
            pos_ += 2;
            const Token& attr = peek();
            static const std::vector<std::string> attrs = {"topClass", "topScore", "score", "count", "maxScore"};
            if (attr.kind != Tok::word) fail(attrs);
            if (attr.text == "topClass") {
                f.kind = FieldKind::top_class;
            } else if (attr.text == "topScore") {
                f.kind = FieldKind::top_score;
            } else if (attr.text == "score") {
                f.kind = FieldKind::score;
            } else if (attr.text == "count") {
                f.kind = FieldKind::count;
            } else if (attr.text == "maxScore") {
                f.kind = FieldKind::max_score;
            } else {
                fail(attrs);
            }
            ++pos_;
            if (f.kind == FieldKind::score || f.kind == FieldKind::count || f.kind == FieldKind::max_score) {
                expect(Tok::lbracket, "'['");
                f.cls = parse_ident("class name");
                expect(Tok::rbracket, "']'");
            }
            return f;
        }
        if (head.kind == Tok::word) {
            if (head.text == "video") {
                f.kind = FieldKind::video;
            } else if (head.text == "frameIndex") {
                f.kind = FieldKind::frame_index;
            } else if (head.text == "timestampSec") {
                f.kind = FieldKind::timestamp_sec;
            } else {
                fail(predicate_start);
            }
            ++pos_;
            return f;
        }
        fail(predicate_start);
    }

    Literal parse_literal() {
        const Token& t = peek();
        if (t.kind == Tok::number) {
            double v = 0;
            auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
            if (ec != std::errc()) fail({"number"});
            ++pos_;
            return v;
        }
        if (t.kind == Tok::string || (t.kind == Tok::word && !keywords.count(lower(t.text)))) {
            ++pos_;
            return t.text;
        }
        fail({"number", "identifier", "quoted string"});
    }

    Expr parse_predicate() {
        FieldRef f = parse_fieldref();
        if (keyword("in")) {
            ++pos_;
            expect(Tok::lparen, "'('");
            std::vector<Literal> values{parse_literal()};
            while (peek().kind == Tok::comma) {
                ++pos_;
                values.push_back(parse_literal());
            }
            expect(Tok::rparen, "')' or ','");
            return Expr::in(std::move(f), std::move(values));
        }
        const Token& t = peek();
        if (t.kind != Tok::op) fail({"=", "!=", "<", "<=", ">", ">=", "'in'"});
        CompareOp op = t.text == "="    ? CompareOp::eq
                       : t.text == "!=" ? CompareOp::ne
                       : t.text == "<"  ? CompareOp::lt
                       : t.text == "<=" ? CompareOp::le
                       : t.text == ">"  ? CompareOp::gt
                                        : CompareOp::ge;
        ++pos_;
        return Expr::compare(std::move(f), op, parse_literal());
    }

    std::vector<Token> tokens_;
    std::size_t pos_ = 0;
};

std::string ident(const std::string& s) {
    bool bare = !s.empty() && is_word_start(s[0]) && std::all_of(s.begin(), s.end(), is_word_char) &&
                !keywords.count(lower(s));
    if (bare) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        out += c;
    }
    return out + '"';
}

std::string number(double v) {
    char buf[512];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
    if (ec != std::errc()) return "0";
    return std::string(buf, p);
}

std::string literal(const Literal& l) {
    if (const double* d = std::get_if<double>(&l)) return number(*d);
    return ident(std::get<std::string>(l));
}

}  // namespace

Query parse(std::string_view text) { return Parser(text).parse_query(); }

FieldRef parse_field(std::string_view text) { return Parser(text).parse_lone_field(); }

std::string pretty_print(const FieldRef& f) {
    switch (f.kind) {
    case FieldKind::video: return "video";
    case FieldKind::frame_index: return "frameIndex";
    case FieldKind::timestamp_sec: return "timestampSec";
    case FieldKind::labeled: return "labeled(" + ident(f.model) + ")";
    case FieldKind::top_class: return ident(f.model) + ".topClass";
    case FieldKind::top_score: return ident(f.model) + ".topScore";
    case FieldKind::score: return ident(f.model) + ".score[" + ident(f.cls) + "]";
    case FieldKind::count: return ident(f.model) + ".count[" + ident(f.cls) + "]";
    case FieldKind::max_score: return ident(f.model) + ".maxScore[" + ident(f.cls) + "]";
    }
    return {};
}

std::string pretty_print(const Expr& e) {
    switch (e.kind) {
    case Expr::Kind::and_:
        return "(" + pretty_print(e.children[0]) + " and " + pretty_print(e.children[1]) + ")";
    case Expr::Kind::or_:
        return "(" + pretty_print(e.children[0]) + " or " + pretty_print(e.children[1]) + ")";
    case Expr::Kind::not_:
        return "(not " + pretty_print(e.children[0]) + ")";
    case Expr::Kind::compare:
        return pretty_print(e.field) + " " + std::string(to_string(e.op)) + " " + literal(e.literals.at(0));
    case Expr::Kind::in: {
        std::string out = pretty_print(e.field) + " in (";
        for (std::size_t i = 0; i < e.literals.size(); ++i) out += (i ? ", " : "") + literal(e.literals[i]);
        return out + ")";
    }
    case Expr::Kind::labeled:
        return pretty_print(e.field);
    }
    return {};
}

std::string pretty_print(const Query& q) {
    std::string out = pretty_print(q.where);
    if (q.order) out += " order by " + pretty_print(q.order->field) + (q.order->descending ? " desc" : " asc");
    if (q.limit) out += " limit " + std::to_string(*q.limit);
    return out;
}

}  // namespace framesmith::query
