#include "varhor/expr.hpp"

#include <cctype>
#include <cstdio>
#include <sstream>

namespace varhor {

const char* error_code_name(ErrorCode code) {
    switch (code) {
    case ErrorCode::SyntaxError: return "SyntaxError";
    case ErrorCode::UnknownVariable: return "UnknownVariable";
    case ErrorCode::MissingBinding: return "MissingBinding";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::UnknownProblem: return "UnknownProblem";
    case ErrorCode::DerivativeCheckFailed: return "DerivativeCheckFailed";
    case ErrorCode::DirectionLeavesBox: return "DirectionLeavesBox";
    case ErrorCode::MissingDerivative: return "MissingDerivative";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::NonFiniteBackward: return "NonFiniteBackward";
    case ErrorCode::NonFiniteAdjoint: return "NonFiniteAdjoint";
    case ErrorCode::SingularRegression: return "SingularRegression";
    case ErrorCode::DegenerateH: return "DegenerateH";
    case ErrorCode::LineSearchStalled: return "LineSearchStalled";
    }
    return "Unknown";
}

std::string Dims::slot_name(int slot) const {
    if (slot == 0)
        return "t";
    slot -= 1;
    if (slot < n)
        return "x" + std::to_string(slot + 1);
    slot -= n;
    if (slot < m)
        return "y" + std::to_string(slot + 1);
    slot -= m;
    if (slot < m * d)
        return "z" + std::to_string(slot / d + 1) + std::to_string(slot % d + 1);
    slot -= m * d;
    return "u" + std::to_string(slot + 1);
}

int Dims::slot_of(const std::string& name) const {
    if (name == "t")
        return t_slot();
    if (name.size() < 2)
        return -1;
    char head = name[0];
    if (head == 'z') {
        // z<i><j> with single-digit indices
        if (name.size() != 3 || !std::isdigit(name[1]) || !std::isdigit(name[2]))
            return -1;
        int i = name[1] - '0';
        int j = name[2] - '0';
        if (i < 1 || i > m || j < 1 || j > d)
            return -1;
        return z_slot(i - 1, j - 1);
    }
    int idx = 0;
    for (size_t p = 1; p < name.size(); ++p) {
        if (!std::isdigit(name[p]))
            return -1;
        idx = idx * 10 + (name[p] - '0');
    }
    if (idx < 1)
        return -1;
    switch (head) {
    case 'x': return idx <= n ? x_slot(idx - 1) : -1;
    case 'y': return idx <= m ? y_slot(idx - 1) : -1;
    case 'u': return idx <= k ? u_slot(idx - 1) : -1;
    default: return -1;
    }
}

void Expr::check_finite(double v, const char* op) {
    if (!std::isfinite(v))
        throw Error(ErrorCode::DomainError, std::string("non-finite value in '") + op + "'");
}

namespace {

struct Token {
    enum class Type { Number, Ident, Op, LParen, RParen, End };
    Type type;
    double number = 0.0;
    char op = 0;
    std::string ident;
    size_t offset = 0;
};

class Lexer {
  public:
    explicit Lexer(const std::string& text) : text_(text) {}

    Token next() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
            ++pos_;
        Token tok;
        tok.offset = pos_;
        if (pos_ >= text_.size()) {
            tok.type = Token::Type::End;
            return tok;
        }
        char c = text_[pos_];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            size_t end = 0;
            try {
                tok.number = std::stod(text_.substr(pos_), &end);
            } catch (const std::exception&) {
                throw Error(ErrorCode::SyntaxError,
                            "offset " + std::to_string(pos_) + ": bad number literal");
            }
            pos_ += end;
            tok.type = Token::Type::Number;
            return tok;
        }
        if (std::isalpha(static_cast<unsigned char>(c))) {
            size_t start = pos_;
            while (pos_ < text_.size() &&
                   (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
                ++pos_;
            tok.type = Token::Type::Ident;
            tok.ident = text_.substr(start, pos_ - start);
            return tok;
        }
        if (c == '(') {
            ++pos_;
            tok.type = Token::Type::LParen;
            return tok;
        }
        if (c == ')') {
            ++pos_;
            tok.type = Token::Type::RParen;
            return tok;
        }
        if (c == '+' || c == '-' || c == '*' || c == '/' || c == '^') {
            ++pos_;
            tok.type = Token::Type::Op;
            tok.op = c;
            return tok;
        }
        throw Error(ErrorCode::SyntaxError,
                    "offset " + std::to_string(pos_) + ": unexpected character '" + c + "'");
    }

  private:
    const std::string& text_;
    size_t pos_ = 0;
};

} // namespace

class Parser {
  public:
    Parser(const std::string& text, const Dims& dims) : lexer_(text), dims_(dims) {
        cur_ = lexer_.next();
    }

    Expr run() {
        Expr e;
        e.dims_ = dims_;
        nodes_ = &e.nodes_;
        e.root_ = parse_sum();
        if (cur_.type != Token::Type::End)
            throw Error(ErrorCode::SyntaxError,
                        "offset " + std::to_string(cur_.offset) + ": expected end of input");
        return e;
    }

  private:
    Lexer lexer_;
    Dims dims_;
    Token cur_;
    std::vector<Expr::Node>* nodes_ = nullptr;

    void advance() { cur_ = lexer_.next(); }

    int add(Expr::Node nd) {
        nodes_->push_back(nd);
        return static_cast<int>(nodes_->size()) - 1;
    }

    [[noreturn]] void fail(const std::string& expected) {
        throw Error(ErrorCode::SyntaxError,
                    "offset " + std::to_string(cur_.offset) + ": expected " + expected);
    }

    int parse_sum() {
        int lhs = parse_term();
        while (cur_.type == Token::Type::Op && (cur_.op == '+' || cur_.op == '-')) {
            char op = cur_.op;
            advance();
            int rhs = parse_term();
            Expr::Node nd;
            nd.kind = op == '+' ? Expr::Kind::Add : Expr::Kind::Sub;
            nd.a = lhs;
            nd.b = rhs;
            lhs = add(nd);
        }
        return lhs;
    }

    int parse_term() {
        int lhs = parse_unary();
        while (cur_.type == Token::Type::Op && (cur_.op == '*' || cur_.op == '/')) {
            char op = cur_.op;
            advance();
            int rhs = parse_unary();
            Expr::Node nd;
            nd.kind = op == '*' ? Expr::Kind::Mul : Expr::Kind::Div;
            nd.a = lhs;
            nd.b = rhs;
            lhs = add(nd);
        }
        return lhs;
    }

    int parse_unary() {
        if (cur_.type == Token::Type::Op && cur_.op == '-') {
            advance();
            int inner = parse_unary();
            Expr::Node nd;
            nd.kind = Expr::Kind::Neg;
            nd.a = inner;
            return add(nd);
        }
        return parse_power();
    }

    int parse_power() {
        int base = parse_atom();
        if (cur_.type == Token::Type::Op && cur_.op == '^') {
            advance();
            int ex = parse_unary(); // right-associative, binds tighter than unary minus on the left
            Expr::Node nd;
            nd.kind = Expr::Kind::Pow;
            nd.a = base;
            nd.b = ex;
            const Expr::Node& exn = (*nodes_)[static_cast<size_t>(ex)];
            double ev = 0.0;
            bool is_const = false;
            if (exn.kind == Expr::Kind::Const) {
                ev = exn.value;
                is_const = true;
            } else if (exn.kind == Expr::Kind::Neg &&
                       (*nodes_)[static_cast<size_t>(exn.a)].kind == Expr::Kind::Const) {
                ev = -(*nodes_)[static_cast<size_t>(exn.a)].value;
                is_const = true;
            }
            if (is_const && ev == std::floor(ev) && std::abs(ev) < 64) {
                nd.int_pow = true;
                nd.ipow = static_cast<long>(ev);
            }
            return add(nd);
        }
        return base;
    }

    int parse_atom() {
        if (cur_.type == Token::Type::Number) {
            Expr::Node nd;
            nd.kind = Expr::Kind::Const;
            nd.value = cur_.number;
            advance();
            return add(nd);
        }
        if (cur_.type == Token::Type::Ident) {
            std::string name = cur_.ident;
            size_t off = cur_.offset;
            advance();
            if (cur_.type == Token::Type::LParen) {
                Expr::Func fn;
                if (name == "exp") fn = Expr::Func::Exp;
                else if (name == "log") fn = Expr::Func::Log;
                else if (name == "sin") fn = Expr::Func::Sin;
                else if (name == "cos") fn = Expr::Func::Cos;
                else if (name == "sqrt") fn = Expr::Func::Sqrt;
                else if (name == "abs") fn = Expr::Func::Abs;
                else
                    throw Error(ErrorCode::SyntaxError,
                                "offset " + std::to_string(off) + ": unknown function '" + name + "'");
                advance();
                int arg = parse_sum();
                if (cur_.type != Token::Type::RParen)
                    fail("')'");
                advance();
                Expr::Node nd;
                nd.kind = Expr::Kind::Call;
                nd.fn = fn;
                nd.a = arg;
                return add(nd);
            }
            int slot = dims_.slot_of(name);
            if (slot < 0)
                throw Error(ErrorCode::UnknownVariable, "unknown variable '" + name + "'");
            Expr::Node nd;
            nd.kind = Expr::Kind::Var;
            nd.slot = slot;
            return add(nd);
        }
        if (cur_.type == Token::Type::LParen) {
            advance();
            int inner = parse_sum();
            if (cur_.type != Token::Type::RParen)
                fail("')'");
            advance();
            return inner;
        }
        fail("number, variable, function or '('");
    }
};

Expr Expr::parse(const std::string& text, const Dims& dims) {
    return Parser(text, dims).run();
}

namespace {

std::vector<double> slots_from_map(const Dims& dims, const std::map<std::string, double>& bindings) {
    std::vector<double> slots(static_cast<size_t>(dims.slot_count()), 0.0);
    std::vector<bool> have(slots.size(), false);
    for (const auto& [name, value] : bindings) {
        int slot = dims.slot_of(name);
        if (slot < 0)
            throw Error(ErrorCode::UnknownVariable, "unknown variable '" + name + "'");
        slots[static_cast<size_t>(slot)] = value;
        have[static_cast<size_t>(slot)] = true;
    }
    return slots;
}

} // namespace

double Expr::eval(const std::map<std::string, double>& bindings) const {
    std::vector<double> slots = slots_from_map(dims_, bindings);
    for (int s : used_slots()) {
        if (bindings.find(dims_.slot_name(s)) == bindings.end())
            throw Error(ErrorCode::MissingBinding, "missing binding for '" + dims_.slot_name(s) + "'");
    }
    return eval(std::span<const double>(slots));
}

Expr::Directional Expr::directional(const std::map<std::string, double>& bindings,
                                    const std::map<std::string, double>& direction,
                                    int order) const {
    std::vector<double> point = slots_from_map(dims_, bindings);
    std::vector<double> seed(point.size(), 0.0);
    for (const auto& [name, value] : direction) {
        int slot = dims_.slot_of(name);
        if (slot < 0)
            throw Error(ErrorCode::UnknownVariable, "unknown variable '" + name + "'");
        seed[static_cast<size_t>(slot)] = value;
    }
    Directional out{};
    if (order == 1) {
        std::vector<Dual1> slots(point.size());
        for (size_t i = 0; i < point.size(); ++i)
            slots[i] = seed1(point[i], seed[i]);
        Dual1 r = eval<Dual1>(std::span<const Dual1>(slots));
        out.value = r.v;
        out.d1 = r.d;
    } else {
        std::vector<Dual2> slots(point.size());
        for (size_t i = 0; i < point.size(); ++i)
            slots[i] = seed2(point[i], seed[i], seed[i]);
        Dual2 r = eval<Dual2>(std::span<const Dual2>(slots));
        out.value = r.v.v;
        out.d1 = first(r);
        out.d2 = second(r);
    }
    return out;
}

double Expr::eval_d1(std::span<const double> point, std::span<const double> seed) const {
    std::vector<Dual1> slots(point.size());
    for (size_t i = 0; i < point.size(); ++i)
        slots[i] = seed1(point[i], seed[i]);
    return first(eval<Dual1>(std::span<const Dual1>(slots)));
}

double Expr::eval_d2(std::span<const double> point, std::span<const double> seed_a,
                     std::span<const double> seed_b) const {
    std::vector<Dual2> slots(point.size());
    for (size_t i = 0; i < point.size(); ++i)
        slots[i] = seed2(point[i], seed_a[i], seed_b[i]);
    return second(eval<Dual2>(std::span<const Dual2>(slots)));
}

double Expr::eval_d3(std::span<const double> point, std::span<const double> seed_a,
                     std::span<const double> seed_b, std::span<const double> seed_c) const {
    std::vector<Dual3> slots(point.size());
    for (size_t i = 0; i < point.size(); ++i)
        slots[i] = seed3(point[i], seed_a[i], seed_b[i], seed_c[i]);
    return third(eval<Dual3>(std::span<const Dual3>(slots)));
}

namespace {
// precedence levels for printing: + - = 1, * / = 2, unary - = 3, ^ = 4, atoms = 5
int node_prec(const Expr::Node& nd) {
    switch (nd.kind) {
    case Expr::Kind::Add:
    case Expr::Kind::Sub: return 1;
    case Expr::Kind::Mul:
    case Expr::Kind::Div: return 2;
    case Expr::Kind::Neg: return 3;
    case Expr::Kind::Pow: return 4;
    default: return 5;
    }
}
} // namespace

std::string Expr::print_node(int idx, int parent_prec, bool right_side) const {
    const Node& nd = nodes_[static_cast<size_t>(idx)];
    int prec = node_prec(nd);
    std::string body;
    switch (nd.kind) {
    case Kind::Const: {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", nd.value);
        body = buf;
        break;
    }
    case Kind::Var:
        body = dims_.slot_name(nd.slot);
        break;
    case Kind::Add:
        body = print_node(nd.a, prec, false) + "+" + print_node(nd.b, prec + 1, true);
        break;
    case Kind::Sub:
        body = print_node(nd.a, prec, false) + "-" + print_node(nd.b, prec + 1, true);
        break;
    case Kind::Mul:
        body = print_node(nd.a, prec, false) + "*" + print_node(nd.b, prec + 1, true);
        break;
    case Kind::Div:
        body = print_node(nd.a, prec, false) + "/" + print_node(nd.b, prec + 1, true);
        break;
    case Kind::Neg:
        body = "-" + print_node(nd.a, prec, true);
        break;
    case Kind::Pow:
        // ^ is right-associative; guard the base harder
        body = print_node(nd.a, prec + 1, false) + "^" + print_node(nd.b, prec, true);
        break;
    case Kind::Call: {
        const char* fname = "";
        switch (nd.fn) {
        case Func::Exp: fname = "exp"; break;
        case Func::Log: fname = "log"; break;
        case Func::Sin: fname = "sin"; break;
        case Func::Cos: fname = "cos"; break;
        case Func::Sqrt: fname = "sqrt"; break;
        case Func::Abs: fname = "abs"; break;
        }
        return std::string(fname) + "(" + print_node(nd.a, 0, false) + ")";
    }
    }
    (void)right_side;
    if (prec < parent_prec)
        return "(" + body + ")";
    return body;
}

std::string Expr::print() const { return print_node(root_, 0, false); }

bool Expr::equals_node(int a, const Expr& other, int b) const {
    const Node& na = nodes_[static_cast<size_t>(a)];
    const Node& nb = other.nodes_[static_cast<size_t>(b)];
    if (na.kind != nb.kind)
        return false;
    switch (na.kind) {
    case Kind::Const: return na.value == nb.value;
    case Kind::Var: return na.slot == nb.slot;
    case Kind::Neg:
    case Kind::Call:
        return (na.kind != Kind::Call || na.fn == nb.fn) && equals_node(na.a, other, nb.a);
    default:
        return equals_node(na.a, other, nb.a) && equals_node(na.b, other, nb.b);
    }
}

bool Expr::equals(const Expr& other) const {
    if (root_ < 0 || other.root_ < 0)
        return root_ == other.root_;
    return equals_node(root_, other, other.root_);
}

bool Expr::is_constant(double c) const {
    if (root_ < 0)
        return false;
    const Node& nd = nodes_[static_cast<size_t>(root_)];
    return nd.kind == Kind::Const && nd.value == c;
}

std::vector<int> Expr::used_slots() const {
    std::vector<bool> seen(static_cast<size_t>(dims_.slot_count()), false);
    for (const Node& nd : nodes_)
        if (nd.kind == Kind::Var)
            seen[static_cast<size_t>(nd.slot)] = true;
    std::vector<int> out;
    for (size_t i = 0; i < seen.size(); ++i)
        if (seen[i])
            out.push_back(static_cast<int>(i));
    return out;
}

} // namespace varhor
