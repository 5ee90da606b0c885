#ifndef VARHOR_EXPR_HPP
#define VARHOR_EXPR_HPP

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "varhor/dual.hpp"
#include "varhor/errors.hpp"

namespace varhor {

// Dimensions of the enclosing problem: state n, backward state m, Brownian d,
// control k. They fix the admissible variable names t, x1..xn, y1..ym,
// z11..zmd, u1..uk.
struct Dims {
    int n = 1;
    int m = 1;
    int d = 1;
    int k = 1;

    int slot_count() const { return 1 + n + m + m * d + k; }
    int t_slot() const { return 0; }
    int x_slot(int i) const { return 1 + i; }
    int y_slot(int i) const { return 1 + n + i; }
    int z_slot(int i, int j) const { return 1 + n + m + i * d + j; }
    int u_slot(int i) const { return 1 + n + m + m * d + i; }

    std::string slot_name(int slot) const;
    // Returns the slot for a declared variable name, or -1.
    int slot_of(const std::string& name) const;
};

// Immutable arithmetic expression over the declared variables. Evaluation is
// templated on the scalar type so dual numbers ride through unchanged.
class Expr {
  public:
    enum class Kind { Const, Var, Add, Sub, Mul, Div, Pow, Neg, Call };
    enum class Func { Exp, Log, Sin, Cos, Sqrt, Abs };

    struct Node {
        Kind kind;
        double value = 0.0; // Const
        int slot = -1;      // Var
        Func fn = Func::Exp;
        int a = -1;
        int b = -1;
        bool int_pow = false; // Pow with constant integer exponent
        long ipow = 0;
    };

    Expr() = default;

    static Expr parse(const std::string& text, const Dims& dims);

    const Dims& dims() const { return dims_; }

    template <class S>
    S eval(std::span<const S> slots) const {
        return eval_node<S>(root_, slots);
    }

    double eval(std::span<const double> slots) const { return eval_node<double>(root_, slots); }

    // Map-based evaluation per the public contract; keys are variable names.
    double eval(const std::map<std::string, double>& bindings) const;

    struct Directional {
        double value;
        double d1;
        std::optional<double> d2;
    };
    Directional directional(const std::map<std::string, double>& bindings,
                            const std::map<std::string, double>& direction,
                            int order) const;

    // Slot-vector derivative helpers used by the coefficient bundles.
    double eval_d1(std::span<const double> point, std::span<const double> seed) const;
    double eval_d2(std::span<const double> point, std::span<const double> seed_a,
                   std::span<const double> seed_b) const;
    double eval_d3(std::span<const double> point, std::span<const double> seed_a,
                   std::span<const double> seed_b, std::span<const double> seed_c) const;

    std::string print() const;

    bool equals(const Expr& other) const;

    // True when the tree is the literal constant c.
    bool is_constant(double c) const;

    // Variables referenced by the tree.
    std::vector<int> used_slots() const;

  private:
    std::vector<Node> nodes_;
    int root_ = -1;
    Dims dims_;

    friend class Parser;

    template <class S>
    S eval_node(int idx, std::span<const S> slots) const;

    static void check_finite(double v, const char* op);

    std::string print_node(int idx, int parent_prec, bool right_side) const;
    bool equals_node(int a, const Expr& other, int b) const;
};

template <class S>
S Expr::eval_node(int idx, std::span<const S> slots) const {
    const Node& nd = nodes_[static_cast<size_t>(idx)];
    switch (nd.kind) {
    case Kind::Const:
        return S(nd.value);
    case Kind::Var:
        return slots[static_cast<size_t>(nd.slot)];
    case Kind::Add: {
        S r = eval_node<S>(nd.a, slots) + eval_node<S>(nd.b, slots);
        check_finite(primal(r), "+");
        return r;
    }
    case Kind::Sub: {
        S r = eval_node<S>(nd.a, slots) - eval_node<S>(nd.b, slots);
        check_finite(primal(r), "-");
        return r;
    }
    case Kind::Mul: {
        S r = eval_node<S>(nd.a, slots) * eval_node<S>(nd.b, slots);
        check_finite(primal(r), "*");
        return r;
    }
    case Kind::Div: {
        S den = eval_node<S>(nd.b, slots);
        if (primal(den) == 0.0)
            throw Error(ErrorCode::DomainError, "division by zero");
        S r = eval_node<S>(nd.a, slots) / den;
        check_finite(primal(r), "/");
        return r;
    }
    case Kind::Neg:
        return -eval_node<S>(nd.a, slots);
    case Kind::Pow: {
        S base = eval_node<S>(nd.a, slots);
        if (nd.int_pow) {
            long e = nd.ipow;
            if (e == 0)
                return S(1.0);
            bool inv = e < 0;
            if (inv) {
                if (primal(base) == 0.0)
                    throw Error(ErrorCode::DomainError, "zero base with negative exponent");
                e = -e;
            }
            S acc(1.0);
            S p = base;
            while (e > 0) {
                if (e & 1)
                    acc = acc * p;
                e >>= 1;
                if (e > 0)
                    p = p * p;
            }
            S r = inv ? S(1.0) / acc : acc;
            check_finite(primal(r), "^");
            return r;
        }
        if (primal(base) <= 0.0)
            throw Error(ErrorCode::DomainError, "non-positive base in ^ with non-integer exponent");
        S ex = eval_node<S>(nd.b, slots);
        S r = exp(ex * log(base));
        check_finite(primal(r), "^");
        return r;
    }
    case Kind::Call: {
        S arg = eval_node<S>(nd.a, slots);
        S r{};
        switch (nd.fn) {
        case Func::Exp:
            r = exp(arg);
            break;
        case Func::Log:
            if (primal(arg) <= 0.0)
                throw Error(ErrorCode::DomainError, "log of non-positive argument");
            r = log(arg);
            break;
        case Func::Sin:
            r = sin(arg);
            break;
        case Func::Cos:
            r = cos(arg);
            break;
        case Func::Sqrt:
            if (primal(arg) < 0.0)
                throw Error(ErrorCode::DomainError, "sqrt of negative argument");
            r = sqrt(arg);
            break;
        case Func::Abs:
            r = abs(arg);
            break;
        }
        check_finite(primal(r), "call");
        return r;
    }
    }
    throw Error(ErrorCode::DomainError, "corrupt expression tree");
}

} // namespace varhor

#endif
