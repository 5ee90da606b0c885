#ifndef VARHOR_DUAL_HPP
#define VARHOR_DUAL_HPP

#include <cmath>
#include <type_traits>

namespace varhor {

// Forward-mode dual number over an arbitrary scalar base. Nesting
// Dual<Dual<double>> yields exact second directional derivatives,
// Dual<Dual<Dual<double>>> exact third ones.
template <class T>
struct Dual {
    T v{}; // value part
    T d{}; // derivative part

    Dual() = default;
    Dual(T value) : v(value), d() {}
    Dual(T value, T deriv) : v(value), d(deriv) {}
    // lift a plain constant through arbitrary nesting depth
    Dual(double value) requires(!std::is_same_v<T, double>) : v(value), d() {}
};

inline double primal(double x) { return x; }
template <class T>
double primal(const Dual<T>& x) { return primal(x.v); }

template <class T> Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) { return {a.v + b.v, a.d + b.d}; }
template <class T> Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) { return {a.v - b.v, a.d - b.d}; }
template <class T> Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }
template <class T> Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) {
    return {a.v * b.v, a.d * b.v + a.v * b.d};
}
template <class T> Dual<T> operator/(const Dual<T>& a, const Dual<T>& b) {
    T q = a.v / b.v;
    return {q, (a.d - q * b.d) / b.v};
}

using std::exp; using std::log; using std::sin; using std::cos; using std::sqrt; using std::abs;

template <class T> Dual<T> exp(const Dual<T>& a) { T e = exp(a.v); return {e, a.d * e}; }
template <class T> Dual<T> log(const Dual<T>& a) { return {log(a.v), a.d / a.v}; }
template <class T> Dual<T> sin(const Dual<T>& a) { return {sin(a.v), a.d * cos(a.v)}; }
template <class T> Dual<T> cos(const Dual<T>& a) { return {cos(a.v), -a.d * sin(a.v)}; }
template <class T> Dual<T> sqrt(const Dual<T>& a) {
    T s = sqrt(a.v);
    return {s, a.d / (s + s)};
}
template <class T> Dual<T> abs(const Dual<T>& a) {
    double sign = primal(a.v) < 0.0 ? -1.0 : 1.0;
    return {sign < 0 ? -a.v : a.v, sign < 0 ? -a.d : a.d};
}

using Dual1 = Dual<double>;
using Dual2 = Dual<Dual<double>>;
using Dual3 = Dual<Dual<Dual<double>>>;

// Seeds for directional differentiation: value x with direction s in the
// requested derivative slot(s).
inline Dual1 seed1(double x, double s) { return {x, s}; }

inline Dual2 seed2(double x, double s_outer, double s_inner) {
    Dual2 r;
    r.v = Dual1{x, s_inner};
    r.d = Dual1{s_outer, 0.0};
    return r;
}

inline Dual3 seed3(double x, double s1, double s2, double s3) {
    Dual3 r;
    r.v.v = Dual1{x, s3};
    r.v.d = Dual1{s2, 0.0};
    r.d.v = Dual1{s1, 0.0};
    r.d.d = Dual1{0.0, 0.0};
    return r;
}

inline double first(const Dual1& r) { return r.d; }
inline double first(const Dual2& r) { return r.d.v; }
inline double second(const Dual2& r) { return r.d.d; } // mixed d^2 along the two seeds
inline double third(const Dual3& r) { return r.d.d.d; } // mixed d^3 along the three seeds

} // namespace varhor

#endif
