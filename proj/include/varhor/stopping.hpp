#ifndef VARHOR_STOPPING_HPP
#define VARHOR_STOPPING_HPP

#include <optional>
#include <string>

#include "varhor/sim.hpp"

namespace varhor {

// Trichotomy of the terminal time: mean constraint met strictly before T,
// met inside the band [T - band_cells*dt, T], or never met on [0, T].
enum class CaseTag { BeforeT, AtT, Never };

std::string case_name(CaseTag c);

struct StoppingResult {
    double tau_hat = 0.0;
    std::optional<int> cross_index; // first grid index with m(t_i) >= alpha
    CaseTag case_tag = CaseTag::Never;
    Curve m_curve; // Ê[Phi(X(t))]
    Curve h_curve; // drift of the mean-constraint curve
};

struct TauDerivative {
    CaseTag case_tag = CaseTag::Never;
    double value = 0.0;       // integral branch (BeforeT / AtT) or 0 (Never)
    double value_alt = 0.0;   // AtT only: the alternative branch (always 0)
    bool has_alt = false;     // AtT reports both candidates without choosing
};

StoppingResult stopping_time(const ProblemSpec& spec, const PathEnsemble& ensemble,
                             int at_T_band_cells = 2);

Curve h_process(const ProblemSpec& spec, const PathEnsemble& ensemble,
                const ControlPath& control);

// Directional derivative of the h-curve in control direction v, by
// common-random-number finite differences in rho with Richardson extrapolation.
Curve h_bar(const ProblemSpec& spec, const ControlPath& control, const ControlPath& v,
            const TimeGrid& grid, int M, std::uint64_t seed);

TauDerivative tau_derivative(const ProblemSpec& spec, const ControlPath& control,
                             const ControlPath& v, const TimeGrid& grid, int M,
                             std::uint64_t seed);

// shared guard: interpolated h at tau_hat, DegenerateH if |h| <= 1e-8
double h_at_tau(const Curve& h_curve, double tau_hat);

} // namespace varhor

#endif
