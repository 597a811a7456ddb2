#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "driftlab/expand.hpp"

namespace driftlab {

// Primitive Gaussian sources: Brownian levels W_a, independent fBm levels G_a,
// noise coordinates eps_i. System variables are linear combinations of these;
// covariances come from the closed-form kernels
//   cov(W_a, W_b)   = min(a, b)
//   cov(G_a, G_b)   = 1/2 (a^{2H} + b^{2H} - |a-b|^{2H})
//   cov(eps_i, eps_j) = sigma^2 delta_ij (white), (sigma^2/2theta) e^{-theta|t_i-t_j|} (OU)
struct Prim {
    enum class Fam { W, G, Eps };
    Fam fam = Fam::W;
    double time = 0.0;
    int index = 0;  // Eps only
};

struct GaussVar {
    std::string label;
    std::vector<std::pair<Prim, double>> combo;
};

struct KernelParams {
    double hurst = 0.5;
    NoiseModel noise;
    double init_noise_var = 0.0;  // InitialSignal nu (Eps index -1)
};

double cov(const GaussVar& a, const GaussVar& b, const KernelParams& kp);
// Right derivative d/dt cov(W_t, v) at t (one-sided where |t - a| kinks).
double dcov_dt(double t, const GaussVar& v);

// Finite joint Gaussian law of labelled variables.
struct GaussianSystem {
    std::vector<std::string> labels;
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    Eigen::Index index_of(const std::string& label) const;
    // Symmetry within 1e-12 and eigenvalues >= -1e-10.
    void validate() const;
};

// E[target | observed] = intercept + weights . observed.
struct ConditionalRepr {
    std::string target;
    std::vector<std::string> observed;
    Eigen::VectorXd weights;
    double intercept = 0.0;
    double residual_var = 0.0;
    bool ridge_used = false;

    double evaluate(const Eigen::VectorXd& observed_values) const {
        return intercept + weights.dot(observed_values);
    }
};

ConditionalRepr condition(const GaussianSystem& sys, const std::string& target,
                          const std::vector<std::string>& observed);

// Observed-variable descriptor, enough for callers to materialize per-path
// values from ensemble channels.
struct ObsVar {
    enum class Kind { anchor_w, resolved_w, signal_incr };
    Kind kind = Kind::anchor_w;
    double time = 0.0;          // anchor_w / resolved_w
    std::size_t obs_index = 0;  // signal_incr: increment slot in the obs grid
    std::string label;
};

// Joint law of target W_t, anchor W_s and everything revealed by time s.
struct AssembledSystem {
    GaussianSystem sys;
    std::vector<GaussVar> vars;       // aligned with sys.labels
    std::vector<ObsVar> observed;     // all variables except the target
    Eigen::Index target = 0;          // index in sys of W_t
    Eigen::Index anchor = -1;         // index of W_s (-1 at s = 0)
    KernelParams kp;
};

AssembledSystem assemble_full(const ExpansionSpec& spec, double s, double t);
// Spec operation: the plain system (Bessel ladder / time change are rejected
// with unsupported_spec).
GaussianSystem assemble(const ExpansionSpec& spec, double s, double t);

// alpha_s as a fixed weight vector over the observed variables (drifts are
// linear in the observations for every supported Gaussian spec).
struct DriftWeights {
    std::vector<ObsVar> observed;
    Eigen::VectorXd weights;

    double apply(const Eigen::VectorXd& values) const { return weights.dot(values); }
};

// d/dt E[W_t | G_s] at t = s+ via analytic kernel derivatives.
DriftWeights projection_drift_weights(const ExpansionSpec& spec, double s);
// Sensitivity of the Gaussian log conditional signal density to W_s:
// (y - m_s)^T C_s^{-1} beta_s, the bracket d[q, M] / (q d[M,M]).
DriftWeights jacod_drift_weights(const ExpansionSpec& spec, double s);

double projection_drift(const ExpansionSpec& spec, double s,
                        const Eigen::VectorXd& observed_values);
double jacod_drift(const ExpansionSpec& spec, double s,
                   const Eigen::VectorXd& observed_values);
// Central finite difference of the conditional mean taken inside the right
// neighborhood (centered at s + h, step h), where the mean is linear in t.
double projection_drift_fd(const ExpansionSpec& spec, double s,
                           const Eigen::VectorXd& observed_values, double h = 1e-6);

// Joint law of W at the given times, labels "W@<time>"; used for direct
// Brownian conditioning (time-change representation checks).
GaussianSystem brownian_system(const std::vector<double>& times);

}  // namespace driftlab
