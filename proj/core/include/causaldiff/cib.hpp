#pragma once

#include <cstdint>
#include <vector>

#include "causaldiff/models.hpp"
#include "causaldiff/rng.hpp"
#include "causaldiff/tensor.hpp"

namespace causaldiff {

struct CIBWeights {
    double alpha = 1.0;
    double gamma = 1e-2;
    double eta = 1e-5;
    double lambda = 1e-2;
};

// total = alpha*denoise + gamma*ce + eta*club + lambda*kl, each component kept
// separately for logging and for the linearity tests.
struct CIBComponents {
    Tensor total;
    Tensor denoise;
    Tensor ce;
    Tensor club;
    Tensor kl;
};

// CLUB mutual-information estimate: positive-pair mean log density minus the
// mean over a within-batch shuffle of s. Batch size 1 gives exactly 0.
Tensor club_estimate(const Tensor& s, const Tensor& z, const ClubNet& club, Rng& rng);

// Mean over the batch of the closed-form KL to N(0, I).
Tensor kl_to_prior(const LatentPosterior& post);

Tensor ce_loss(const Tensor& logits, const std::vector<int>& labels);

// One stochastic evaluation of the full objective: fresh per-sample t and eps,
// reparameterized encoder sample.
CIBComponents cib_loss(const CausalModel& model, const Tensor& x, const std::vector<int>& y,
                       const CIBWeights& w, Rng& rng);

// ---- discrete MI oracle ------------------------------------------------------

// Probability table over finite alphabets, indexed p(x, y, s, z). When built
// by random_scm it factorizes as p(s) p(z) p(x|s,z) p(y|s).
struct DiscreteJoint {
    std::size_t nx = 2, ny = 2, ns = 2, nz = 2;
    std::vector<double> p;

    double& at(std::size_t ix, std::size_t iy, std::size_t is, std::size_t iz);
    double at(std::size_t ix, std::size_t iy, std::size_t is, std::size_t iz) const;

    static DiscreteJoint random_scm(std::size_t nx, std::size_t ny, std::size_t ns, std::size_t nz,
                                    Rng& rng);
    // X = (S,Z) bijectively, Y = S; binary alphabets.
    static DiscreteJoint copy_scm();

    bool factorizes(double tol = 1e-9) const;
};

struct MiDecomposition {
    double lhs;  // I(X,Y; S,Z)
    double rhs;  // I(X;S,Z) + I(Y;S) - I(S;Z) - I(X;Y)
    double gap;  // |lhs - rhs|
    double i_x_sz, i_ys, i_sz, i_xy;
};

// Exhaustive-enumeration check of the information decomposition. Throws if the
// joint does not factorize as an SCM (the identity is only claimed there).
MiDecomposition mi_decomposition_check(const DiscreteJoint& joint);

// Analytic MI of a bivariate normal with correlation rho.
double gaussian_mi(double rho);

}  // namespace causaldiff
