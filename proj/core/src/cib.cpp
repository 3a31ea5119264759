#include "causaldiff/cib.hpp"

#include <cmath>

#include "causaldiff/diffusion.hpp"
#include "causaldiff/ops.hpp"

namespace causaldiff {

Tensor club_estimate(const Tensor& s, const Tensor& z, const ClubNet& club, Rng& rng) {
    if (s.rows() != z.rows())
        throw TensorError("club_estimate: batch mismatch " + shape_str(s.shape()) + " vs " +
                          shape_str(z.shape()));
    auto perm = rng.permutation(s.rows());
    Tensor positive = mean_all(club.log_prob_rows(s, z));
    Tensor negative = mean_all(club.log_prob_rows(select_rows(s, perm), z));
    return sub(positive, negative);
}

Tensor kl_to_prior(const LatentPosterior& post) { return mean_all(post.kl_rows()); }

Tensor ce_loss(const Tensor& logits, const std::vector<int>& labels) {
    return softmax_cross_entropy(logits, labels);
}

namespace {
void check_component(const char* term, const Tensor& t) {
    if (!all_finite(t)) throw NumericError(std::string("cib_loss: non-finite ") + term + " term");
}
}  // namespace

CIBComponents cib_loss(const CausalModel& model, const Tensor& x, const std::vector<int>& y,
                       const CIBWeights& w, Rng& rng) {
    if (w.alpha < 0 || w.gamma < 0 || w.eta < 0 || w.lambda < 0)
        throw TensorError("cib_loss: weights must be non-negative");
    const auto& sched = model.schedule();
    std::vector<std::size_t> t(x.rows());
    for (auto& ti : t) ti = static_cast<std::size_t>(rng.randint(1, static_cast<std::int64_t>(sched.steps)));
    Tensor eps = rng.normal_tensor(x.shape());

    auto enc = model.encode(x, rng);

    CIBComponents c;
    c.denoise = denoise_loss(model.denoiser(), x, t, eps, enc.s, enc.z, sched);
    check_component("denoise", c.denoise);
    c.ce = ce_loss(model.classify(enc.s), y);
    check_component("cross-entropy", c.ce);
    if (model.disentangled()) {
        c.club = club_estimate(enc.s, enc.z, model.club(), rng);
    } else {
        c.club = Tensor::scalar(0.0);
    }
    check_component("club", c.club);
    c.kl = kl_to_prior(enc.posterior);
    check_component("kl", c.kl);

    c.total = add(add(mul_const(c.denoise, w.alpha), mul_const(c.ce, w.gamma)),
                  add(mul_const(c.club, w.eta), mul_const(c.kl, w.lambda)));
    return c;
}

// ---- discrete oracle -----------------------------------------------------------

double& DiscreteJoint::at(std::size_t ix, std::size_t iy, std::size_t is, std::size_t iz) {
    return p[((ix * ny + iy) * ns + is) * nz + iz];
}

double DiscreteJoint::at(std::size_t ix, std::size_t iy, std::size_t is, std::size_t iz) const {
    return p[((ix * ny + iy) * ns + is) * nz + iz];
}

DiscreteJoint DiscreteJoint::random_scm(std::size_t nx, std::size_t ny, std::size_t ns,
                                        std::size_t nz, Rng& rng) {
    auto random_dist = [&rng](std::size_t n) {
        std::vector<double> v(n);
        double tot = 0;
        for (auto& x : v) {
            x = 0.05 + rng.uniform();  // floor keeps conditionals well defined
            tot += x;
        }
        for (auto& x : v) x /= tot;
        return v;
    };

    auto ps = random_dist(ns);
    auto pz = random_dist(nz);
    std::vector<std::vector<double>> px_sz(ns * nz);
    for (auto& d : px_sz) d = random_dist(nx);
    std::vector<std::vector<double>> py_s(ns);
    for (auto& d : py_s) d = random_dist(ny);

    DiscreteJoint j;
    j.nx = nx;
    j.ny = ny;
    j.ns = ns;
    j.nz = nz;
    j.p.assign(nx * ny * ns * nz, 0.0);
    for (std::size_t is = 0; is < ns; ++is)
        for (std::size_t iz = 0; iz < nz; ++iz)
            for (std::size_t ix = 0; ix < nx; ++ix)
                for (std::size_t iy = 0; iy < ny; ++iy)
                    j.at(ix, iy, is, iz) = ps[is] * pz[iz] * px_sz[is * nz + iz][ix] * py_s[is][iy];
    return j;
}

DiscreteJoint DiscreteJoint::copy_scm() {
    DiscreteJoint j;
    j.nx = 4;
    j.ny = 2;
    j.ns = 2;
    j.nz = 2;
    j.p.assign(j.nx * j.ny * j.ns * j.nz, 0.0);
    for (std::size_t is = 0; is < 2; ++is)
        for (std::size_t iz = 0; iz < 2; ++iz)
            j.at(is * 2 + iz, is, is, iz) = 0.25;
    return j;
}

bool DiscreteJoint::factorizes(double tol) const {
    std::vector<double> p_s(ns, 0), p_z(nz, 0), p_sz(ns * nz, 0), p_ys(ny * ns, 0),
        p_xsz(nx * ns * nz, 0);
    for (std::size_t ix = 0; ix < nx; ++ix)
        for (std::size_t iy = 0; iy < ny; ++iy)
            for (std::size_t is = 0; is < ns; ++is)
                for (std::size_t iz = 0; iz < nz; ++iz) {
                    double v = at(ix, iy, is, iz);
                    p_s[is] += v;
                    p_z[iz] += v;
                    p_sz[is * nz + iz] += v;
                    p_ys[iy * ns + is] += v;
                    p_xsz[(ix * ns + is) * nz + iz] += v;
                }
    for (std::size_t is = 0; is < ns; ++is)
        for (std::size_t iz = 0; iz < nz; ++iz)
            if (std::abs(p_sz[is * nz + iz] - p_s[is] * p_z[iz]) > tol) return false;
    // p(x,y,s,z) * p(s) == p(x,s,z) * p(y,s) expresses y _||_ (x,z) | s.
    for (std::size_t ix = 0; ix < nx; ++ix)
        for (std::size_t iy = 0; iy < ny; ++iy)
            for (std::size_t is = 0; is < ns; ++is)
                for (std::size_t iz = 0; iz < nz; ++iz) {
                    double lhs = at(ix, iy, is, iz) * p_s[is];
                    double rhs = p_xsz[(ix * ns + is) * nz + iz] * p_ys[iy * ns + is];
                    if (std::abs(lhs - rhs) > tol) return false;
                }
    return true;
}

namespace {

double xlogx_ratio(double joint, double prod) {
    if (joint <= 0.0) return 0.0;
    return joint * std::log(joint / prod);
}

}  // namespace

MiDecomposition mi_decomposition_check(const DiscreteJoint& j) {
    if (!j.factorizes())
        throw TensorError("mi_decomposition_check: joint does not factorize as an SCM");

    std::vector<double> p_x(j.nx, 0), p_y(j.ny, 0), p_s(j.ns, 0), p_z(j.nz, 0);
    std::vector<double> p_xy(j.nx * j.ny, 0), p_sz(j.ns * j.nz, 0), p_ys(j.ny * j.ns, 0),
        p_xsz(j.nx * j.ns * j.nz, 0);
    for (std::size_t ix = 0; ix < j.nx; ++ix)
        for (std::size_t iy = 0; iy < j.ny; ++iy)
            for (std::size_t is = 0; is < j.ns; ++is)
                for (std::size_t iz = 0; iz < j.nz; ++iz) {
                    double v = j.at(ix, iy, is, iz);
                    p_x[ix] += v;
                    p_y[iy] += v;
                    p_s[is] += v;
                    p_z[iz] += v;
                    p_xy[ix * j.ny + iy] += v;
                    p_sz[is * j.nz + iz] += v;
                    p_ys[iy * j.ns + is] += v;
                    p_xsz[(ix * j.ns + is) * j.nz + iz] += v;
                }

    MiDecomposition d{};
    for (std::size_t ix = 0; ix < j.nx; ++ix)
        for (std::size_t iy = 0; iy < j.ny; ++iy)
            for (std::size_t is = 0; is < j.ns; ++is)
                for (std::size_t iz = 0; iz < j.nz; ++iz)
                    d.lhs += xlogx_ratio(j.at(ix, iy, is, iz),
                                         p_xy[ix * j.ny + iy] * p_sz[is * j.nz + iz]);

    for (std::size_t ix = 0; ix < j.nx; ++ix)
        for (std::size_t is = 0; is < j.ns; ++is)
            for (std::size_t iz = 0; iz < j.nz; ++iz)
                d.i_x_sz += xlogx_ratio(p_xsz[(ix * j.ns + is) * j.nz + iz],
                                        p_x[ix] * p_sz[is * j.nz + iz]);
    for (std::size_t iy = 0; iy < j.ny; ++iy)
        for (std::size_t is = 0; is < j.ns; ++is)
            d.i_ys += xlogx_ratio(p_ys[iy * j.ns + is], p_y[iy] * p_s[is]);
    for (std::size_t is = 0; is < j.ns; ++is)
        for (std::size_t iz = 0; iz < j.nz; ++iz)
            d.i_sz += xlogx_ratio(p_sz[is * j.nz + iz], p_s[is] * p_z[iz]);
    for (std::size_t ix = 0; ix < j.nx; ++ix)
        for (std::size_t iy = 0; iy < j.ny; ++iy)
            d.i_xy += xlogx_ratio(p_xy[ix * j.ny + iy], p_x[ix] * p_y[iy]);

    d.rhs = d.i_x_sz + d.i_ys - d.i_sz - d.i_xy;
    d.gap = std::abs(d.lhs - d.rhs);
    return d;
}

double gaussian_mi(double rho) { return -0.5 * std::log(1.0 - rho * rho); }

}  // namespace causaldiff
