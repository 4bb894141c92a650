#include "ppgkit/fusion.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "ppgkit/errors.hpp"

namespace ppg {

void NbtsfSpec::validate() const {
    if (h_dim < 1 || z_dim < 1) throw std::invalid_argument("NbtsfSpec: feature dims must be positive");
    if (l < 1) throw std::invalid_argument("NbtsfSpec: l must be >= 1");
    if (iterations < 0) throw std::invalid_argument("NbtsfSpec: iterations must be >= 0");
    if (kernel < 1) throw std::invalid_argument("NbtsfSpec: kernel must be positive");
}

Nbtsf::Nbtsf(const NbtsfSpec& spec, ParamStore& ps, const std::string& group, std::uint64_t seed)
    : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    const int k = spec_.k();
    w1_ = ps.reg(group, init_he_uniform({k, spec_.h_dim}, spec_.h_dim, rng));
    w2_ = ps.reg(group, init_he_uniform({k, spec_.z_dim}, spec_.z_dim, rng));
    u_ = ps.reg(group, init_he_uniform({spec_.l}, spec_.l, rng));
    v_ = ps.reg(group, init_he_uniform({spec_.l}, spec_.l, rng));
    w1p_ = ps.reg(group, init_he_uniform({spec_.l, spec_.h_dim}, spec_.h_dim, rng));
    w2p_ = ps.reg(group, init_he_uniform({spec_.l, spec_.z_dim}, spec_.z_dim, rng));
    if (spec_.iterations == 0) return;  // refinement layers would never see gradients
    s2t_spec_ = ConvLayer(k, k, spec_.kernel, 1, ps, group, rng);
    s2t_temp_l_ = ConvLayer(spec_.l, spec_.l, spec_.kernel, 1, ps, group, rng);
    s2t_temp_r_ = ConvLayer(spec_.l, spec_.l, spec_.kernel, 1, ps, group, rng);
    s2t_bn_ = BnLayer(spec_.l, ps, group);
    t2s_temp_l_ = ConvLayer(spec_.l, spec_.l, spec_.kernel, 1, ps, group, rng);
    t2s_temp_r_ = ConvLayer(spec_.l, spec_.l, spec_.kernel, 1, ps, group, rng);
    t2s_spec_ = ConvLayer(k, k, spec_.kernel, 1, ps, group, rng);
    t2s_bn_ = BnLayer(k, ps, group);
}

Tensor Nbtsf::forward(const Tensor& h, const Tensor& z, const FwdCtx& ctx) {
    if (h.ndim() != 2 || z.ndim() != 2 || h.dim(0) != z.dim(0))
        throw std::invalid_argument("Nbtsf: need matching batches of (B,h_dim) and (B,z_dim)");
    if (h.dim(1) != spec_.h_dim || z.dim(1) != spec_.z_dim)
        throw std::invalid_argument("Nbtsf: feature widths do not match spec");

    auto bilinear = [&](const Tensor& a, const Tensor& b) {
        // F[i][j] = a_i u_j b_i v_j = (a*b)_i (u*v)_j
        return outer_rows(mul(a, b), mul(u_, v_));
    };

    Tensor a = linear_nb(h, w1_);  // (B,k)
    Tensor b = linear_nb(z, w2_);  // (B,k)
    Tensor f = bilinear(a, b);     // (B,k,l)

    for (int it = 0; it < spec_.iterations; ++it) {
        // rank-axis conv, then bicausal feature-axis conv, normalized
        Tensor s = transpose_last2(s2t_spec_.same(f));  // (B,l,k)
        s = add(s2t_temp_l_.causal(s, true), s2t_temp_r_.causal(s, false));
        s = s2t_bn_.forward(s, ctx);
        a = mean_lastdim(transpose_last2(s));  // (B,k)

        // reversed order on the z side
        Tensor t = transpose_last2(f);  // (B,l,k)
        t = add(t2s_temp_l_.causal(t, true), t2s_temp_r_.causal(t, false));
        t = t2s_spec_.same(transpose_last2(t));  // (B,k,l)
        t = t2s_bn_.forward(t, ctx);
        b = mean_lastdim(t);  // (B,k)

        f = bilinear(a, b);
    }

    Tensor w = add(linear_nb(h, w1p_), linear_nb(z, w2p_));  // (B,l)
    return add_broadcast_over_rows(f, w);
}

Tensor nbtsf_fuse(Nbtsf& n, const Tensor& h, const Tensor& z, const FwdCtx& ctx) {
    Tensor hb = reshape(h, {1, n.spec().h_dim});
    Tensor zb = reshape(z, {1, n.spec().z_dim});
    return reshape(n.forward(hb, zb, ctx), {n.spec().k(), n.spec().l});
}

// ---- ordinary least squares combiner ------------------------------------

FusionReport ols_fit(const Mat& x, const std::vector<double>& y) {
    if (x.cols != 3) throw std::invalid_argument("ols_fit: X must have 3 columns");
    const int m = x.rows;
    if (m < 4 || static_cast<int>(y.size()) != m)
        throw std::invalid_argument("ols_fit: need at least 4 aligned rows");

    double mean_y = 0.0;
    for (double v : y) mean_y += v;
    mean_y /= m;
    double ss_tot = 0.0;
    for (double v : y) ss_tot += (v - mean_y) * (v - mean_y);
    if (ss_tot == 0.0) throw std::invalid_argument("ols_fit: constant target");

    Eigen::MatrixXd a(m, 4);
    Eigen::VectorXd yv(m);
    for (int i = 0; i < m; ++i) {
        a(i, 0) = 1.0;
        for (int j = 0; j < 3; ++j) a(i, j + 1) = x.at(i, j);
        yv(i) = y[i];
    }
    Eigen::VectorXd beta = a.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(yv);

    double ss_res = 0.0;
    for (int i = 0; i < m; ++i) {
        const double fit = beta(0) + beta(1) * x.at(i, 0) + beta(2) * x.at(i, 1) + beta(3) * x.at(i, 2);
        ss_res += (y[i] - fit) * (y[i] - fit);
    }

    FusionReport rep;
    rep.phi0 = beta(0);
    rep.phi = {beta(1), beta(2), beta(3)};
    rep.r_squared = 1.0 - ss_res / ss_tot;
    return rep;
}

double ternary_predict(const std::array<double, 3>& preds, const FusionReport& report) {
    for (double p : preds)
        if (!std::isfinite(p)) throw NumericError("ternary_predict: non-finite component prediction");
    if (!std::isfinite(report.phi0) || !std::isfinite(report.phi[0]) || !std::isfinite(report.phi[1]) ||
        !std::isfinite(report.phi[2]))
        throw NumericError("ternary_predict: non-finite report");
    return report.phi0 + report.phi[0] * preds[0] + report.phi[1] * preds[1] + report.phi[2] * preds[2];
}

}  // namespace ppg
