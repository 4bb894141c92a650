#include <cstring>
#include <random>
#include <vector>

#include "doctest.h"
#include "ppgkit/kernels.hpp"

using namespace ppg::kern;

namespace {

std::vector<double> randvec(size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matmul variants match their serial reference bit for bit") {
    std::mt19937_64 rng(7);
    for (int m : {1, 3, 17}) {
        for (int k : {1, 5, 32}) {
            for (int n : {1, 4, 19}) {
                const auto a = randvec(static_cast<size_t>(m) * k, rng);
                const auto b_nn = randvec(static_cast<size_t>(k) * n, rng);
                const auto b_nt = randvec(static_cast<size_t>(n) * k, rng);
                const auto a_tn = randvec(static_cast<size_t>(m) * k, rng);
                const auto b_tn = randvec(static_cast<size_t>(m) * n, rng);

                std::vector<double> c1(static_cast<size_t>(m) * n), c2 = c1;
                detail::matmul_nn_serial(a.data(), b_nn.data(), c1.data(), m, k, n);
                detail::matmul_nn_omp(a.data(), b_nn.data(), c2.data(), m, k, n);
                CHECK(bit_equal(c1, c2));

                detail::matmul_nt_serial(a.data(), b_nt.data(), c1.data(), m, k, n);
                detail::matmul_nt_omp(a.data(), b_nt.data(), c2.data(), m, k, n);
                CHECK(bit_equal(c1, c2));

                std::vector<double> d1(static_cast<size_t>(k) * n), d2 = d1;
                detail::matmul_tn_serial(a_tn.data(), b_tn.data(), d1.data(), m, k, n);
                detail::matmul_tn_omp(a_tn.data(), b_tn.data(), d2.data(), m, k, n);
                CHECK(bit_equal(d1, d2));
            }
        }
    }
}

TEST_CASE("conv1d forward and backward kernels match serial bit for bit") {
    std::mt19937_64 rng(11);
    const int nb = 2, cin = 3, len = 19, cout = 4, k = 5;
    const auto x = randvec(static_cast<size_t>(nb) * cin * len, rng);
    const auto w = randvec(static_cast<size_t>(cout) * cin * k, rng);
    const auto bias = randvec(cout, rng);

    for (int stride : {1, 2}) {
        for (auto [pl, pr] : {std::pair{0, 0}, std::pair{2, 2}, std::pair{4, 0}}) {
            const int lout = (len + pl + pr - k) / stride + 1;
            REQUIRE(lout >= 1);
            std::vector<double> y1(static_cast<size_t>(nb) * cout * lout), y2 = y1;
            detail::conv1d_fwd_serial(x.data(), w.data(), bias.data(), y1.data(), nb, cin,
                                      len, cout, k, stride, pl, pr);
            detail::conv1d_fwd_omp(x.data(), w.data(), bias.data(), y2.data(), nb, cin, len,
                                   cout, k, stride, pl, pr);
            CHECK(bit_equal(y1, y2));

            const auto dy = randvec(y1.size(), rng);
            std::vector<double> dx1(x.size(), 0.0), dx2 = dx1;
            detail::conv1d_bwd_x_serial(dy.data(), w.data(), dx1.data(), nb, cin, len, cout,
                                        k, stride, pl, pr);
            detail::conv1d_bwd_x_omp(dy.data(), w.data(), dx2.data(), nb, cin, len, cout, k,
                                     stride, pl, pr);
            CHECK(bit_equal(dx1, dx2));

            std::vector<double> dw1(w.size(), 0.0), dw2 = dw1;
            detail::conv1d_bwd_w_serial(dy.data(), x.data(), dw1.data(), nb, cin, len, cout,
                                        k, stride, pl, pr);
            detail::conv1d_bwd_w_omp(dy.data(), x.data(), dw2.data(), nb, cin, len, cout, k,
                                     stride, pl, pr);
            CHECK(bit_equal(dw1, dw2));

            std::vector<double> db1(cout, 0.0), db2 = db1;
            detail::conv1d_bwd_b_serial(dy.data(), db1.data(), nb, cout, lout);
            detail::conv1d_bwd_b_omp(dy.data(), db2.data(), nb, cout, lout);
            CHECK(bit_equal(db1, db2));
        }
    }
}

TEST_CASE("public entry points honor the backend switch") {
    std::mt19937_64 rng(13);
    const int m = 6, k = 9, n = 5;
    const auto a = randvec(static_cast<size_t>(m) * k, rng);
    const auto b = randvec(static_cast<size_t>(k) * n, rng);
    std::vector<double> ref(static_cast<size_t>(m) * n);
    detail::matmul_nn_serial(a.data(), b.data(), ref.data(), m, k, n);

    const Backend saved = backend();
    for (Backend be : {Backend::serial, Backend::openmp}) {
        backend() = be;
        std::vector<double> out(ref.size(), 0.0);
        matmul_nn(a.data(), b.data(), out.data(), m, k, n);
        CHECK(bit_equal(out, ref));
    }
    backend() = saved;

    if (openmp_compiled()) CHECK(max_threads() >= 1);
}
