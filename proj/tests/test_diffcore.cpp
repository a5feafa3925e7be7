#include <doctest.h>

#include <cmath>

#include "gmsl/diffcore.hpp"
#include "gmsl/rng.hpp"

using namespace gmsl;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, gmsl::Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.uniform(lo, hi);
    return m;
}

// Keeps relu inputs away from the kink so finite differences stay clean.
Matrix random_nondegenerate(std::size_t r, std::size_t c, gmsl::Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.data) {
        do {
            v = rng.uniform(-1.0, 1.0);
        } while (std::fabs(v) <= 1e-3);
    }
    return m;
}

}  // namespace

TEST_CASE("relu forward") {
    Tape tape;
    Tensor x = tape.constant(Shape::vec(3), {-1.0, 0.0, 2.0});
    Tensor y = relu(x);
    CHECK(tape.value(y) == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("row softmax of a constant row is uniform") {
    Tape tape;
    Tensor x = tape.constant(Shape::mat(2, 4), std::vector<double>(8, 3.7));
    Tensor s = row_softmax(x);
    for (double v : tape.value(s)) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("matmul identity") {
    Tape tape;
    Tensor eye = tape.constant(Shape::mat(3, 3), {1, 0, 0, 0, 1, 0, 0, 0, 1});
    gmsl::Rng rng(1);
    Matrix a = random_matrix(3, 4, rng);
    Tensor ta = tape.constant(a);
    Tensor out = matmul(eye, ta);
    CHECK(tape.value(out) == a.data);
}

TEST_CASE("backward of sum is ones") {
    Tape tape;
    Tensor x = tape.leaf(Shape::vec(3), {1.0, -2.0, 5.0}, true);
    tape.backward(sum_all(x));
    CHECK(tape.grad(x) == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("backward through relu masks negatives") {
    Tape tape;
    Tensor x = tape.leaf(Shape::vec(2), {-1.0, 2.0}, true);
    tape.backward(sum_all(relu(x)));
    CHECK(tape.grad(x) == std::vector<double>{0.0, 1.0});
}

TEST_CASE("dot product gradients swap operands") {
    Tape tape;
    std::vector<double> xv = {1.0, 2.0, 3.0}, yv = {-1.0, 0.5, 4.0};
    Tensor x = tape.leaf(Shape::vec(3), xv, true);
    Tensor y = tape.leaf(Shape::vec(3), yv, true);
    tape.backward(sum_all(mul(x, y)));
    CHECK(tape.grad(x) == yv);
    CHECK(tape.grad(y) == xv);
}

TEST_CASE("unreachable tensors get zero gradient") {
    Tape tape;
    Tensor x = tape.leaf(Shape::vec(2), {1.0, 2.0}, true);
    Tensor orphan = tape.leaf(Shape::vec(2), {5.0, 6.0}, true);
    tape.backward(sum_all(x));
    CHECK(tape.grad(orphan) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("backward requires a scalar") {
    Tape tape;
    Tensor x = tape.leaf(Shape::vec(2), {1.0, 2.0}, true);
    CHECK_THROWS_AS(tape.backward(relu(x)), NonScalarLossError);
}

TEST_CASE("log rejects non-positive input") {
    Tape tape;
    Tensor x = tape.constant(Shape::vec(2), {1.0, -0.5});
    CHECK_THROWS_AS(log(x), DomainError);
    Tensor zero = tape.constant(Shape::vec(1), {0.0});
    CHECK_THROWS_AS(log(zero), DomainError);
}

TEST_CASE("shape errors are typed") {
    Tape tape;
    Tensor a = tape.constant(Shape::mat(2, 3), std::vector<double>(6, 1.0));
    Tensor b = tape.constant(Shape::mat(2, 2), std::vector<double>(4, 1.0));
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(concat(a, b, 0), ShapeError);
    CHECK_THROWS_AS(concat(a, b, 2), ShapeError);
}

TEST_CASE("row softmax rows sum to one and shift invariance") {
    gmsl::Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix m = random_matrix(4, 6, rng, -30.0, 30.0);
        Tape tape;
        Tensor s = row_softmax(tape.constant(m));
        const auto& sv = tape.value(s);
        for (std::size_t i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 6; ++j) sum += sv[i * 6 + j];
            CHECK(std::fabs(sum - 1.0) <= 1e-12);
        }
        //

        Matrix shifted = m;
        double c = rng.uniform(-100.0, 100.0);
        for (std::size_t j = 0; j < 6; ++j) shifted.at(2, j) += c;
        Tape tape2;
        Tensor s2 = row_softmax(tape2.constant(shifted));
        for (std::size_t j = 0; j < 6; ++j)
            CHECK(std::fabs(tape2.value(s2)[2 * 6 + j] - sv[2 * 6 + j]) <= 1e-12);
    }
}

TEST_CASE("backward is bit-deterministic") {
    gmsl::Rng rng(6);
    Matrix a = random_matrix(5, 4, rng), b = random_matrix(4, 3, rng);
    auto run = [&]() {
        Tape tape;
        Tensor ta = tape.variable(a);
        Tensor tb = tape.variable(b);
        Tensor loss = sum_all(relu(matmul(ta, tb)));
        tape.backward(loss);
        return std::pair(tape.grad(ta), tape.grad(tb));
    };
    auto r1 = run();
    auto r2 = run();
    CHECK(r1.first == r2.first);
    CHECK(r1.second == r2.second);
}

TEST_CASE("grad_check validates epsilon range") {
    auto f = [](Tape&, const std::vector<Tensor>& xs) { return sum_all(xs[0]); };
    CHECK_THROWS_AS(grad_check(f, {Matrix(1, 1, 1.0)}, 1e-8), DomainError);
    CHECK_THROWS_AS(grad_check(f, {Matrix(1, 1, 1.0)}, 1e-2), DomainError);
}

TEST_CASE("grad_check: linear map") {
    gmsl::Rng rng(7);
    Matrix a = random_matrix(4, 5, rng);
    auto f = [&](Tape& tape, const std::vector<Tensor>& xs) {
        return sum_all(matmul(tape.constant(a), xs[0]));
    };
    CHECK(grad_check(f, {random_matrix(5, 3, rng)}, 1e-5) < 1e-6);
}

TEST_CASE("grad_check: relu of matmul away from kinks") {
    gmsl::Rng rng(8);
    auto f = [](Tape&, const std::vector<Tensor>& xs) {
        return sum_all(relu(matmul(xs[0], xs[1])));
    };
    double err = grad_check(f, {random_nondegenerate(3, 4, rng), random_nondegenerate(4, 2, rng)},
                            1e-6);
    CHECK(err < 1e-4);
}

TEST_CASE("grad_check: softmax cross entropy composite") {
    gmsl::Rng rng(9);
    Matrix target(3, 3);
    for (std::size_t i = 0; i < 3; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
            target.at(i, j) = 0.1 + rng.next_double();
            sum += target.at(i, j);
        }
        for (std::size_t j = 0; j < 3; ++j) target.at(i, j) /= sum;
    }
    auto f = [&](Tape& tape, const std::vector<Tensor>& xs) {
        Tensor lsm = log_row_softmax(xs[0]);
        return scalar_mul(sum_all(mul(tape.constant(target), lsm)), -1.0 / 3.0);
    };
    CHECK(grad_check(f, {random_matrix(3, 3, rng, -2.0, 2.0)}, 1e-5) < 1e-4);
}

TEST_CASE("grad_check: every primitive at random non-degenerate inputs") {
    gmsl::Rng rng(10);
    int checks = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t r = 2 + rng.below(3), c = 2 + rng.below(3), k = 2 + rng.below(3);
        Matrix a = random_nondegenerate(r, c, rng);
        Matrix b = random_nondegenerate(r, c, rng);
        Matrix m2 = random_nondegenerate(c, k, rng);

        auto check1 = [&](auto&& prog, const std::vector<Matrix>& inputs) {
            CHECK(grad_check(prog, inputs, 1e-6) <= 1e-4);
            ++checks;
        };
        switch (trial % 10) {
            case 0:
                check1([](Tape&, const std::vector<Tensor>& xs) {
                    return sum_all(matmul(xs[0], xs[1]));
                }, {a, m2});
                break;
            case 1:
                check1([](Tape&, const std::vector<Tensor>& xs) {
                    return sum_all(mul(add(xs[0], xs[1]), sub(xs[0], xs[1])));
                }, {a, b});
                break;
            case 2:
                check1([](Tape&, const std::vector<Tensor>& xs) {
                    return sum_all(relu(xs[0]));
                }, {a});
                break;
            case 3:
                check1([](Tape&, const std::vector<Tensor>& xs) {
                    return sum_all(mul(concat(xs[0], xs[1], 1), concat(xs[1], xs[0], 1)));
                }, {a, b});
                break;
            case 4:
                check1([](Tape&, const std::vector<Tensor>& xs) {
                    Tensor s = sum_rows(xs[0]);
                    return sum_all(mul(s, s));
                }, {a});
                break;
            case 5: {
                IndexLists lists;
                for (std::size_t i = 0; i < r + 1; ++i) {
                    std::vector<int> l;
                    std::size_t len = rng.below(r + 1);
                    for (std::size_t j = 0; j < len; ++j)
                        l.push_back(static_cast<int>(rng.below(r)));
                    lists.push_back(l);
                }
                check1([lists](Tape&, const std::vector<Tensor>& xs) {
                    Tensor g = gather_sum(xs[0], lists);
                    return sum_all(mul(g, g));
                }, {a});
                break;
            }
            case 6: {
                // log/exp need positive input: shift into (0.5, 2.5).
                Matrix pos = a;
                for (double& v : pos.data) v = std::fabs(v) + 0.5;
                check1([](Tape&, const std::vector<Tensor>& xs) {
                    return sum_all(mul(log(xs[0]), exp(scalar_mul(xs[0], 0.3))));
                }, {pos});
                break;
            }
            case 7:
                check1([&](Tape& tape, const std::vector<Tensor>& xs) {
                    Tensor w = tape.constant(b);
                    return sum_all(mul(row_softmax(xs[0]), w));
                }, {a});
                break;
            case 8:
                check1([&](Tape& tape, const std::vector<Tensor>& xs) {
                    Tensor w = tape.constant(b);
                    return sum_all(mul(log_row_softmax(xs[0]), w));
                }, {a});
                break;
            case 9: {
                Matrix w = random_matrix(r, r, rng);
                check1([w](Tape& tape, const std::vector<Tensor>& xs) {
                    return sum_all(mul(cosine_rows(xs[0], xs[1]), tape.constant(w)));
                }, {a, b});
                break;
            }
        }
    }
    CHECK(checks == 100);
}

TEST_CASE("grad_check: transpose and stack_rows") {
    gmsl::Rng rng(12);
    Matrix a = random_nondegenerate(3, 4, rng);
    auto f1 = [](Tape&, const std::vector<Tensor>& xs) {
        Tensor t = transpose(xs[0]);
        return sum_all(mul(t, t));
    };
    CHECK(grad_check(f1, {a}, 1e-6) <= 1e-5);

    Matrix r1 = random_nondegenerate(1, 4, rng);
    Matrix r2 = random_nondegenerate(1, 4, rng);
    auto f2 = [](Tape&, const std::vector<Tensor>& xs) {
        Tensor s = stack_rows({xs[0], xs[1], xs[0]});
        return sum_all(mul(s, s));
    };
    CHECK(grad_check(f2, {r1, r2}, 1e-6) <= 1e-5);
}

TEST_CASE("cosine_rows values and zero-norm error") {
    Tape tape;
    Tensor a = tape.constant(Shape::mat(2, 2), {1.0, 0.0, 1.0, 1.0});
    Tensor c = cosine_rows(a, a);
    const auto& v = tape.value(c);
    CHECK(v[0] == doctest::Approx(1.0));
    CHECK(v[3] == doctest::Approx(1.0));
    CHECK(v[1] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));

    Tensor z = tape.constant(Shape::mat(1, 2), {0.0, 0.0});
    CHECK_THROWS_AS(cosine_rows(z, a), ZeroNormError);
}

TEST_CASE("same-tape discipline is enforced") {
    Tape t1, t2;
    Tensor a = t1.constant(Shape::vec(2), {1.0, 2.0});
    Tensor b = t2.constant(Shape::vec(2), {3.0, 4.0});
    CHECK_THROWS_AS(add(a, b), ShapeError);
}
