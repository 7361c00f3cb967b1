#include <cmath>
#include <cstring>
#include <sstream>

#include <doctest.h>

#include "octseg/grad_check.hpp"
#include "octseg/tensor.hpp"

using namespace octseg;

TEST_CASE("shape bookkeeping and scalar access") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.at({1, 2}) == 6.0);
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(t.value(), std::invalid_argument);
}

TEST_CASE("elementwise forward values") {
    Tensor a = Tensor::from_data({3}, {1, -2, 3});
    Tensor b = Tensor::from_data({3}, {2, 0.5, -1});
    CHECK((a + b).data() == std::vector<double>{3, -1.5, 2});
    CHECK((a * b).data() == std::vector<double>{2, -1, -3});
    CHECK(sigmoid(Tensor::scalar(0.0)).value() == doctest::Approx(0.5));
    CHECK(relu(Tensor::scalar(-2.0)).value() == 0.0);
    CHECK(relu(Tensor::scalar(3.0)).value() == 3.0);
}

TEST_CASE("softmax over [0, ln 3] gives [0.25, 0.75]") {
    Tensor x = Tensor::from_data({2}, {0.0, std::log(3.0)});
    Tensor y = softmax(x, 0);
    CHECK(y.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y.data()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("shape mismatch diagnostics name both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 5});
    try {
        Tensor c = add(a, b);
        FAIL("expected a throw");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(4,5)") != std::string::npos);
    }
}

TEST_CASE("non-finite outputs are rejected") {
    Tensor z = Tensor::scalar(0.0);
    CHECK_THROWS_AS(log(z), std::runtime_error);
    set_finite_checks(false);
    CHECK(std::isinf(log(z).value()));
    set_finite_checks(true);
}

TEST_CASE("broadcasting matches numpy semantics") {
    Tensor a = Tensor::from_data({2, 1, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b = Tensor::from_data({2, 1}, {10, 20});
    Tensor c = add(a, b);
    CHECK(c.shape() == Shape{2, 2, 3});
    CHECK(c.at({0, 0, 0}) == 11.0);
    CHECK(c.at({0, 1, 2}) == 23.0);
    CHECK(c.at({1, 1, 0}) == 24.0);
}

TEST_CASE("backward accumulates through reused leaves") {
    // Using x twice must produce the sum of both path gradients.
    Tensor x = Tensor::from_data({1}, {1.5}, true);
    Tensor doubled = add(x, x);
    x.zero_grad();
    sum(doubled).backward();
    CHECK(x.grad()[0] == 2.0);

    Tensor y = Tensor::from_data({1}, {1.5}, true);
    Tensor single = mul_scalar(y, 2.0);
    y.zero_grad();
    sum(single).backward();
    CHECK(y.grad()[0] == x.grad()[0]);
}

TEST_CASE("round_ste forward ties go away from zero, backward is identity") {
    Tensor x = Tensor::from_data({5}, {0.4, 0.6, 0.5, -0.5, -1.2}, true);
    Tensor y = round_ste(x);
    CHECK(y.data() == std::vector<double>{0, 1, 1, -1, -1});
    Tensor upstream = Tensor::from_data({5}, {0.3, -7.0, 2.5, 11.0, 1e-3});
    x.zero_grad();
    sum(mul(y, upstream)).backward();
    for (int i = 0; i < 5; ++i) CHECK(x.grad()[i] == upstream.data()[i]);
}

TEST_CASE("matmul and conv2d forward spot values") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c.data() == std::vector<double>{19, 22, 43, 50});

    // 1x3x3 input, identity-ish 1x1x3x3 kernel with center tap 2.
    Tensor x = Tensor::from_data({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    std::vector<double> w(9, 0.0);
    w[4] = 2.0;
    Tensor k = Tensor::from_data({1, 1, 3, 3}, std::move(w));
    Tensor y = conv2d(x, k, Tensor(), 1);
    CHECK(y.shape() == Shape{1, 3, 3});
    CHECK(y.at({0, 1, 1}) == 10.0);
    CHECK(y.at({0, 0, 0}) == 2.0);
}

TEST_CASE("determinism: identical op sequences produce identical bits") {
    auto run = [] {
        std::vector<Tensor> in = random_inputs({{4, 5}, {4, 5}}, 99);
        Tensor out = mean(mul(sigmoid(in[0]), exp(mul_scalar(in[1], 0.3))));
        return out.value();
    };
    const double a = run(), b = run();
    CHECK(std::memcmp(&a, &b, sizeof(double)) == 0);
}

TEST_CASE("grad_check: linear op is exact and sigmoid is tight") {
    GradCheckResult lin = grad_check(
        [](const std::vector<Tensor>& in) { return mul_scalar(in[0], 3.0); },
        {Tensor::from_data({1}, {2.0}, true)}, 1e-5, 1e-9, 7);
    CHECK(lin.ok);
    CHECK(lin.worst < 1e-9);

    GradCheckResult sig = grad_check(
        [](const std::vector<Tensor>& in) { return sigmoid(in[0]); },
        {Tensor::from_data({1}, {1.0}, true)}, 1e-5, 1e-6, 7);
    CHECK(sig.ok);
    CHECK(sig.worst < 1e-6);
}

TEST_CASE("grad_check resamples near rectifier kinks") {
    int calls = 0;
    auto sampler = [&calls](std::uint64_t) {
        ++calls;
        return std::vector<Tensor>{Tensor::from_data({1}, {1.7}, true)};
    };
    GradCheckResult res = grad_check(
        [](const std::vector<Tensor>& in) { return relu(in[0]); },
        {Tensor::from_data({1}, {1e-5}, true)}, 1e-5, 1e-4, 7, sampler);
    CHECK(res.resamples == 1);
    CHECK(res.ok);
}

TEST_CASE("gradcheck suite: every primitive and loss under 1e-4") {
    for (const OpCheckResult& r : run_gradcheck_suite()) {
        INFO(r.name, " err ", r.max_rel_err);
        CHECK(r.ok);
    }
}

TEST_CASE("csv dump is row-major with one row per first-axis slice") {
    Tensor t = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    std::ostringstream os;
    t.to_csv(os);
    CHECK(os.str() == "1,2\n3,4\n");
}
