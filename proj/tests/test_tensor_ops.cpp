#include <catch_amalgamated.hpp>

#include <cmath>

#include "avx/ops.hpp"

using namespace avx;
using Catch::Approx;

TEST_CASE("matmul matches hand computation", "[tensor]") {
    const Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    const Tensor b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
    const Tensor c = matmul(a, b);
    REQUIRE(c.shape() == Shape{2, 2});
    CHECK(c.at(0, 0) == 58);
    CHECK(c.at(0, 1) == 64);
    CHECK(c.at(1, 0) == 139);
    CHECK(c.at(1, 1) == 154);
}

TEST_CASE("shape mismatches raise DimensionError", "[tensor]") {
    const Tensor a = Tensor::zeros({2, 3});
    const Tensor b = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
    CHECK_THROWS_AS(add(a, Tensor::zeros({3, 2})), DimensionError);
    CHECK_THROWS_AS(concat_rows({a, Tensor::zeros({1, 4})}), DimensionError);
}

TEST_CASE("backward accumulates into leaves and refuses reuse", "[tensor]") {
    Tensor x = Tensor::from({1, 2}, {3, -1}, true);
    Tensor loss = sum(mul(x, x));
    backward(loss);
    CHECK(x.grad()[0] == 6);
    CHECK(x.grad()[1] == -2);
    CHECK(x.grad_touched());
    CHECK_THROWS_AS(backward(loss), ContractError);

    backward(sum(x));
    CHECK(x.grad()[0] == 7);  // gradients add up until zero_grad
    x.zero_grad();
    CHECK(x.grad()[0] == 0);
}

TEST_CASE("backward needs a scalar", "[tensor]") {
    Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    CHECK_THROWS_AS(backward(scale(x, 2)), ContractError);
}

TEST_CASE("no-grad scope records nothing", "[tensor]") {
    Tensor x = Tensor::from({1, 2}, {1, 2}, true);
    Tensor y;
    {
        NoGradGuard guard;
        CHECK_FALSE(grad_enabled());
        y = mul(x, x);
    }
    CHECK(grad_enabled());
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("gelu uses the tanh approximation", "[tensor]") {
    CHECK(gelu_value(0) == 0);
    CHECK(gelu_value(1) == Approx(0.8411920).margin(1e-6));
    CHECK(gelu_value(-3) == Approx(-0.0036374).margin(1e-6));
}

TEST_CASE("layer_norm normalizes each row", "[tensor]") {
    const Tensor x = Tensor::from({2, 4}, {1, 2, 3, 4, -2, 0, 2, 8});
    const Tensor y = layer_norm(x, Tensor::full({4}, 1), Tensor::zeros({4}));
    for (int r = 0; r < 2; ++r) {
        double m = 0, v = 0;
        for (int c = 0; c < 4; ++c) m += y.at(r, c);
        m /= 4;
        for (int c = 0; c < 4; ++c) v += (y.at(r, c) - m) * (y.at(r, c) - m);
        CHECK(m == Approx(0).margin(1e-6));
        CHECK(v / 4 == Approx(1).margin(1e-4));
    }
}

TEST_CASE("embedding rejects ids outside the table", "[tensor]") {
    const Tensor table = Tensor::zeros({4, 2});
    const std::vector<int> bad{0, 4};
    CHECK_THROWS_AS(embedding(table, bad), std::out_of_range);
}

TEST_CASE("softmax cross-entropy", "[tensor]") {
    const Tensor logits = Tensor::from({2, 3}, {0, 0, 0, 1, 2, 3});
    SECTION("uniform logits give log(V)") {
        const std::vector<int> labels{1, kIgnoreLabel};
        CHECK(softmax_ce_loss(logits, labels).item() == Approx(std::log(3.0)).margin(1e-6));
    }
    SECTION("all ignored gives zero") {
        const std::vector<int> labels{kIgnoreLabel, kIgnoreLabel};
        CHECK(softmax_ce_loss(logits, labels).item() == 0);
    }
    SECTION("labels outside the vocabulary are rejected") {
        const std::vector<int> labels{3, 0};
        CHECK_THROWS_AS(softmax_ce_loss(logits, labels), std::out_of_range);
    }
}

TEST_CASE("causal attention lets the first position see only itself", "[tensor]") {
    const Tensor q = Tensor::from({3, 2}, {1, 0, 0, 1, 1, 1});
    const Tensor k = Tensor::from({3, 2}, {1, 0, 0, 1, 1, 1});
    const Tensor v = Tensor::from({3, 2}, {10, 20, 30, 40, 50, 60});
    const Tensor y = attention(q, k, v, 1, AttentionMask{true, {}});
    CHECK(y.at(0, 0) == Approx(10));
    CHECK(y.at(0, 1) == Approx(20));

    // Masking key 0 out leaves the second row looking only at itself.
    const std::vector<uint8_t> valid{0, 1, 1};
    const Tensor z = attention(q, k, v, 1, AttentionMask{true, valid});
    CHECK(z.at(1, 0) == Approx(30));
    CHECK(z.at(1, 1) == Approx(40));
}

TEST_CASE("conv1d output length follows stride and padding", "[tensor]") {
    const Tensor x = Tensor::zeros({9, 2});
    const Tensor w = Tensor::zeros({6, 4});
    const Tensor b = Tensor::zeros({4});
    CHECK(conv1d(x, w, b, 3, 1, 1).rows() == 9);
    CHECK(conv1d(x, w, b, 3, 2, 1).rows() == 5);
}

TEST_CASE("conv1d with an identity tap reproduces the input", "[tensor]") {
    const Tensor x = Tensor::from({3, 1}, {1, 2, 3});
    const Tensor w = Tensor::from({3, 1}, {0, 1, 0});  // centre tap only
    const Tensor y = conv1d(x, w, Tensor::zeros({1}), 3, 1, 1);
    CHECK(y.at(0, 0) == 1);
    CHECK(y.at(1, 0) == 2);
    CHECK(y.at(2, 0) == 3);
}

TEST_CASE("ops are bitwise repeatable", "[tensor]") {
    const Tensor a = Tensor::from({2, 3}, {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f});
    const Tensor b = Tensor::from({3, 2}, {1.1f, -0.2f, 0.3f, 0.9f, -0.5f, 0.7f});
    const Tensor y1 = gelu(matmul(a, b));
    const Tensor y2 = gelu(matmul(a, b));
    for (size_t i = 0; i < y1.data().size(); ++i) CHECK(y1.data()[i] == y2.data()[i]);
}
