#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "eclab/numcore/checkpoint.hpp"
#include "eclab/numcore/nn.hpp"
#include "support/grad_suite.hpp"

using namespace eclab;
using namespace eclab::num;
using eclab::testing::gradcheck;

namespace {

Tensor random_tensor(Shape shape, Prng& rng, double lo = -1.0, double hi = 1.0, bool rg = true) {
  Tensor t = Tensor::zeros(std::move(shape), DType::f64, rg);
  for (std::size_t i = 0; i < t.numel(); ++i) t.buffer().set(i, rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST_CASE("backward on linear and quadratic losses") {
  Tensor x = Tensor::from({1, 2, 3}, {3}, DType::f64, true);
  sum(x).backward();
  CHECK(x.grad_vector() == std::vector<double>{1, 1, 1});

  Tensor y = Tensor::from({1, 2}, {2}, DType::f64, true);
  sum(mul(y, y)).backward();
  CHECK(y.grad_vector() == std::vector<double>{2, 4});

  // Accumulates across uses and calls.
  sum(y).backward();
  CHECK(y.grad_vector() == std::vector<double>{3, 5});
}

TEST_CASE("backward rejects non-scalar loss and names the op that produced NaN") {
  Tensor x = Tensor::from({1, 2}, {2}, DType::f64, true);
  CHECK_THROWS_AS(mul_scalar(x, 2).backward(), ContractError);

  Tensor nan_w = Tensor::from({std::nan(""), 1.0}, {2}, DType::f64);
  Tensor loss = sum(mul(tanh(x), nan_w));
  try {
    loss.backward();
    FAIL("expected divergence error");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("tanh") != std::string::npos);
  }
}

TEST_CASE("shape mismatch errors list both shapes") {
  Tensor a = Tensor::zeros({2, 3}, DType::f64);
  Tensor b = Tensor::zeros({4, 5}, DType::f64);
  try {
    matmul(a, b);
    FAIL("expected shape error");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(4, 5)") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(concat({a, b}, 0), ShapeError);
}

TEST_CASE("softmax and layer_norm reference values") {
  Tensor s = softmax(Tensor::from({0, 0}, {2}, DType::f64));
  CHECK(s.at(0) == doctest::Approx(0.5));
  CHECK(s.at(1) == doctest::Approx(0.5));

  Tensor c = layer_norm(Tensor::full({1, 5}, 3.25, DType::f64), Tensor(), Tensor());
  for (double v : c.to_vector()) CHECK(v == 0.0);

  // Max-subtraction keeps extreme but finite logits NaN-free.
  for (DType dt : {DType::f32, DType::f64}) {
    Tensor big = Tensor::from({1e4, -1e4, 0, 9999.5}, {1, 4}, dt);
    for (double v : softmax(big).to_vector()) CHECK(std::isfinite(v));
    for (double v : log_softmax(big).to_vector()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("causal attention matches a dense loop oracle") {
  Prng rng(11);
  const std::size_t g = 2, t = 3, d = 4;
  Tensor q = random_tensor({g, t, d}, rng), k = random_tensor({g, t, d}, rng),
         v = random_tensor({g, t, d}, rng);
  AttentionMask mask;
  mask.causal = true;
  Tensor out = scaled_dot_attention(q, k, v, mask);
  for (std::size_t gi = 0; gi < g; ++gi) {
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> w;
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0;
        for (std::size_t c = 0; c < d; ++c) s += q.at((gi * t + i) * d + c) * k.at((gi * t + j) * d + c);
        w.push_back(std::exp(s / std::sqrt(double(d))));
      }
      const double z = std::accumulate(w.begin(), w.end(), 0.0);
      for (std::size_t c = 0; c < d; ++c) {
        double ref = 0;
        for (std::size_t j = 0; j <= i; ++j) ref += w[j] / z * v.at((gi * t + j) * d + c);
        CHECK(out.at((gi * t + i) * d + c) == doctest::Approx(ref).epsilon(1e-12));
      }
    }
  }
  // Row 0 only sees key 0: perturbing later values leaves it fixed.
  Tensor v2 = v.clone();
  v2.buffer().set((0 * t + 2) * d, 100.0);
  Tensor out2 = scaled_dot_attention(q, k, v2, mask);
  CHECK(out2.at(0) == out.at(0));
}

TEST_CASE("every differentiable primitive passes finite differences over random shapes") {
  const auto cases = testing::primitive_cases(20);
  CHECK(cases.size() > 500);
  for (const auto& c : cases) {
    INFO(c.name << ": " << c.result.worst);
    CHECK(c.result.ok);
  }
}

TEST_CASE("softmax_cross_entropy agrees with log_softmax + pick") {
  Prng rng(3);
  Tensor x = random_tensor({4, 6}, rng, -3, 3);
  std::vector<int> t{0, 5, 2, 3};
  Tensor fused = softmax_cross_entropy(x, t);
  Tensor ref = neg(pick(log_softmax(x), t));
  for (std::size_t i = 0; i < 4; ++i) CHECK(fused.at(i) == doctest::Approx(ref.at(i)).epsilon(1e-12));
}

TEST_CASE("gumbel_softmax") {
  Prng rng(5);
  Tensor logits = Tensor::from({0.3, -1.2, 2.0, 0.0, 0.7}, {1, 5}, DType::f64);

  SUBCASE("soft outputs sum to one") {
    for (int i = 0; i < 50; ++i) {
      Tensor y = gumbel_softmax(logits, 1.0, rng, false);
      double s = 0;
      for (double v : y.to_vector()) s += v;
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
    Tensor y32 = gumbel_softmax(logits.to(DType::f32), 1.0, rng, false);
    double s = 0;
    for (double v : y32.to_vector()) s += v;
    CHECK(std::abs(s - 1.0) < 1e-6);
  }

  SUBCASE("low temperature converges to one-hot of the perturbed argmax") {
    Tensor noise = sample_gumbel_noise(logits.shape(), DType::f64, rng);
    Tensor perturbed = add(logits, noise);
    const int best = argmax_rows(perturbed)[0];
    Tensor y = gumbel_softmax_with_noise(logits, noise, 1e-4, false);
    for (int j = 0; j < 5; ++j) CHECK(y.at(j) == doctest::Approx(j == best ? 1.0 : 0.0).epsilon(1e-6));
  }

  SUBCASE("hard mode is one-hot forward with the soft gradient") {
    Tensor l = logits.clone();
    l.set_requires_grad(true);
    Tensor noise = sample_gumbel_noise(l.shape(), DType::f64, rng);
    Tensor w = Tensor::from({1, 2, 3, 4, 5}, {1, 5}, DType::f64);
    Tensor y = gumbel_softmax_with_noise(l, noise, 1.0, true);
    double s = 0;
    for (double v : y.to_vector()) {
      CHECK((v == 0.0 || v == 1.0));
      s += v;
    }
    CHECK(s == 1.0);
    sum(mul(y, w)).backward();
    auto hard_grad = l.grad_vector();
    Tensor l2 = logits.clone();
    l2.set_requires_grad(true);
    sum(mul(gumbel_softmax_with_noise(l2, noise, 1.0, false), w)).backward();
    auto soft_grad = l2.grad_vector();
    for (int j = 0; j < 5; ++j) CHECK(hard_grad[j] == doctest::Approx(soft_grad[j]));
  }

  SUBCASE("hard sample frequencies match softmax(logits) within 3 sigma") {
    const int draws = 100000;
    std::vector<int> counts(5, 0);
    Prng g(99);
    for (int i = 0; i < draws; ++i) {
      Tensor noise = sample_gumbel_noise(logits.shape(), DType::f64, g);
      counts[argmax_rows(add(logits, noise))[0]]++;
    }
    Tensor p = softmax(logits);
    for (int j = 0; j < 5; ++j) {
      const double pj = p.at(j);
      const double sigma = std::sqrt(draws * pj * (1 - pj));
      CHECK(std::abs(counts[j] - draws * pj) < 3 * sigma);
    }
  }

  SUBCASE("non-positive temperature is rejected") {
    CHECK_THROWS_AS(gumbel_softmax(logits, 0.0, rng, false), ContractError);
    CHECK_THROWS_AS(gumbel_softmax(logits, -1.0, rng, true), ContractError);
  }
}

TEST_CASE("gru_cell") {
  Prng rng(21);
  SUBCASE("zero weights halve the hidden state") {
    GruParams p = make_gru(3, 4, rng, DType::f64);
    for (Tensor* t : {&p.w_z, &p.b_z, &p.w_r, &p.b_r, &p.w_h, &p.b_h}) t->buffer().fill(0.0);
    Tensor x = random_tensor({2, 3}, rng), h = random_tensor({2, 4}, rng);
    Tensor out = gru_cell(x, h, p);
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == doctest::Approx(0.5 * h.at(i)));
  }

  SUBCASE("matches a scalar loop reference") {
    const std::size_t e = 2, hd = 2;
    GruParams p = make_gru(e, hd, rng, DType::f64);
    Tensor x = random_tensor({1, e}, rng), h = random_tensor({1, hd}, rng);
    Tensor out = gru_cell(x, h, p);
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<double> xh{x.at(0), x.at(1), h.at(0), h.at(1)};
    std::vector<double> z(hd), r(hd);
    for (std::size_t j = 0; j < hd; ++j) {
      double sz = p.b_z.at(j), sr = p.b_r.at(j);
      for (std::size_t i = 0; i < e + hd; ++i) {
        sz += xh[i] * p.w_z.at(i * hd + j);
        sr += xh[i] * p.w_r.at(i * hd + j);
      }
      z[j] = sig(sz);
      r[j] = sig(sr);
    }
    std::vector<double> xrh{x.at(0), x.at(1), r[0] * h.at(0), r[1] * h.at(1)};
    for (std::size_t j = 0; j < hd; ++j) {
      double sc = p.b_h.at(j);
      for (std::size_t i = 0; i < e + hd; ++i) sc += xrh[i] * p.w_h.at(i * hd + j);
      const double ref = (1 - z[j]) * h.at(j) + z[j] * std::tanh(sc);
      CHECK(out.at(j) == doctest::Approx(ref).epsilon(1e-12));
    }
  }

  SUBCASE("gradcheck through five chained cells") {
    const auto c = testing::gru_chain_case();
    INFO(c.result.worst);
    CHECK(c.result.ok);
  }

  SUBCASE("dimension mismatch") {
    GruParams p = make_gru(3, 4, rng, DType::f64);
    CHECK_THROWS_AS(gru_cell(random_tensor({1, 2}, rng), random_tensor({1, 4}, rng), p), ShapeError);
  }
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Prng rng(1);
    Tensor w = random_tensor({3, 2}, rng);
    auto before = w.to_vector();
    ParamList ps{{"w", w}};
    AdamState st = make_adam(ps, 1e-3);
    w.node()->ensure_grad();
    adam_step(ps, st);
    CHECK(w.to_vector() == before);
    CHECK(st.step == 1);
    CHECK_FALSE(w.has_grad());
  }
  SUBCASE("first step with constant unit gradient moves by -lr") {
    Tensor x = Tensor::scalar(0.5, DType::f64, true);
    ParamList ps{{"x", x}};
    AdamState st = make_adam(ps, 0.1);
    x.node()->ensure_grad().fill(1.0);
    adam_step(ps, st);
    CHECK(x.item() == doctest::Approx(0.5 - 0.1).epsilon(1e-7));
  }
  SUBCASE("ten steps on x^2 strictly decrease f") {
    Tensor x = Tensor::scalar(1.0, DType::f64, true);
    ParamList ps{{"x", x}};
    AdamState st = make_adam(ps, 0.05);
    double prev = 1.0;
    for (int i = 0; i < 10; ++i) {
      sum(mul(x, x)).backward();
      adam_step(ps, st);
      const double f = x.item() * x.item();
      CHECK(f < prev);
      prev = f;
    }
    CHECK(st.step == 10);
  }
  SUBCASE("missing gradient is named") {
    Tensor a = Tensor::scalar(1.0, DType::f64, true), b = Tensor::scalar(1.0, DType::f64, true);
    ParamList ps{{"alpha", a}, {"beta", b}};
    AdamState st = make_adam(ps, 0.1);
    sum(mul(a, a)).backward();
    try {
      adam_step(ps, st);
      FAIL("expected error");
    } catch (const ContractError& e) {
      CHECK(std::string(e.what()).find("beta") != std::string::npos);
    }
  }
}

TEST_CASE("prng streams are reproducible and independent") {
  Prng a(42, 3), b(42, 3), c(42, 4);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs = differs || x != c.next_u64();
  }
  CHECK(differs);
  Prng r(1);
  auto s = r.sample_without_replacement(1000, 10);
  std::sort(s.begin(), s.end());
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  auto all = r.sample_without_replacement(7, 7);
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 7; ++i) CHECK(all[i] == i);
  // Normal moments.
  double m = 0, v = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double z = r.normal();
    m += z;
    v += z * z;
  }
  m /= n;
  v = v / n - m * m;
  CHECK(std::abs(m) < 4.0 / std::sqrt(n));
  CHECK(std::abs(v - 1.0) < 0.05);
}

TEST_CASE("identical seeds give bit-identical forward and backward") {
  auto run = [] {
    Prng rng(8);
    GruParams p = make_gru(3, 5, rng, DType::f32);
    Tensor x = init_uniform({4, 3}, 1.0, rng, DType::f32);
    Tensor h = Tensor::zeros({4, 5}, DType::f32);
    Tensor loss = sum(gumbel_softmax(gru_cell(x, h, p), 1.0, rng, false));
    loss = sum(mul(gru_cell(x, h, p), gru_cell(x, h, p)));
    loss.backward();
    std::vector<double> out = p.w_h.grad_vector();
    out.push_back(loss.item());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round-trip is bit exact") {
  Prng rng(77);
  Checkpoint c;
  c.step = 1234;
  c.config = {{"lr", 0.001}, {"name", "x"}};
  c.meta = {{"init", "uniform"}};
  c.put("a", init_normal({3, 4}, 1.0, rng, DType::f32));
  c.put("b", init_normal({5}, 1.0, rng, DType::f64));
  c.put("s", Tensor::scalar(std::nextafter(1.0, 2.0), DType::f64));
  auto dir = std::filesystem::temp_directory_path() / "eclab_ckpt_test";
  std::filesystem::remove_all(dir);
  save_checkpoint(c, dir);
  Checkpoint d = load_checkpoint(dir);
  CHECK(checkpoints_bit_equal(c, d));
  CHECK(d.step == 1234);
  CHECK(d.config == c.config);
  CHECK(d.meta == c.meta);
  CHECK(d.get("s").shape().empty());

  // Truncated tensor file is a data error.
  std::filesystem::resize_file(dir / "tensors.bin", 10);
  CHECK_THROWS_AS(load_checkpoint(dir), DataError);
  std::filesystem::remove_all(dir);
}
