#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "deepseq/nn.hpp"
#include "deepseq/tensor.hpp"
#include "fd.hpp"

using namespace dseq::nn;
using dseq::Rng;
using testutil::finite_difference;
using testutil::random_matrix;

namespace {

// Projects an op's output onto fixed random weights so every output entry
// contributes to the scalar being differentiated.
Var project(const Var& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, Var::constant(random_matrix(y.rows(), y.cols(), rng))));
}

Var param(std::size_t r, std::size_t c, Rng& rng, double lo = -1, double hi = 1) {
  return Var::parameter(random_matrix(r, c, rng, lo, hi));
}

// Random values kept away from zero so ReLU has no kink inside the stencil.
Var param_off_zero(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m = random_matrix(r, c, rng, 0.05, 1);
  for (auto& x : m.data) {
    if (rng.bernoulli(0.5)) x = -x;
  }
  return Var::parameter(m);
}

void check_fd(const std::vector<Var>& leaves, const std::function<Var()>& f) {
  const auto rep = finite_difference(leaves, f);
  CHECK(rep.checked > 0);
  CHECK(rep.failed == 0);
  CHECK(rep.max_error < testutil::kFdTol);
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul by the identity") {
  Rng rng(1);
  const Var x = Var::constant(random_matrix(3, 5, rng));
  Matrix id(3, 3);
  for (int i = 0; i < 3; ++i) id(i, i) = 1;
  CHECK(matmul(Var::constant(id), x).value() == x.value());
}

TEST_CASE("shape mismatches and non-finite values raise") {
  const Var a = Var::constant(Matrix(2, 3, 1));
  const Var b = Var::constant(Matrix(2, 2, 1));
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(mul(a, b), ShapeError);
  CHECK_THROWS_AS(concat_cols({a, Var::constant(Matrix(3, 1))}), ShapeError);
  CHECK_THROWS_AS(backward(a), ShapeError);
  const Var big = Var::constant(Matrix(1, 1, std::numeric_limits<Real>::max()));
  CHECK_THROWS_AS(add(big, big), NumericError);
  const Var inf = Var::constant(Matrix(1, 1, std::numeric_limits<Real>::infinity()));
  CHECK_THROWS_AS(scale(inf, 1), NumericError);
}

TEST_CASE("softmax over a single element is 1 and segments normalise") {
  const std::vector<std::uint32_t> one{0};
  CHECK(segment_softmax(Var::constant(Matrix(1, 1, 3)), one, 1).value().data[0] == 1);
  Rng rng(2);
  const std::vector<std::uint32_t> seg{0, 1, 0, 2, 1, 0};
  const auto s = segment_softmax(Var::constant(random_matrix(6, 1, rng, -10, 10)), seg, 3).value();
  double tot[3] = {0, 0, 0};
  for (std::size_t k = 0; k < 6; ++k) tot[seg[k]] += s.data[k];
  for (double t : tot) CHECK(t == doctest::Approx(1).epsilon(1e-6));
  // Stable for large scores.
  const auto big = segment_softmax(Var::constant(Matrix::from(2, 1, {1000, 999})), std::vector<std::uint32_t>{0, 0}, 1);
  CHECK(big.value().data[0] == doctest::Approx(1 / (1 + std::exp(-1.0))).epsilon(1e-5));
}

TEST_CASE("closed forms: sigmoid, tanh, relu, cosine, mean |a-b|, BCE") {
  const Var x = Var::constant(Matrix::from(1, 4, {-100, -1, 0, 2}));
  const auto s = sigmoid(x).value();
  CHECK(s.data[0] >= 0);
  CHECK(s.data[1] == doctest::Approx(1 / (1 + std::exp(1.0))));
  CHECK(s.data[2] == doctest::Approx(0.5));
  CHECK(tanh(x).value().data[3] == doctest::Approx(std::tanh(2.0)));
  CHECK(relu(x).value() == Matrix::from(1, 4, {0, 0, 0, 2}));
  const Var a = Var::constant(Matrix::from(2, 2, {1, 0, 3, 4}));
  const Var b = Var::constant(Matrix::from(2, 2, {0, 2, 3, 4}));
  const auto c = row_cosine(a, b).value();
  CHECK(c.data[0] == doctest::Approx(0).epsilon(1e-6));
  CHECK(c.data[1] == doctest::Approx(1).epsilon(1e-6));
  CHECK(mean_abs_diff(a, b.value()).item() == doctest::Approx(0.75));
  const Var logits = Var::constant(Matrix::from(3, 1, {-2, 0.5, 8}));
  const Matrix target = Matrix::from(3, 1, {0, 1, 0.25});
  double want = 0;
  for (int k = 0; k < 3; ++k) {
    const double z = logits.value().data[k], t = target.data[k];
    const double p = 1 / (1 + std::exp(-z));
    want += -(t * std::log(p) + (1 - t) * std::log1p(-p));
  }
  CHECK(bce_with_logits(logits, target).item() == doctest::Approx(want / 3).epsilon(1e-5));
}

TEST_CASE("every op passes the finite-difference check") {
  Rng rng(3);
  const std::vector<std::uint32_t> seg{1, 0, 2, 0, 1};
  const std::vector<std::uint32_t> idx{2, 0, 0, 3};

  SUBCASE("matmul") {
    Var a = param(5, 4, rng), b = param(4, 3, rng);
    check_fd({a, b}, [&] { return project(matmul(a, b)); });
  }
  SUBCASE("add, sub, mul, add_row, scale") {
    Var a = param(5, 4, rng), b = param(5, 4, rng), r = param(1, 4, rng);
    check_fd({a, b, r}, [&] { return project(add(sub(mul(a, b), scale(a, 0.7)), add_row(b, r))); });
  }
  SUBCASE("sigmoid, tanh") {
    Var a = param(5, 4, rng, -3, 3);
    check_fd({a}, [&] { return project(add(sigmoid(a), tanh(a))); });
  }
  SUBCASE("relu") {
    Var a = param_off_zero(5, 4, rng);
    check_fd({a}, [&] { return project(relu(a)); });
  }
  SUBCASE("concat_cols, stack_rows, row, gather_rows") {
    Var a = param(4, 2, rng), b = param(4, 3, rng), c = param(1, 5, rng);
    check_fd({a, b, c}, [&] {
      Var cat = concat_cols({a, b});
      Var st = stack_rows({row(cat, 2), c, row(cat, 0)});
      return add(project(st), project(gather_rows(cat, idx), 7));
    });
  }
  SUBCASE("segment_softmax, scale_rows, segment_sum") {
    Var s = param(5, 1, rng, -2, 2), k = param(5, 3, rng);
    check_fd({s, k}, [&] { return project(segment_sum(scale_rows(k, segment_softmax(s, seg, 3)), seg, 3)); });
  }
  SUBCASE("row_cosine") {
    Var a = param(5, 4, rng), b = param(5, 4, rng);
    check_fd({a, b}, [&] { return project(row_cosine(a, b)); });
  }
  SUBCASE("sum, mean, mean_abs_diff, bce_with_logits") {
    Var a = param(5, 4, rng);
    Matrix t = random_matrix(5, 4, rng, 2, 3);  // far from a: no kink in |a - t|
    Matrix p = random_matrix(5, 4, rng, 0, 1);
    check_fd({a}, [&] {
      return add(add(scale(sum(a), 0.1), mean(mul(a, a))), add(mean_abs_diff(a, t), bce_with_logits(a, p)));
    });
  }
  SUBCASE("random 5x4 op graph") {
    Var x = param(5, 4, rng), w = param(4, 4, rng), bias = param(1, 4, rng), v = param(4, 1, rng);
    check_fd({x, w, bias, v}, [&] {
      Var h = tanh(add_row(matmul(x, w), bias));
      Var g = sigmoid(mul(h, x));
      Var score = matmul(g, v);
      Var alpha = segment_softmax(score, seg, 3);
      Var msg = segment_sum(scale_rows(h, alpha), seg, 3);
      Var cos = row_cosine(msg, gather_rows(g, std::vector<std::uint32_t>{0, 1, 2}));
      return add(project(msg), sum(cos));
    });
  }
}

TEST_CASE("adjoints are linear") {
  Rng rng(4);
  Var a = param(3, 4, rng), b = param(4, 2, rng);
  auto l1 = [&] { return project(tanh(matmul(a, b)), 1); };
  auto l2 = [&] { return project(sigmoid(matmul(a, b)), 2); };
  a.zero_grad();
  b.zero_grad();
  backward(l1());
  const Matrix ga1 = a.grad(), gb1 = b.grad();
  a.zero_grad();
  b.zero_grad();
  backward(l2());
  const Matrix ga2 = a.grad(), gb2 = b.grad();
  a.zero_grad();
  b.zero_grad();
  backward(add(l1(), l2()));
  for (std::size_t k = 0; k < ga1.size(); ++k) CHECK(a.grad().data[k] == doctest::Approx(ga1.data[k] + ga2.data[k]).epsilon(1e-5));
  for (std::size_t k = 0; k < gb1.size(); ++k) CHECK(b.grad().data[k] == doctest::Approx(gb1.data[k] + gb2.data[k]).epsilon(1e-5));
}

TEST_CASE("bounded inputs never produce NaN or Inf") {
  Rng rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    Var a = param(6, 4, rng, -10, 10), b = param(6, 4, rng, -10, 10);
    const std::vector<std::uint32_t> seg{0, 0, 1, 1, 1, 2};
    Var s = segment_softmax(matmul(a, Var::constant(random_matrix(4, 1, rng, -10, 10))), seg, 3);
    Var y = add(add(sigmoid(a), tanh(b)), relu(mul(a, b)));
    Var loss = add(add(project(y), sum(row_cosine(a, b))), add(sum(s), bce_with_logits(a, random_matrix(6, 4, rng, 0, 1))));
    CHECK_NOTHROW(backward(loss));
    for (Real g : a.grad().data) CHECK(std::isfinite(g));
  }
}

TEST_CASE("deep tapes do not overflow the stack") {
  Var x = Var::parameter(Matrix(1, 1, 1));
  Var y = x;
  for (int i = 0; i < 200000; ++i) y = scale(y, 1);
  backward(y);
  CHECK(x.grad().data[0] == 1);
}

TEST_CASE("mlp3: zero parameters give 0.5 after a sigmoid, and a 1-d hand computation") {
  ParamStore store;
  Rng rng(6);
  add_mlp3(store, "m", 4, 8, 1, rng);
  for (const auto& n : store.names()) {
    for (auto& x : store.at(n).mutable_value().data) x = 0;
  }
  CHECK(sigmoid(mlp3(Var::constant(random_matrix(3, 4, rng)), store, "m")).value() == Matrix(3, 1, Real(0.5)));

  ParamStore one;
  add_mlp3(one, "h", 1, 1, 1, rng);
  const std::pair<const char*, Real> vals[] = {{"h.w0", 2}, {"h.b0", -1}, {"h.w1", -1},
                                               {"h.b1", 3}, {"h.w2", 0.5}, {"h.b2", 0.1}};
  for (auto [n, v] : vals) one.at(n).mutable_value().data[0] = v;
  // x = 1: relu(2 - 1) = 1, relu(-1 + 3) = 2, 0.5 * 2 + 0.1 = 1.1
  // x = -1: relu(-3) = 0, relu(3) = 3, 1.6
  const auto y = mlp3(Var::constant(Matrix::from(2, 1, {1, -1})), one, "h").value();
  CHECK(y.data[0] == doctest::Approx(1.1));
  CHECK(y.data[1] == doctest::Approx(1.6));

  std::vector<Var> leaves;
  ParamStore fresh;
  add_mlp3(fresh, "f", 3, 5, 2, rng);
  for (const auto& n : fresh.names()) leaves.push_back(fresh.at(n));
  const Var x = Var::constant(random_matrix(4, 3, rng));
  const auto rep = finite_difference(leaves, [&] { return project(mlp3(x, fresh, "f")); });
  // A ReLU kink inside the stencil would show up as an isolated failure.
  CHECK(rep.failed == 0);
}

TEST_CASE("GRU gates: pass-through and candidate-only settings") {
  Rng rng(7);
  ParamStore store;
  add_gru(store, "g", 3, 4, rng);
  const Var x = Var::constant(random_matrix(2, 3, rng));
  const Var h = Var::constant(random_matrix(2, 4, rng));

  for (auto& v : store.at("g.bi_z").mutable_value().data) v = 50;
  const auto pass = gru_cell(x, h, store, "g").value();
  for (std::size_t k = 0; k < pass.size(); ++k) CHECK(pass.data[k] == doctest::Approx(h.value().data[k]).epsilon(1e-6));

  for (auto& v : store.at("g.bi_z").mutable_value().data) v = -50;
  for (auto& v : store.at("g.bi_r").mutable_value().data) v = 50;
  for (const char* w : {"g.wh_r", "g.wh_z", "g.wh_n", "g.bh_n"}) {
    for (auto& v : store.at(w).mutable_value().data) v = 0;
  }
  const auto cand = gru_cell(x, h, store, "g").value();
  const Matrix& win = store.at("g.wi_n").value();
  const Matrix& bin = store.at("g.bi_n").value();
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      double a = bin(0, c);
      for (std::size_t k = 0; k < 3; ++k) a += x.value()(r, k) * win(k, c);
      CHECK(cand(r, c) == doctest::Approx(std::tanh(a)).epsilon(1e-5));
    }
  }

  ParamStore fresh;
  add_gru(fresh, "q", 3, 4, rng);
  std::vector<Var> leaves;
  for (const auto& n : fresh.names()) leaves.push_back(fresh.at(n));
  Var hp = param(2, 4, rng), xp = param(2, 3, rng);
  leaves.push_back(hp);
  leaves.push_back(xp);
  check_fd(leaves, [&] { return project(gru_cell(xp, hp, fresh, "q")); });
}

TEST_CASE("attention aggregation") {
  Rng rng(8);
  const Var q = Var::constant(random_matrix(2, 3, rng));
  const Var keys = Var::constant(random_matrix(3, 3, rng));
  const Var w1z = Var::constant(Matrix(3, 1)), w2z = Var::constant(Matrix(3, 1));
  const std::vector<std::uint32_t> seg{0, 0, 1};
  const auto m = attn_aggregate(q, keys, seg, w1z, w2z).value();
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(m(0, c) == doctest::Approx((keys.value()(0, c) + keys.value()(1, c)) / 2));
    CHECK(m(1, c) == doctest::Approx(keys.value()(2, c)));
  }
  const Var w1 = Var::constant(random_matrix(3, 1, rng)), w2 = Var::constant(random_matrix(3, 1, rng));
  const auto single = attn_aggregate(q, keys, seg, w1, w2).value();
  for (std::size_t c = 0; c < 3; ++c) CHECK(single(1, c) == doctest::Approx(keys.value()(2, c)));
  CHECK_THROWS_AS(attn_aggregate(q, keys, std::vector<std::uint32_t>{0, 0, 0}, w1, w2), std::invalid_argument);
  CHECK_THROWS_AS(attn_aggregate(q, keys, std::vector<std::uint32_t>{0, 1, 2}, w1, w2), std::invalid_argument);

  Var qp = param(1, 3, rng), kp = param(3, 3, rng), w1p = param(3, 1, rng), w2p = param(3, 1, rng);
  const std::vector<std::uint32_t> three{0, 0, 0};
  check_fd({qp, kp, w1p, w2p}, [&] { return project(attn_aggregate(qp, kp, three, w1p, w2p)); });
}

TEST_CASE("Adam: zero gradient, first step and determinism") {
  ParamStore store;
  store.add("p", Matrix::from(1, 2, {0.5, -1}));
  AdamConfig cfg;
  cfg.lr = 0.01;
  store.at("p").grad_buffer();
  adam_step(store, cfg);
  CHECK(store.at("p").value() == Matrix::from(1, 2, {0.5, -1}));

  ParamStore s2;
  s2.add("p", Matrix::from(1, 2, {0.5, -1}));
  s2.at("p").grad_buffer().data = {2, -3};
  adam_step(s2, cfg);
  // m_hat = g and v_hat = g^2 after one step.
  CHECK(s2.at("p").value().data[0] == doctest::Approx(0.5 - 0.01 * 2 / (2 + 1e-8)).epsilon(1e-7));
  CHECK(s2.at("p").value().data[1] == doctest::Approx(-1 + 0.01 * 3 / (3 + 1e-8)).epsilon(1e-7));
  CHECK(s2.at("p").grad().data == std::vector<Real>{0, 0});

  auto run = [] {
    ParamStore s;
    Rng rng(9);
    add_mlp3(s, "m", 3, 4, 1, rng);
    const Var x = Var::constant(random_matrix(5, 3, rng));
    const Matrix t = random_matrix(5, 1, rng, 0, 1);
    for (int i = 0; i < 20; ++i) {
      backward(bce_with_logits(mlp3(x, s, "m"), t));
      adam_step(s, AdamConfig{});
    }
    return s;
  };
  CHECK(run().same_values(run()));
}

TEST_CASE("parameter store bookkeeping") {
  ParamStore s;
  Rng rng(10);
  s.add_weight("w", 30, 20, rng);
  s.add_zeros("b", 1, 20);
  CHECK_THROWS_AS(s.add_zeros("b", 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(s.at("nope"), std::out_of_range);
  CHECK(s.scalar_count() == 620);
  const double limit = std::sqrt(6.0 / 50);
  for (Real x : s.at("w").value().data) CHECK(std::abs(x) <= limit);
  s.at("w").grad_buffer().data.assign(600, 2);
  s.scale_grad(0.25);
  CHECK(s.at("w").grad().data[7] == Real(0.5));
}

TEST_CASE("checkpoint round trip and failure modes") {
  const auto dir = std::filesystem::temp_directory_path() / "dseq_test_ckpt";
  std::filesystem::create_directories(dir);
  ParamStore a;
  Rng rng(11);
  add_mlp3(a, "m", 3, 4, 2, rng);
  add_gru(a, "g", 2, 3, rng);
  save_checkpoint(dir / "a.ckpt", a, {{"note", "x"}});

  ParamStore b;
  Rng other(12);
  add_mlp3(b, "m", 3, 4, 2, other);
  add_gru(b, "g", 2, 3, other);
  const auto meta = load_checkpoint(dir / "a.ckpt", b);
  CHECK(meta.at("note") == "x");
  CHECK(read_checkpoint_metadata(dir / "a.ckpt").at("note") == "x");
  for (const auto& n : a.names()) {
    const auto& x = a.at(n).value().data;
    const auto& y = b.at(n).value().data;
    for (std::size_t k = 0; k < x.size(); ++k) CHECK(y[k] == static_cast<Real>(static_cast<float>(x[k])));
  }

  ParamStore wrong;
  add_mlp3(wrong, "m", 3, 5, 2, other);
  add_gru(wrong, "g", 2, 3, other);
  CHECK_THROWS(load_checkpoint(dir / "a.ckpt", wrong));
  {
    std::ofstream junk(dir / "junk.ckpt");
    junk << "not a checkpoint";
  }
  CHECK_THROWS(load_checkpoint(dir / "junk.ckpt", b));
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
