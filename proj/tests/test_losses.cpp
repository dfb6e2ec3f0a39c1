#include <doctest.h>

#include <cmath>

#include "jst/autodiff/grad_check.hpp"
#include "jst/data/corpus.hpp"
#include "jst/error.hpp"
#include "jst/losses/losses.hpp"
#include "jst/losses/objectives.hpp"
#include "jst/model/joint_model.hpp"
#include "test_util.hpp"

using namespace jst;
using namespace jst::ad;
using jst::testing::random_tensor;

namespace {

double log_sum_exp(std::span<const double> row) {
  double m = row[0];
  for (double v : row) m = std::max(m, v);
  double s = 0.0;
  for (double v : row) s += std::exp(v - m);
  return m + std::log(s);
}

// Direct summation: (1-eps)*(-log p_y) + eps * mean over v != y of (-log p_v).
double oracle_nll(const Tensor& logits, const std::vector<TokenId>& y, double eps) {
  const std::size_t V = logits.cols();
  double total = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const auto row = logits.data().subspan(k * V, V);
    const double lse = log_sum_exp(row);
    double others = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      if (static_cast<TokenId>(v) != y[k]) others += lse - row[v];
    }
    total += (1.0 - eps) * (lse - row[static_cast<std::size_t>(y[k])]) + eps * others / static_cast<double>(V - 1);
  }
  return total;
}

double oracle_kd(const Tensor& student, const Tensor& teacher) {
  const std::size_t V = student.cols();
  double total = 0.0;
  for (std::size_t k = 0; k < student.rows(); ++k) {
    const auto s = student.data().subspan(k * V, V);
    const auto t = teacher.data().subspan(k * V, V);
    const double ls = log_sum_exp(s), lt = log_sum_exp(t);
    for (std::size_t v = 0; v < V; ++v) total -= std::exp(t[v] - lt) * (s[v] - ls);
  }
  return total;
}

double oracle_entropy(const Tensor& logits) {
  const std::size_t V = logits.cols();
  double h = 0.0;
  for (std::size_t k = 0; k < logits.rows(); ++k) {
    const auto r = logits.data().subspan(k * V, V);
    const double l = log_sum_exp(r);
    for (std::size_t v = 0; v < V; ++v) h -= std::exp(r[v] - l) * (r[v] - l);
  }
  return h;
}

std::vector<TokenId> random_targets(std::size_t k, std::size_t V, Rng& rng) {
  std::vector<TokenId> y(k);
  for (auto& t : y) t = static_cast<TokenId>(rng.uniform_int(0, static_cast<std::int64_t>(V) - 1));
  return y;
}

}  // namespace

TEST_CASE("similarity matrix examples") {
  Graph g;
  Rng rng(2);
  const auto h = random_tensor({4, 3}, rng);
  const auto s = loss::similarity_matrix(g, h, h);
  for (std::size_t i = 0; i < 3; ++i) CHECK(s.at(i, i) == doctest::Approx(1.0).epsilon(1e-12));
  for (double v : s.data()) CHECK(std::abs(v) <= 1.0 + 1e-12);

  const auto ortho = loss::similarity_matrix(g, Tensor::matrix(2, 1, {1, 0}), Tensor::matrix(2, 1, {0, 1}));
  CHECK(ortho.item() == 0.0);

  const auto other = random_tensor({4, 5}, rng);
  const auto base = loss::similarity_matrix(g, h, other);
  auto scaled = h.detached_copy();
  for (std::size_t r = 0; r < 4; ++r) scaled.mutable_data()[r * 3 + 1] *= 7.5;
  const auto after = loss::similarity_matrix(g, scaled, other);
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(after.data()[i] == doctest::Approx(base.data()[i]).epsilon(1e-12));
}

TEST_CASE("similarity clamps zero columns and reports them") {
  Graph g;
  loss::Diagnostics diag;
  const auto s = loss::similarity_matrix(g, Tensor::zeros({3, 2}), Tensor::filled({3, 1}, 1.0), &diag);
  CHECK(diag.degenerate_columns == 2);
  for (double v : s.data()) CHECK(std::isfinite(v));
}

TEST_CASE("reconstruction examples") {
  Graph g;
  Rng rng(6);
  SUBCASE("one speech state is copied to every column") {
    const auto hs = random_tensor({4, 1}, rng);
    const auto ht = random_tensor({4, 3}, rng);
    const auto rec = loss::reconstruct(g, hs, loss::similarity_matrix(g, hs, ht));
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t r = 0; r < 4; ++r) CHECK(rec.at(r, j) == doctest::Approx(hs.at(r, 0)).epsilon(1e-14));
    }
  }
  SUBCASE("equal similarities average the speech states") {
    const auto hs = Tensor::matrix(2, 2, {1, 3, 2, 5});
    const auto rec = loss::reconstruct(g, hs, Tensor::zeros({2, 1}));
    CHECK(rec.at(0, 0) == doctest::Approx(2.0));
    CHECK(rec.at(1, 0) == doctest::Approx(3.5));
  }
  SUBCASE("random case matches a naive computation") {
    const auto hs = random_tensor({4, 3}, rng);
    const auto ht = random_tensor({4, 5}, rng);
    const auto rec = loss::reconstruct(g, hs, loss::similarity_matrix(g, hs, ht));
    for (std::size_t j = 0; j < 5; ++j) {
      std::vector<double> cos(3), w(3);
      for (std::size_t i = 0; i < 3; ++i) {
        double dot = 0, ns = 0, nt = 0;
        for (std::size_t r = 0; r < 4; ++r) {
          dot += hs.at(r, i) * ht.at(r, j);
          ns += hs.at(r, i) * hs.at(r, i);
          nt += ht.at(r, j) * ht.at(r, j);
        }
        cos[i] = dot / std::sqrt(ns * nt);
      }
      double z = 0;
      for (std::size_t i = 0; i < 3; ++i) z += std::exp(cos[i]);
      for (std::size_t i = 0; i < 3; ++i) w[i] = std::exp(cos[i]) / z;
      for (std::size_t r = 0; r < 4; ++r) {
        double expect = 0;
        for (std::size_t i = 0; i < 3; ++i) expect += hs.at(r, i) * w[i];
        CHECK(rec.at(r, j) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(loss::reconstruct(g, random_tensor({4, 3}, rng), Tensor::zeros({2, 5})), DimensionError);
  }
}

TEST_CASE("CAR closed forms") {
  Graph g;
  Rng rng(7);
  const auto h = random_tensor({4, 3}, rng);
  CHECK(loss::car_loss(g, h, h).item() == doctest::Approx(0.0).epsilon(1e-15));
  const auto single = loss::car_loss(g, Tensor::matrix(2, 1, {1, 0}), Tensor::matrix(2, 1, {0, 1}));
  CHECK(single.item() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("CAR gradients: finite differences on the speech side, zero on the text side") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto hs = random_tensor({4, 3 + static_cast<std::size_t>(trial % 3)}, rng);
    const auto ht = random_tensor({4, 2 + static_cast<std::size_t>(trial % 4)}, rng);
    CHECK(grad_check([&](Graph& g, const Tensor& x) { return loss::car_loss(g, x, ht); }, hs) < 1e-4);

    Graph g;
    auto hs_p = Tensor(hs.shape(), std::vector<double>(hs.data().begin(), hs.data().end()), true);
    auto ht_p = Tensor(ht.shape(), std::vector<double>(ht.data().begin(), ht.data().end()), true);
    auto l = loss::car_loss(g, hs_p, ht_p);
    g.backward(l);
    for (double v : ht_p.grad()) CHECK(v == 0.0);
    double mag = 0.0;
    for (double v : hs_p.grad()) mag += std::abs(v);
    CHECK(mag > 0.0);
  }
}

TEST_CASE("NLL examples") {
  Graph g;
  const std::vector<TokenId> y{1, 3};
  auto perfect = Tensor::filled({2, 5}, -1e3);
  perfect.mutable_data()[0 * 5 + 1] = 0.0;
  perfect.mutable_data()[1 * 5 + 3] = 0.0;
  CHECK(loss::nll_loss(g, perfect, y, 0.0).item() == doctest::Approx(0.0));
  CHECK(loss::nll_loss(g, Tensor::zeros({2, 5}), y, 0.0).item() == doctest::Approx(2.0 * std::log(5.0)).epsilon(1e-14));
  CHECK(loss::nll_loss(g, Tensor::zeros({2, 5}), y, 0.1).item() == doctest::Approx(2.0 * std::log(5.0)).epsilon(1e-14));

  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto logits = random_tensor({4, 7}, rng, 2.0);
    const auto t = random_targets(4, 7, rng);
    for (double eps : {0.0, 0.1, 0.3}) {
      CHECK(loss::nll_loss(g, logits, t, eps).item() == doctest::Approx(oracle_nll(logits, t, eps)).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(loss::nll_loss(g, Tensor::zeros({2, 5}), std::vector<TokenId>{1, 5}, 0.0), VocabularyError);
  CHECK_THROWS_AS(loss::nll_loss(g, Tensor::zeros({2, 5}), std::vector<TokenId>{1}, 0.0), DimensionError);
}

TEST_CASE("NLL masking equals the unpadded computation") {
  Graph g;
  Rng rng(13);
  const auto logits = random_tensor({3, 6}, rng);
  const std::vector<TokenId> y{2, 4, 1};
  auto padded = Tensor::zeros({5, 6});
  std::copy(logits.data().begin(), logits.data().end(), padded.mutable_data().begin());
  for (std::size_t i = 18; i < 30; ++i) padded.mutable_data()[i] = rng.normal();
  const std::vector<TokenId> y_pad{2, 4, 1, vocab::pad, vocab::pad};
  const std::vector<double> mask{1, 1, 1, 0, 0};
  CHECK(loss::nll_loss(g, padded, y_pad, 0.1, mask).item() == loss::nll_loss(g, logits, y, 0.1).item());

  const auto teacher = random_tensor({3, 6}, rng);
  auto teacher_pad = Tensor::zeros({5, 6});
  std::copy(teacher.data().begin(), teacher.data().end(), teacher_pad.mutable_data().begin());
  CHECK(loss::kd_loss(g, padded, teacher_pad, mask).item() == loss::kd_loss(g, logits, teacher).item());
}

TEST_CASE("KD examples") {
  Graph g;
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_tensor({3, 7}, rng, 2.0);
    const auto q = random_tensor({3, 7}, rng, 2.0);
    const double kd = loss::kd_loss(g, p, q).item();
    CHECK(kd == doctest::Approx(oracle_kd(p, q)).epsilon(1e-10));
    CHECK(kd - oracle_entropy(q) >= -1e-12);
    CHECK(loss::kd_loss(g, q, q).item() == doctest::Approx(oracle_entropy(q)).epsilon(1e-12));
  }
  const auto student = random_tensor({3, 6}, rng);
  const std::vector<TokenId> y{0, 5, 2};
  auto onehot = Tensor::filled({3, 6}, -1e4);
  for (std::size_t k = 0; k < 3; ++k) onehot.mutable_data()[k * 6 + static_cast<std::size_t>(y[k])] = 0.0;
  CHECK(std::abs(loss::kd_loss(g, student, onehot).item() - loss::nll_loss(g, student, y, 0.0).item()) < 1e-10);
  CHECK_THROWS_AS(loss::kd_loss(g, student, random_tensor({2, 6}, rng)), DimensionError);
}

TEST_CASE("loss gradients pass finite differences on 20 random instances") {
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const auto logits = random_tensor({4, 6}, rng);
    const auto teacher = random_tensor({4, 6}, rng);
    const auto y = random_targets(4, 6, rng);
    CHECK(grad_check([&](Graph& g, const Tensor& x) { return loss::nll_loss(g, x, y, 0.0); }, logits) < 1e-4);
    CHECK(grad_check([&](Graph& g, const Tensor& x) { return loss::nll_loss(g, x, y, 0.1); }, logits) < 1e-4);
    CHECK(grad_check([&](Graph& g, const Tensor& x) { return loss::kd_loss(g, x, teacher); }, logits) < 1e-4);
  }
}

TEST_CASE("KD teacher is detached") {
  Graph g;
  Rng rng(16);
  auto student = random_tensor({3, 5}, rng, 1.0, true);
  auto teacher = random_tensor({3, 5}, rng, 1.0, true);
  auto l = loss::kd_loss(g, student, teacher);
  g.backward(l);
  for (double v : teacher.grad()) CHECK(v == 0.0);
}

TEST_CASE("loss weights validate") {
  CHECK_THROWS_AS((loss::LossWeights{1.5, 0.0, 0.1}.validate()), ConfigError);
  CHECK_THROWS_AS((loss::LossWeights{0.5, -1.0, 0.1}.validate()), ConfigError);
  CHECK_THROWS_AS((loss::LossWeights{0.5, 0.0, 1.0}.validate()), ConfigError);
  CHECK_NOTHROW(loss::LossWeights{}.validate());
}

namespace {

model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ffn = 12;
  c.n_speech_lower_layers = 1;
  c.n_shared_encoder_layers = 1;
  c.n_decoder_layers = 1;
  c.src_vocab_size = 10;
  c.tgt_vocab_size = 12;
  c.speech_feature_dim = 3;
  c.dropout = 0.0;
  return c;
}

data::Dataset tiny_data(std::size_t n, std::uint64_t seed) {
  data::CorpusSpec spec;
  spec.src_vocab_size = 10;
  spec.tgt_vocab_size = 12;
  spec.min_length = 2;
  spec.max_length = 5;
  spec.feature_dim = 3;
  spec.train_size = n;
  spec.dev_size = 0;
  spec.test_size = 0;
  spec.text_only_size = 0;
  spec.seed = seed;
  return data::generate_corpus(spec).train;
}

}  // namespace

TEST_CASE("total loss identities") {
  const auto cfg = tiny_config();
  model::JointModel m(cfg, model::Layout::joint_shared, 3);
  const auto samples = tiny_data(6, 4);
  for (const auto& s : samples) {
    Graph g(Graph::Mode::inference);
    const model::ForwardContext ctx{g, false, nullptr, 0.0};
    const auto full = loss::total_loss(ctx, m, s, {0.8, 0.02, 0.1}).breakdown;
    REQUIRE(full.kd);
    REQUIRE(full.car);
    CHECK(std::abs(full.total - (0.8 * *full.nll_st + 0.2 * *full.kd + 0.02 * *full.car + *full.nll_mt)) < 1e-10);
    CHECK(*full.nll_st >= 0.0);
    CHECK(*full.kd >= 0.0);
    CHECK(*full.car >= 0.0);

    const auto plain = loss::total_loss(ctx, m, s, {1.0, 0.0, 0.1}).breakdown;
    CHECK_FALSE(plain.kd);
    CHECK_FALSE(plain.car);
    CHECK(std::abs(plain.total - (*plain.nll_st + *plain.nll_mt)) < 1e-10);
  }
}

TEST_CASE("total loss gradient on the text path ignores CAR and KD") {
  const auto cfg = tiny_config();
  const auto samples = tiny_data(3, 5);
  for (const auto& s : samples) {
    auto text_grads = [&](const loss::LossWeights& w) {
      model::JointModel m(cfg, model::Layout::joint_separate, 8);
      Graph g;
      const model::ForwardContext ctx{g, false, nullptr, 0.0};
      auto out = loss::total_loss(ctx, m, s, w);
      g.backward(out.total);
      std::map<std::string, std::vector<double>> grads;
      for (auto& [name, t] : m.parameters()) {
        if (name.rfind("text_", 0) == 0) grads[name] = std::vector<double>(t.grad().begin(), t.grad().end());
      }
      return grads;
    };
    const auto with_terms = text_grads({0.8, 0.02, 0.1});
    const auto without = text_grads({1.0, 0.0, 0.1});
    REQUIRE(with_terms.size() == without.size());
    for (const auto& [name, g] : with_terms) {
      const auto& other = without.at(name);
      for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(other[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("batch loss over a window equals the concatenated batch") {
  const auto cfg = tiny_config();
  const auto data = tiny_data(6, 6);
  data::Batch first, second, all;
  first.indices = {0, 1, 2};
  second.indices = {3, 4, 5};
  all.indices = {0, 1, 2, 3, 4, 5};
  const data::Batch* window[] = {&first, &second};
  const data::Batch* whole[] = {&all};
  for (auto objective : {loss::Objective::asr, loss::Objective::st, loss::Objective::joint}) {
    const auto c = objective == loss::Objective::asr ? [&] {
      auto x = cfg;
      x.tgt_vocab_size = x.src_vocab_size;
      return x;
    }()
                                                     : cfg;
    const auto layout = objective == loss::Objective::joint ? model::Layout::joint_shared : model::Layout::speech_only;
    model::JointModel a(c, layout, 2), b(c, layout, 2);
    const loss::LossWeights w{0.8, 0.02, 0.1};
    const auto n1 = loss::normalizer_for(data, window, objective);
    const auto n2 = loss::normalizer_for(data, whole, objective);
    CHECK(n1.target_tokens == n2.target_tokens);
    double split_total = 0.0;
    for (const auto* batch : window) {
      Graph g;
      const model::ForwardContext ctx{g, false, nullptr, 0.0};
      auto out = loss::batch_loss(ctx, a, data, batch->indices, objective, w, n1);
      split_total += out.breakdown.total;
      g.backward(out.total);
    }
    Graph g;
    const model::ForwardContext ctx{g, false, nullptr, 0.0};
    auto out = loss::batch_loss(ctx, b, data, all.indices, objective, w, n2);
    g.backward(out.total);
    CHECK(split_total == doctest::Approx(out.breakdown.total).epsilon(1e-12));
    for (auto& [name, t] : a.parameters()) {
      const auto ga = t.grad();
      const auto gb = b.parameters().at(name).grad();
      for (std::size_t i = 0; i < ga.size(); ++i) CHECK(std::abs(ga[i] - gb[i]) < 1e-8);
    }
  }
}
