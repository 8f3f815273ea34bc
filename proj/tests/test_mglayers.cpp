#include <gtest/gtest.h>

#include <cmath>

#include "mgmem/mglayers.hpp"
#include "test_util.hpp"

using namespace mgmem;
using mgmem::testing::naive_conv;
using mgmem::testing::random_tensor;
using namespace mgmem::testing;

namespace {

PyramidSpec pyr(std::initializer_list<LevelSpec> l) { return PyramidSpec{l}; }

Pyramid<double> constants(Tape<double>& tape, const std::vector<Tensor<double>>& ts) {
  Pyramid<double> p;
  for (const auto& t : ts) p.levels.push_back(tape.constant(t));
  return p;
}

Tensor<double> naive_up(const Tensor<double>& x) {
  const Shape s = x.shape();
  Tensor<double> out({s.b, 2 * s.h, 2 * s.w, s.c});
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t i = 0; i < 2 * s.h; ++i)
      for (std::size_t j = 0; j < 2 * s.w; ++j)
        for (std::size_t c = 0; c < s.c; ++c) out.at(b, i, j, c) = x.at(b, i / 2, j / 2, c);
  return out;
}

Tensor<double> naive_down(const Tensor<double>& x) {
  const Shape s = x.shape();
  Tensor<double> out({s.b, s.h / 2, s.w / 2, s.c});
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t i = 0; i < s.h / 2; ++i)
      for (std::size_t j = 0; j < s.w / 2; ++j)
        for (std::size_t c = 0; c < s.c; ++c)
          out.at(b, i, j, c) = std::max(std::max(x.at(b, 2 * i, 2 * j, c), x.at(b, 2 * i, 2 * j + 1, c)),
                                        std::max(x.at(b, 2 * i + 1, 2 * j, c), x.at(b, 2 * i + 1, 2 * j + 1, c)));
  return out;
}

Tensor<double> naive_concat(const std::vector<Tensor<double>>& parts) {
  const Shape s = parts.front().shape();
  std::size_t total = 0;
  for (const auto& p : parts) total += p.shape().c;
  Tensor<double> out({s.b, s.h, s.w, total});
  for (std::size_t b = 0; b < s.b; ++b)
    for (std::size_t i = 0; i < s.h; ++i)
      for (std::size_t j = 0; j < s.w; ++j) {
        std::size_t off = 0;
        for (const auto& p : parts) {
          for (std::size_t c = 0; c < p.shape().c; ++c) out.at(b, i, j, off + c) = p.at(b, i, j, c);
          off += p.shape().c;
        }
      }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

TEST(PyramidSpec, ValidatesDoubling) {
  EXPECT_NO_THROW(pyr({{3, 3, 2}, {6, 6, 1}, {12, 12, 4}}).validate());
  EXPECT_THROW(pyr({{3, 3, 2}, {7, 6, 1}}).validate(), ShapeError);
  EXPECT_THROW(pyr({}).validate(), ShapeError);
  EXPECT_THROW(pyr({{3, 3, 0}}).validate(), ShapeError);
}

TEST(InitState, ZeroWithExpectedCount) {
  const auto st = init_state<double>(pyr({{3, 3, 2}}), 1);
  ASSERT_EQ(st.levels.size(), 1u);
  EXPECT_EQ(st.levels[0].h.shape(), (Shape{1, 3, 3, 2}));
  EXPECT_EQ(st.levels[0].c.shape(), (Shape{1, 3, 3, 2}));
  for (double v : st.levels[0].h.data()) EXPECT_EQ(v, 0.0);
  const auto big = init_state<double>(pyr({{2, 3, 4}, {4, 6, 1}, {8, 12, 3}}), 5);
  EXPECT_EQ(big.value_count(), 2u * 5 * (2 * 3 * 4 + 4 * 6 * 1 + 8 * 12 * 3));
}

TEST(AssembleInput, SingleLevelUnchanged) {
  Rng rng(1);
  Tape<double> tape;
  const auto p = constants(tape, {random_tensor({2, 3, 3, 4}, rng)});
  const auto y = assemble_input(p, 0);
  EXPECT_EQ(y.value(), p.levels[0].value());
}

TEST(AssembleInput, MiddleLevelChannelSum) {
  Rng rng(2);
  Tape<double> tape;
  const auto p =
      constants(tape, {random_tensor({1, 2, 2, 3}, rng), random_tensor({1, 4, 4, 2}, rng), random_tensor({1, 8, 8, 5}, rng)});
  EXPECT_EQ(assemble_input(p, 1).shape(), (Shape{1, 4, 4, 10}));
  EXPECT_EQ(assemble_input(p, 0).shape(), (Shape{1, 2, 2, 5}));
  EXPECT_EQ(assemble_input(p, 2).shape(), (Shape{1, 8, 8, 7}));
  EXPECT_EQ(assembled_channels(pyr({{2, 2, 3}, {4, 4, 2}, {8, 8, 5}}), 4, 4), 10u);
}

TEST(AssembleInput, ConstantNeighboursCarryExactValues) {
  Tape<double> tape;
  const double a = 0.375, b = -2.5;
  Rng rng(3);
  const auto p = constants(tape, {Tensor<double>({1, 3, 3, 2}, a), random_tensor({1, 6, 6, 1}, rng),
                                  Tensor<double>({1, 12, 12, 3}, b)});
  const auto y = assemble_input(p, 1).value();
  ASSERT_EQ(y.shape(), (Shape{1, 6, 6, 6}));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_EQ(y.at(0, i, j, 0), a);
      EXPECT_EQ(y.at(0, i, j, 1), a);
      EXPECT_EQ(y.at(0, i, j, 2), p.levels[1].value().at(0, i, j, 0));
      for (std::size_t c = 3; c < 6; ++c) EXPECT_EQ(y.at(0, i, j, c), b);
    }
}

TEST(AssembleInput, RemovingNeighbourRemovesItsBlock) {
  Rng rng(4);
  Tape<double> tape;
  const auto c0 = random_tensor({1, 2, 2, 2}, rng), c1 = random_tensor({1, 4, 4, 3}, rng),
             c2 = random_tensor({1, 8, 8, 1}, rng);
  const auto full = assemble_input(constants(tape, {c0, c1, c2}), 4, 4).value();
  const auto nofine = assemble_input(constants(tape, {c0, c1}), 4, 4).value();
  const auto nocoarse = assemble_input(constants(tape, {c1, c2}), 4, 4).value();
  ASSERT_EQ(nofine.shape().c, 5u);
  ASSERT_EQ(nocoarse.shape().c, 4u);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(nofine.at(0, i, j, c), full.at(0, i, j, c));
      for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(nocoarse.at(0, i, j, c), full.at(0, i, j, c + 2));
    }
}

TEST(AssembleInput, GrowsIntoNewResolution) {
  Rng rng(5);
  Tape<double> tape;
  const auto p = constants(tape, {random_tensor({1, 3, 3, 2}, rng)});
  EXPECT_EQ(assemble_input(p, 6, 6).shape(), (Shape{1, 6, 6, 2}));
  EXPECT_THROW(assemble_input(p, 12, 12), ShapeError);
}

// ---------------------------------------------------------------------------

TEST(MGConv, IdentityKernelNoActivation) {
  Rng rng(6);
  ParamSet<double> ps;
  const auto spec = pyr({{3, 3, 2}, {6, 6, 2}});
  auto p = make_mg_conv(ps, spec, spec, false, false, "conv", rng);
  p.activation = Activation::none;
  zero(ps);
  // level 0 input: [same(2), down(2)]; level 1 input: [up(2), same(2)]
  for (std::size_t c = 0; c < 2; ++c) {
    ps.value(p.levels[0].w).at(1, 1, c, c) = 1;
    ps.value(p.levels[1].w).at(1, 1, 2 + c, c) = 1;
  }
  Tape<double> tape;
  Binder<double> bind(tape, ps);
  LayerContext<double> ctx{bind, ps, false};
  const auto in = constants(tape, {random_tensor({1, 3, 3, 2}, rng), random_tensor({1, 6, 6, 2}, rng)});
  const auto out = mg_conv_forward(ctx, p, in);
  EXPECT_EQ(out.levels[0].value(), in.levels[0].value());
  EXPECT_EQ(out.levels[1].value(), in.levels[1].value());
}

TEST(MGConv, ZeroKernelsGiveZeros) {
  Rng rng(7);
  ParamSet<double> ps;
  auto p = make_mg_conv(ps, pyr({{3, 3, 2}, {6, 6, 1}}), pyr({{3, 3, 4}, {6, 6, 4}}), false, false, "c", rng);
  zero(ps);
  Tape<double> tape;
  Binder<double> bind(tape, ps);
  LayerContext<double> ctx{bind, ps, false};
  const auto out = mg_conv_forward(ctx, p, constants(tape, {random_tensor({2, 3, 3, 2}, rng), random_tensor({2, 6, 6, 1}, rng)}));
  for (const auto& l : out.levels)
    for (double v : l.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(MGConv, MatchesNaiveEvaluation) {
  Rng rng(8);
  ParamSet<double> ps;
  const auto ispec = pyr({{3, 3, 2}, {6, 6, 3}});
  const auto ospec = pyr({{3, 3, 4}, {6, 6, 2}, {12, 12, 1}});
  auto p = make_mg_conv(ps, ispec, ospec, false, false, "c", rng);
  randomize(ps, rng, 0.5);
  const auto x0 = random_tensor({2, 3, 3, 2}, rng), x1 = random_tensor({2, 6, 6, 3}, rng);
  Tape<double> tape;
  Binder<double> bind(tape, ps);
  LayerContext<double> ctx{bind, ps, false};
  const auto out = mg_conv_forward(ctx, p, constants(tape, {x0, x1}));
  const std::vector<Tensor<double>> assembled = {naive_concat({x0, naive_down(x1)}),
                                                 naive_concat({naive_up(x0), x1}), naive_up(x1)};
  for (std::size_t j = 0; j < 3; ++j) {
    Tensor<double> ref = naive_conv(assembled[j], ps.value(p.levels[j].w), ps.value(p.levels[j].b));
    for (auto& v : ref.data()) v = std::max(0.0, v);
    EXPECT_LT(max_abs_diff(out.levels[j].value(), ref), 1e-12) << "level " << j;
  }
}

TEST(MGConv, ResidualAddsMatchingLevelsOnly) {
  Rng rng(9);
  ParamSet<double> ps;
  auto p = make_mg_conv(ps, pyr({{3, 3, 2}, {6, 6, 3}}), pyr({{3, 3, 2}, {6, 6, 2}}), true, false, "c", rng);
  zero(ps);
  Tape<double> tape;
  Binder<double> bind(tape, ps);
  LayerContext<double> ctx{bind, ps, false};
  const auto in = constants(tape, {random_tensor({1, 3, 3, 2}, rng), random_tensor({1, 6, 6, 3}, rng)});
  const auto out = mg_conv_forward(ctx, p, in);
  EXPECT_EQ(out.levels[0].value(), in.levels[0].value());
  for (double v : out.levels[1].value().data()) EXPECT_EQ(v, 0.0);
}

TEST(MGConv, BatchNormUpdatesRunningStats) {
  Rng rng(10);
  ParamSet<double> ps;
  auto p = make_mg_conv(ps, pyr({{4, 4, 2}}), pyr({{4, 4, 3}}), false, true, "c", rng);
  Tape<double> tape;
  Binder<double> bind(tape, ps);
  LayerContext<double> ctx{bind, ps, true};
  const auto before = ps.value(*p.levels[0].running_mean);
  mg_conv_forward(ctx, p, constants(tape, {random_tensor({4, 4, 4, 2}, rng, 1, 2)}));
  EXPECT_FALSE(ps.value(*p.levels[0].running_mean) == before);
  EXPECT_EQ(ps.trainable_count(), 9u * 2 * 3 + 3 + 3 + 3);
}

TEST(MGConv, RejectsMismatchedInput) {
  Rng rng(11);
  ParamSet<double> ps;
  auto p = make_mg_conv(ps, pyr({{3, 3, 2}}), pyr({{3, 3, 2}}), false, false, "c", rng);
  Tape<double> tape;
  Binder<double> bind(tape, ps);
  LayerContext<double> ctx{bind, ps, false};
  EXPECT_THROW(mg_conv_forward(ctx, p, constants(tape, {random_tensor({1, 3, 3, 5}, rng)})), ShapeError);
  EXPECT_THROW(make_mg_conv(ps, pyr({{3, 3, 2}}), pyr({{12, 12, 2}}), false, false, "d", rng), ShapeError);
}

// ---------------------------------------------------------------------------

TEST(MGLstm, ParameterCountClosedForm) {
  Rng rng(12);
  ParamSet<double> ps;
  const auto in = pyr({{3, 3, 2}, {6, 6, 1}});
  const auto out = pyr({{3, 3, 4}, {6, 6, 3}, {12, 12, 2}});
  make_mg_lstm(ps, in, out, false, "m", rng);
  const std::size_t expected = lstm_level_param_count(3, 4) + lstm_level_param_count(3, 3) + lstm_level_param_count(1, 2);
  EXPECT_EQ(ps.trainable_count(), expected);
  EXPECT_EQ(lstm_level_param_count(3, 4), 9u * 3 * 16 + 9u * 4 * 16 + 16 + 12);
}

TEST(MGLstm, ParameterCountIndependentOfResolution) {
  Rng rng(13);
  const auto in = pyr({{3, 3, 2}, {6, 6, 1}});
  const auto out = pyr({{3, 3, 4}, {6, 6, 3}, {12, 12, 2}});
  ParamSet<double> a, b, c;
  make_mg_lstm(a, in, out, false, "m", rng);
  make_mg_lstm(b, in.doubled(), out.doubled(), false, "m", rng);
  make_mg_lstm(c, in.doubled().doubled(), out.doubled().doubled(), false, "m", rng);
  EXPECT_EQ(a.trainable_count(), b.trainable_count());
  EXPECT_EQ(a.trainable_count(), c.trainable_count());
}

TEST(MGLstm, InitialisationDefaults) {
  Rng rng(14);
  ParamSet<double> ps;
  auto p = make_mg_lstm(ps, pyr({{3, 3, 2}}), pyr({{3, 3, 3}}), false, "m", rng);
  const auto& b = ps.value(p.levels[0].b);
  for (std::size_t k = 0; k < 12; ++k) EXPECT_EQ(b[k], (k >= 3 && k < 6) ? 1.0 : 0.0);
  for (double v : ps.value(p.levels[0].wci).data()) EXPECT_EQ(v, 0.0);
  const double bound = std::sqrt(3.0 / (9.0 * 5.0));
  for (double v : ps.value(p.levels[0].wx).data()) EXPECT_LE(std::abs(v), bound);
  Rng r1(99), r2(99);
  ParamSet<double> x, y;
  make_mg_lstm(x, pyr({{3, 3, 2}}), pyr({{3, 3, 3}}), false, "m", r1);
  make_mg_lstm(y, pyr({{3, 3, 2}}), pyr({{3, 3, 3}}), false, "m", r2);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x.value(i), y.value(i));
}

TEST(MGLstm, SingleLevelMatchesPlainConvLstm) {
  Rng rng(15);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t cin = 1 + uniform_index(rng, 3), C = 1 + uniform_index(rng, 3);
    const std::size_t H = 2 + uniform_index(rng, 4), W = 2 + uniform_index(rng, 4), B = 1 + uniform_index(rng, 2);
    ParamSet<double> ps;
    auto p = make_mg_lstm(ps, pyr({{H, W, cin}}), pyr({{H, W, C}}), false, "m", rng);
    randomize(ps, rng, 0.8);
    const auto x = random_tensor({B, H, W, cin}, rng);
    PlainState s{random_tensor({B, H, W, C}, rng), random_tensor({B, H, W, C}, rng, -2, 2)};
    MGMemoryState<double> st;
    st.levels.push_back({s.h, s.c});

    Tape<double> tape;
    Binder<double> bind(tape, ps);
    LayerContext<double> ctx{bind, ps, false};
    LiveState<double> live = bind_state(tape, st);
    const auto out = mg_lstm_forward(ctx, p, constants(tape, {x}), live);
    const PlainState ref = plain_conv_lstm(x, s, ps, p.levels[0]);
    ASSERT_LT(max_abs_diff(out.levels[0].value(), ref.h), 1e-6) << "trial " << trial;
    ASSERT_LT(max_abs_diff(live.c[0].value(), ref.c), 1e-6) << "trial " << trial;
    ASSERT_EQ(live.h[0].value(), out.levels[0].value());
  }
}

TEST(MGLstm, ZeroParametersKeepStateZero) {
  Rng rng(16);
  ParamSet<double> ps;
  const auto in = pyr({{3, 3, 2}, {6, 6, 2}});
  auto p = make_mg_lstm(ps, in, pyr({{3, 3, 3}, {6, 6, 3}, {12, 12, 2}}), false, "m", rng);
  zero(ps);
  auto st = init_state<double>(p.out, 2);
  for (int t = 0; t < 20; ++t) {
    Tape<double> tape;
    Binder<double> bind(tape, ps);
    LayerContext<double> ctx{bind, ps, false};
    LiveState<double> live = bind_state(tape, st);
    mg_lstm_forward(ctx, p, constants(tape, {random_tensor({2, 3, 3, 2}, rng, -5, 5), random_tensor({2, 6, 6, 2}, rng, -5, 5)}), live);
    st = snapshot(live);
  }
  for (const auto& l : st.levels) {
    for (double v : l.h.data()) ASSERT_EQ(v, 0.0);
    for (double v : l.c.data()) ASSERT_EQ(v, 0.0);
  }
}

TEST(MGLstm, SaturatedForgetGateKeepsCell) {
  Rng rng(17);
  ParamSet<double> ps;
  auto p = make_mg_lstm(ps, pyr({{4, 4, 2}}), pyr({{4, 4, 3}}), false, "m", rng);
  zero(ps);
  for (std::size_t c = 3; c < 6; ++c) ps.value(p.levels[0].b)[c] = 10.0;
  MGMemoryState<double> st;
  st.levels.push_back({random_tensor({1, 4, 4, 3}, rng), random_tensor({1, 4, 4, 3}, rng, 0.5, 3)});
  Tape<double> tape;
  Binder<double> bind(tape, ps);
  LayerContext<double> ctx{bind, ps, false};
  LiveState<double> live = bind_state(tape, st);
  mg_lstm_forward(ctx, p, constants(tape, {random_tensor({1, 4, 4, 2}, rng)}), live);
  const auto& c0 = st.levels[0].c;
  const auto& c1 = live.c[0].value();
  for (std::size_t k = 0; k < c0.size(); ++k) EXPECT_LT(std::abs(c1[k] - c0[k]), 1e-4 * std::abs(c0[k]));
}

TEST(MGLstm, ResidualOnOutputOnly) {
  Rng rng(18);
  ParamSet<double> ps;
  auto p = make_mg_lstm(ps, pyr({{3, 3, 2}}), pyr({{3, 3, 2}}), true, "m", rng);
  zero(ps);
  Tape<double> tape;
  Binder<double> bind(tape, ps);
  LayerContext<double> ctx{bind, ps, false};
  LiveState<double> live = bind_state(tape, init_state<double>(p.out, 1));
  const auto in = constants(tape, {random_tensor({1, 3, 3, 2}, rng)});
  const auto out = mg_lstm_forward(ctx, p, in, live);
  EXPECT_EQ(out.levels[0].value(), in.levels[0].value());
  for (double v : live.h[0].value().data()) EXPECT_EQ(v, 0.0);
}

TEST(MGLstm, RejectsMismatchedState) {
  Rng rng(19);
  ParamSet<double> ps;
  auto p = make_mg_lstm(ps, pyr({{3, 3, 2}}), pyr({{3, 3, 2}}), false, "m", rng);
  Tape<double> tape;
  Binder<double> bind(tape, ps);
  LayerContext<double> ctx{bind, ps, false};
  LiveState<double> wrong = bind_state(tape, init_state<double>(pyr({{3, 3, 4}}), 1));
  EXPECT_THROW(mg_lstm_forward(ctx, p, constants(tape, {random_tensor({1, 3, 3, 2}, rng)}), wrong), ShapeError);
  LiveState<double> two = bind_state(tape, init_state<double>(pyr({{3, 3, 2}, {6, 6, 2}}), 1));
  EXPECT_THROW(mg_lstm_forward(ctx, p, constants(tape, {random_tensor({1, 3, 3, 2}, rng)}), two), ShapeError);
}

TEST(MGLstm, RejectsNonFiniteParameter) {
  Rng rng(20);
  ParamSet<double> ps;
  auto p = make_mg_lstm(ps, pyr({{3, 3, 2}}), pyr({{3, 3, 2}}), false, "m", rng);
  ps.value(p.levels[0].wx)[0] = std::numeric_limits<double>::quiet_NaN();
  Tape<double> tape;
  Binder<double> bind(tape, ps);
  LayerContext<double> ctx{bind, ps, false};
  LiveState<double> live = bind_state(tape, init_state<double>(p.out, 1));
  EXPECT_THROW(mg_lstm_forward(ctx, p, constants(tape, {random_tensor({1, 3, 3, 2}, rng)}), live), NumericError);
}

// Two layers, two levels, three steps, all parameters and inputs differentiated.
TEST(MGLstm, UnrolledGradientCheck) {
  Rng rng(21);
  ParamSet<double> ps;
  const auto in = pyr({{2, 2, 1}, {4, 4, 1}});
  const auto hid = pyr({{2, 2, 2}, {4, 4, 2}});
  const auto l0 = make_mg_lstm(ps, in, hid, false, "a", rng);
  const auto l1 = make_mg_lstm(ps, hid, hid, true, "b", rng);
  randomize(ps, rng, 0.6);
  std::vector<Tensor<double>> inputs;
  for (std::size_t i = 0; i < ps.size(); ++i) inputs.push_back(ps.value(i));
  const std::size_t n_params = inputs.size();
  for (int t = 0; t < 3; ++t) {
    inputs.push_back(random_tensor({1, 2, 2, 1}, rng));
    inputs.push_back(random_tensor({1, 4, 4, 1}, rng));
  }
  const auto w0 = random_tensor({1, 2, 2, 2}, rng), w1 = random_tensor({1, 4, 4, 2}, rng);

  auto f = [&](Tape<double>& tape, std::vector<Var<double>>& v) {
    Binder<double> bind(tape, ps);
    for (std::size_t i = 0; i < n_params; ++i) bind.assign(i, v[i]);
    LayerContext<double> ctx{bind, ps, false};
    LiveState<double> s0 = bind_state(tape, init_state<double>(hid, 1));
    LiveState<double> s1 = bind_state(tape, init_state<double>(hid, 1));
    Var<double> loss;
    for (std::size_t t = 0; t < 3; ++t) {
      Pyramid<double> x{{v[n_params + 2 * t], v[n_params + 2 * t + 1]}};
      const auto y0 = mg_lstm_forward(ctx, l0, x, s0);
      const auto y1 = mg_lstm_forward(ctx, l1, y0, s1);
      Var<double> term = add(sum(hadamard(y1.levels[0], tape.constant(w0))),
                             sum(hadamard(y1.levels[1], tape.constant(w1))));
      loss = loss.valid() ? add(loss, term) : term;
    }
    return loss;
  };
  EXPECT_LT(grad_check(f, inputs), 1e-4);
}
