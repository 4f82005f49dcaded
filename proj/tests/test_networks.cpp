#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "gasda/geometry.hpp"
#include "gasda/losses.hpp"
#include "gasda/networks.hpp"
#include "gasda/optim.hpp"
#include "test_util.hpp"

using namespace gasda;
using gasda::testing::random_tensor;
using gasda::testing::ScratchDir;
using TW = Tensor<Wide>;
using TS = Tensor<Standard>;

TEST(Generator, PreservesShapeAndStaysInUnitRange) {
  const auto g = nets::build_generator<Wide>("G", nets::generator_arch(4, 1), 1);
  const TW img = random_tensor({2, 3, 8, 12}, 2, 0, 1);
  const TW raw = nets::run_generator(g, img);
  EXPECT_EQ(raw.shape(), img.shape());
  for (const double v : raw.values()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  const TW out = nets::translate(g, img);
  for (const double v : out.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Generator, RejectsBadInputs) {
  const auto g = nets::build_generator<Wide>("G", nets::generator_arch(4, 1), 1);
  EXPECT_THROW(nets::run_generator(g, TW::zeros({1, 1, 8, 8})), ShapeError);
  EXPECT_THROW(nets::run_generator(g, TW::zeros({1, 3, 6, 8})), ShapeError);
  const auto d = nets::build_discriminator<Wide>("D", nets::discriminator_arch(4, 2), 1);
  EXPECT_THROW(nets::run_generator(d, TW::zeros({1, 3, 8, 8})), ShapeError);
}

TEST(Discriminator, PatchScoreShape) {
  const auto d = nets::build_discriminator<Wide>("D", nets::discriminator_arch(4, 3), 3);
  const TW s = nets::run_discriminator(d, random_tensor({2, 3, 32, 48}, 4, 0, 1));
  EXPECT_EQ(s.shape(), (Shape{2, 1, 4, 6}));
  EXPECT_TRUE(s.all_finite());
  EXPECT_THROW(nets::run_discriminator(d, TW::zeros({1, 3, 8, 32})), ShapeError);
}

TEST(DepthNet, OneOutputPerScaleWithinDepthBounds) {
  const auto f = nets::build_depth_net<Wide>("F", nets::depth_arch(4, 4), 5);
  const auto out = nets::run_depth_net(f, random_tensor({2, 3, 16, 24}, 6, 0, 1));
  ASSERT_EQ(out.size(), 4u);
  for (std::size_t k = 0; k < out.size(); ++k) {
    EXPECT_EQ(out[k].shape(), (Shape{2, 1, 16u >> k, 24u >> k}));
    for (const double v : out[k].values()) {
      EXPECT_GE(v, geometry::kDepthMin);
      EXPECT_LE(v, geometry::kDepthMax);
    }
  }
  EXPECT_THROW(nets::run_depth_net(f, TW::zeros({1, 3, 12, 24})), ShapeError);
}

TEST(Networks, SameSeedSameWeightsAndOutputs) {
  for (const auto& arch : {nets::generator_arch(4, 2), nets::discriminator_arch(4, 2), nets::depth_arch(4, 3)}) {
    const auto a = nets::build<Standard>("net", arch, 42), b = nets::build<Standard>("net", arch, 42);
    const auto c = nets::build<Standard>("net", arch, 43);
    EXPECT_TRUE(a.values_equal(b)) << arch.str();
    EXPECT_FALSE(a.values_equal(c)) << arch.str();
  }
  const auto f = nets::build_depth_net<Standard>("F", nets::depth_arch(4, 3), 9);
  const TS img = random_tensor<Standard>({1, 3, 8, 8}, 10, 0, 1);
  const auto o1 = nets::run_depth_net(f, img), o2 = nets::run_depth_net(f, img);
  for (std::size_t i = 0; i < o1[0].numel(); ++i) EXPECT_EQ(o1[0][i], o2[0][i]);
}

TEST(Networks, InitialisationScale) {
  const auto g = nets::build_generator<Wide>("G", nets::generator_arch(16, 2), 11);
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& [key, t] : g.params) {
    if (key.ends_with(".bias")) continue;
    for (const double v : t.values()) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  ASSERT_GT(n, 1000u);
  const double mean = sum / n, sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(mean, 0.0, 0.002);
  EXPECT_NEAR(sd, nets::detail::kInitStd, 0.002);
}

TEST(NetArch, TextRoundTripAndErrors) {
  for (const auto& arch : {nets::generator_arch(8, 3), nets::discriminator_arch(16, 2), nets::depth_arch(4, 5)}) {
    EXPECT_EQ(nets::NetArch::parse(arch.str()), arch);
  }
  EXPECT_THROW(nets::NetArch::parse("resnet base=4 blocks=2"), ParseError);
  EXPECT_THROW(nets::NetArch::parse("generator base=x blocks=2"), ParseError);
  EXPECT_THROW(nets::NetArch::parse("generator width=4 blocks=2"), ParseError);
  EXPECT_THROW(nets::NetArch::parse("depth base=4 scales=9"), ConfigError);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  ScratchDir dir("ckpt");
  const auto g = nets::build<Standard>("G_s2t", nets::generator_arch(4, 1), 1);
  const auto d = nets::build<Standard>("D_t", nets::discriminator_arch(4, 2), 2);
  const auto f = nets::build<Standard>("F_t", nets::depth_arch(4, 3), 3);
  const std::vector<const nets::ParamSet<Standard>*> all{&g, &d, &f};
  const std::string path = dir.str("a.bin");
  nets::save_checkpoint(path, all);
  const auto back = nets::load_checkpoint<Standard>(path);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_TRUE(back[0].values_equal(g));
  EXPECT_TRUE(back[1].values_equal(d));
  EXPECT_TRUE(back[2].values_equal(f));
  EXPECT_EQ(back[2].arch, f.arch);
  EXPECT_EQ(nets::find_net(back, "D_t").name, "D_t");
  EXPECT_THROW(nets::find_net(back, "F_s"), DataError);
  std::vector<const nets::ParamSet<Standard>*> again;
  for (const auto& n : back) again.push_back(&n);
  EXPECT_EQ(nets::encode_checkpoint(again), nets::encode_checkpoint(all));
}

TEST(Checkpoint, CorruptFilesAreParseErrorsWithOffsets) {
  const auto f = nets::build<Standard>("F_t", nets::depth_arch(4, 2), 3);
  const std::string bytes = nets::encode_checkpoint<Standard>({&f});
  try {
    nets::decode_checkpoint<Standard>(bytes.substr(0, bytes.size() - 3), "x.bin");
    FAIL() << "truncated checkpoint accepted";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos) << e.what();
  }
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(nets::decode_checkpoint<Standard>(bad, "x.bin"), ParseError);
  std::string version = bytes;
  version[8] = 9;
  EXPECT_THROW(nets::decode_checkpoint<Standard>(version, "x.bin"), ParseError);
  EXPECT_THROW(nets::load_checkpoint<Standard>("/nonexistent/dir/ckpt.bin"), IoError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  nets::ParamSet<Wide> p{"p", nets::generator_arch(1, 0), {{"w", TW::full({1, 1, 1, 1}, 1.0, true)}}};
  p.params[0].second.mutable_grad()[0] = 1.0;
  optim::AdamState<Wide> st;
  optim::adam_step(p, st, optim::AdamConfig{0.1, 0.9, 0.999, 1e-8});
  EXPECT_NEAR(p.params[0].second[0], 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  nets::ParamSet<Wide> p{"p", nets::generator_arch(1, 0), {{"w", random_tensor({1, 2, 3, 3}, 12, -1, 1, true)}}};
  const auto before = p.clone();
  p.params[0].second.mutable_grad();
  optim::AdamState<Wide> st;
  for (int i = 0; i < 3; ++i) optim::adam_step(p, st, optim::AdamConfig{});
  EXPECT_TRUE(p.values_equal(before));
}

TEST(Adam, RejectsNonFiniteGradientsAndBadConfig) {
  nets::ParamSet<Wide> p{"p", nets::generator_arch(1, 0), {{"w", TW::full({1, 1, 1, 1}, 1.0, true)}}};
  p.params[0].second.mutable_grad()[0] = std::nan("");
  optim::AdamState<Wide> st;
  EXPECT_THROW(optim::adam_step(p, st, optim::AdamConfig{}), NumericError);
  p.zero_grad();
  EXPECT_THROW(optim::adam_step(p, st, optim::AdamConfig{0.0}), ConfigError);
}

TEST(Adam, SmallStepDecreasesSupervisedDepthLoss) {
  auto f = nets::build_depth_net<Wide>("F", nets::depth_arch(4, 2), 13);
  const TW img = random_tensor({2, 3, 8, 8}, 14, 0, 1);
  const TW gt = random_tensor({2, 1, 8, 8}, 15, 5, 30);
  auto loss = [&] {
    Graph<Wide> g;
    GraphScope<Wide> scope(g);
    f.zero_grad();
    f.set_requires_grad(true);
    const TW l = losses::depth_supervised_loss(nets::run_depth_net(f, img)[0], gt);
    const double v = l.item();
    g.backward(l);
    return v;
  };
  const double before = loss();
  optim::AdamState<Wide> st;
  optim::adam_step(f, st, optim::AdamConfig{1e-6});
  EXPECT_LT(loss(), before);
}
