#include "doctest.h"

#include <array>
#include <cmath>
#include <filesystem>
#include <random>

#include "flowsan/inference.hpp"
#include "flowsan/losses.hpp"
#include "support.hpp"

using namespace flowsan;
using namespace flowsan::testing;

namespace {

Image random_image(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0, 1);
  Image img(h, w);
  for (float& p : img.pixels) p = static_cast<float>(u(rng));
  return img;
}

SanChain random_chain(int n, ChainMode mode, std::uint64_t seed) {
  SanConfig cfg;
  cfg.depth = 2;
  cfg.channels = 3;
  cfg.base_width = 4;
  SanChain chain;
  chain.mode = mode;
  for (int i = 0; i < n; ++i) {
    chain.members.emplace_back(cfg, seed + static_cast<std::uint64_t>(i));
    chain.provenance.push_back({i, i + 1, seed + static_cast<std::uint64_t>(i)});
  }
  return chain;
}

GenderPrototypes random_prototypes(std::mt19937_64& rng, int size) {
  return {random_image(rng, size, size), random_image(rng, size, size)};
}

bool in_open_unit(const Image& img) {
  for (float v : img.pixels)
    if (!(v > 0.0f && v < 1.0f)) return false;
  return true;
}

}  // namespace

TEST_CASE("psi base case and manual composition") {
  std::mt19937_64 rng(1);
  const SanChain chain = random_chain(3, ChainMode::flow, 10);
  const GenderPrototypes protos = random_prototypes(rng, 16);
  for (int y : {0, 1}) {
    const Image img = random_image(rng, 16, 16);
    const PrototypePair p = select_prototypes(protos, y);
    const Image one = san_forward(chain.members[0], img, p.same, p.opposite);
    CHECK(psi(chain, img, 1, protos, y).pixels == one.pixels);
    const Image two = san_forward(chain.members[1], one, p.same, p.opposite);
    const Image three = san_forward(chain.members[2], two, p.same, p.opposite);
    CHECK(psi(chain, img, 3, protos, y).pixels == three.pixels);
  }
  CHECK_THROWS_AS(psi(chain, Image(16, 16, 0.5f), 0, protos, 1), UsageError);
  CHECK_THROWS_AS(psi(chain, Image(16, 16, 0.5f), 4, protos, 1), UsageError);
}

TEST_CASE("psi recursive and iterative forms agree bitwise") {
  std::mt19937_64 rng(2);
  const SanChain chain = random_chain(5, ChainMode::flow, 20);
  const GenderPrototypes protos = random_prototypes(rng, 16);
  for (int sample = 0; sample < 20; ++sample) {
    const Image img = random_image(rng, 16, 16);
    const int y = sample % 2;
    for (int t = 1; t <= 5; ++t) {
      const Image a = psi(chain, img, t, protos, y);
      CHECK(a.pixels == psi_iterative(chain, img, t, protos, y).pixels);
      CHECK(in_open_unit(a));
      if (t >= 2) {
        const PrototypePair p = select_prototypes(protos, y);
        const Image prev = psi(chain, img, t - 1, protos, y);
        CHECK(a.pixels == san_forward(chain.members[static_cast<std::size_t>(t - 1)], prev, p.same, p.opposite).pixels);
      }
    }
  }
}

TEST_CASE("ensemble averaging") {
  std::mt19937_64 rng(3);
  const SanChain chain = random_chain(4, ChainMode::ensemble, 30);
  const GenderPrototypes protos = random_prototypes(rng, 16);
  const Image img = random_image(rng, 16, 16);
  const PrototypePair p = select_prototypes(protos, 1);
  std::vector<Image> outs;
  for (const auto& m : chain.members) outs.push_back(san_forward(m, img, p.same, p.opposite));

  CHECK(ens_avg(chain, img, protos, 1, 1).pixels == outs[0].pixels);
  const Image avg = ens_avg(chain, img, protos, 1, 3);
  CHECK(in_open_unit(avg));
  for (std::size_t i = 0; i < avg.pixels.size(); ++i) {
    const double oracle = (static_cast<double>(outs[0].pixels[i]) + outs[1].pixels[i] + outs[2].pixels[i]) / 3.0;
    CHECK(std::abs(static_cast<double>(avg.pixels[i]) - static_cast<float>(oracle)) <= 1e-10);
  }

  SanChain same = chain;
  for (auto& m : same.members) m = chain.members[0];
  CHECK(ens_avg(same, img, protos, 1, 4).pixels == outs[0].pixels);
  CHECK_THROWS_AS(ens_avg(chain, img, protos, 1, 5), UsageError);
}

TEST_CASE("gibbs selection") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) CHECK(gibbs_select(1, seed) == 1);
  CHECK(gibbs_select(5, 42) == gibbs_select(5, 42));

  std::array<int, 5> counts{};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const int k = gibbs_select(5, static_cast<std::uint64_t>(i));
    REQUIRE(k >= 1);
    REQUIRE(k <= 5);
    ++counts[static_cast<std::size_t>(k - 1)];
  }
  for (int c : counts) {
    const double f = static_cast<double>(c) / draws;
    CHECK(f >= 0.18);
    CHECK(f <= 0.22);
  }

  std::mt19937_64 rng(4);
  const SanChain chain = random_chain(3, ChainMode::ensemble, 40);
  const GenderPrototypes protos = random_prototypes(rng, 16);
  const Image img = random_image(rng, 16, 16);
  const Selection s = ens_gibbs(chain, img, protos, 0, 3, 9);
  CHECK(s.member == gibbs_select(3, 9));
  const PrototypePair p = select_prototypes(protos, 0);
  CHECK(s.image.pixels == san_forward(chain.members[static_cast<std::size_t>(s.member - 1)], img, p.same, p.opposite).pixels);
  CHECK_THROWS_AS(ens_gibbs(chain, img, protos, 0, 0, 9), UsageError);
}

TEST_CASE("best member examples") {
  const std::vector<double> probs{0.7, 0.2, 0.5};
  CHECK(best_member(probs, 1) == 2);
  CHECK(best_member(probs, 0) == 1);
  const std::vector<double> tied{0.4, 0.4, 0.9};
  CHECK(best_member(tied, 1) == 1);
}

TEST_CASE("oracle selection dominates every member") {
  std::mt19937_64 rng(5);
  const SanChain chain = random_chain(4, ChainMode::ensemble, 50);
  const GenderPrototypes protos = random_prototypes(rng, 16);
  ConvNetConfig net;
  net.widths = {4, 8};
  net.strides = {2, 2};
  for (std::uint64_t gseed : {1u, 2u, 3u}) {
    const GenderClassifier<float> g(net, 16, 16, gseed);
    for (int sample = 0; sample < 20; ++sample) {
      const Image img = random_image(rng, 16, 16);
      const int y = sample % 2;
      const Selection best = ens_best(chain, img, y, g, protos, 4);
      const double h_best = binary_cross_entropy(y, g.predict(best.image));
      const PrototypePair p = select_prototypes(protos, y);
      for (const auto& m : chain.members) {
        CHECK(h_best >= binary_cross_entropy(y, g.predict(san_forward(m, img, p.same, p.opposite))));
      }
    }
  }
}

TEST_CASE("flow and ensemble traces") {
  std::mt19937_64 rng(6);
  const GenderPrototypes protos = random_prototypes(rng, 16);
  const Image img = random_image(rng, 16, 16);

  const SanChain flow = random_chain(4, ChainMode::flow, 60);
  const PerturbationTrace ft = trace(flow, img, protos, 1, 3);
  REQUIRE(ft.outputs.size() == 3);
  CHECK(ft.mode == ChainMode::flow);
  for (int t = 1; t <= 3; ++t) {
    CHECK(ft.outputs[static_cast<std::size_t>(t - 1)].pixels == psi(flow, img, t, protos, 1).pixels);
    CHECK(ft.members[static_cast<std::size_t>(t - 1)] == t);
    CHECK(in_open_unit(ft.outputs[static_cast<std::size_t>(t - 1)]));
  }

  const SanChain ens = random_chain(4, ChainMode::ensemble, 70);
  const PerturbationTrace et = trace(ens, img, protos, 0, 4, 17);
  REQUIRE(et.outputs.size() == 4);
  CHECK(et.gibbs_seed == 17);
  CHECK(et.gibbs_member == gibbs_select(4, 17));

  const auto path = std::filesystem::temp_directory_path() / "flowsan_test_trace.pgm";
  write_trace_grid(ft, path);
  CHECK(std::filesystem::exists(path));
  const Image grid = read_pgm(path);
  CHECK(grid.width == 16 * 4 + 3);
  CHECK(grid.height == 16);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(trace(flow, img, protos, 1, 5), UsageError);
}

TEST_CASE("chain mode names round trip") {
  CHECK(chain_mode_from_string(to_string(ChainMode::flow)) == ChainMode::flow);
  CHECK(chain_mode_from_string(to_string(ChainMode::ensemble)) == ChainMode::ensemble);
  CHECK_THROWS_AS(chain_mode_from_string("stack"), ConfigError);
}
