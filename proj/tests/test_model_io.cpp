#include <gtest/gtest.h>

#include <bit>
#include <filesystem>
#include <sstream>

#include "support.hpp"

using namespace ncr;

namespace {

std::vector<std::uint64_t> bits(const AnyModel& m) {
  AnyModel copy = m;
  std::vector<std::uint64_t> out;
  std::visit(
      [&](auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, PopularityTable>) {
          out.assign(x.counts.begin(), x.counts.end());
        } else if constexpr (std::is_same_v<T, BprParams>) {
          for (double v : x.user.values()) out.push_back(std::bit_cast<std::uint64_t>(v));
          for (double v : x.item.values()) out.push_back(std::bit_cast<std::uint64_t>(v));
        } else {
          for (double v : flatten(x)) out.push_back(std::bit_cast<std::uint64_t>(v));
        }
      },
      copy);
  return out;
}

std::string serialize(const AnyModel& m, const ModelHeader& h = {}) {
  std::ostringstream os;
  save_model(os, m, h);
  return os.str();
}

LoadedModel parse(const std::string& bytes) {
  std::istringstream is(bytes);
  return load_model(is);
}

std::vector<AnyModel> every_kind() {
  Rng rng({31});
  auto nbpr = NbprParams::random(7, 11, 8, {1});
  auto dncr = DncrParams::random(7, 11, 8, 3, {2});
  auto neupr = NeuprParams::random(7, 11, 16, 4, {3});
  auto shallow = DncrParams::random(7, 11, 6, 1, {4});
  ncr::testing::randomize(nbpr, rng);
  ncr::testing::randomize(dncr, rng);
  ncr::testing::randomize(neupr, rng);
  return {PopularityTable{{0, 3, 9, 1, 1, 0, 2, 7, 7, 4, 5}}, BprParams::random(7, 11, 5, {6}, 0.02, 0.3), nbpr,
          dncr, neupr, shallow};
}

}  // namespace

TEST(ModelIo, RoundTripIsBitExactForEveryKind) {
  for (const auto& m : every_kind()) {
    const auto loaded = parse(serialize(m));
    ASSERT_EQ(loaded.model.index(), m.index());
    EXPECT_EQ(bits(loaded.model), bits(m)) << model_kind(m);
    EXPECT_EQ(loaded.header.kind, model_kind(m));
    EXPECT_EQ(loaded.header.items, 11u);
  }
}

TEST(ModelIo, HeaderCarriesShapeSeedAndMetadata) {
  ModelHeader h;
  h.seed = 1234;
  h.metadata = {{"dataset_fingerprint", "abc"}, {"ratio", 2}};
  const auto neupr = NeuprParams::random(3, 5, 8, 4, {1});
  const auto loaded = parse(serialize(neupr, h));
  EXPECT_EQ(loaded.header.kind, "neupr");
  EXPECT_EQ(loaded.header.users, 3u);
  EXPECT_EQ(loaded.header.factors, 8u);
  EXPECT_EQ(loaded.header.layers, 4u);
  EXPECT_EQ(loaded.header.seed, 1234u);
  EXPECT_EQ(loaded.header.metadata["dataset_fingerprint"], "abc");
  EXPECT_EQ(loaded.header.metadata["ratio"], 2);

  const auto bpr = parse(serialize(BprParams::random(2, 3, 4, {1}, 0.07, 0.2)));
  EXPECT_EQ(std::get<BprParams>(bpr.model).learning_rate, 0.07);
  EXPECT_EQ(std::get<BprParams>(bpr.model).lambda, 0.2);
}

TEST(ModelIo, LayoutStartsWithMagicAndLittleEndianLength) {
  const auto bytes = serialize(NbprParams::random(2, 3, 4, {1}));
  ASSERT_GT(bytes.size(), 8u);
  EXPECT_EQ(bytes.substr(0, 4), "NCR1");
  const auto b = [&](int k) { return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 + k])); };
  const std::uint32_t len = b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
  const auto header = nlohmann::json::parse(bytes.substr(8, len));
  EXPECT_EQ(header["kind"], "nbpr");
  // 2x2 + 3x2 + 2x1 + 2x1 doubles follow
  EXPECT_EQ(bytes.size(), 8 + len + 8 * (4 + 6 + 2 + 2));
}

TEST(ModelIo, CorruptFilesAreFormatErrors) {
  const auto good = serialize(DncrParams::random(3, 4, 8, 2, {1}));
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(parse(bad_magic), FormatError);
  EXPECT_THROW(parse(good.substr(0, good.size() - 3)), FormatError);
  EXPECT_THROW(parse(good.substr(0, 6)), FormatError);
  EXPECT_THROW(parse(good + "x"), FormatError);
  EXPECT_THROW(parse(""), FormatError);

  auto unknown = good;
  const auto pos = unknown.find("\"dncr\"");
  ASSERT_NE(pos, std::string::npos);
  unknown.replace(pos, 6, "\"zzzz\"");
  EXPECT_THROW(parse(unknown), FormatError);
}

TEST(ModelIo, FileHelpersRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "ncr_model_io_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "m.ncr";
  const AnyModel m = NbprParams::random(4, 6, 4, {9});
  save_model_file(path, m);
  EXPECT_EQ(bits(load_model_file(path).model), bits(m));
  EXPECT_THROW(load_model_file(dir / "missing.ncr"), FormatError);
  std::filesystem::remove_all(dir);
}
