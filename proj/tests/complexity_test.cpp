#include <gtest/gtest.h>

#include <limits>
#include <sstream>

#include "convrnnt/complexity.hpp"
#include "convrnnt/config.hpp"
#include "convrnnt/errors.hpp"

using namespace convrnnt;

TEST(Flops, ConvSpotValues) {
  EXPECT_EQ(conv_flops(1, 1, 1, 1, 1), 4u);
  EXPECT_EQ(conv_flops(2, 3, 4, 100, 1), 28800u);
  EXPECT_EQ(conv_flops(100, 5, 100, 1000, 64), 64000000000ull);
  EXPECT_EQ(conv_flops(3, 5, 5, 7, 11, 13), 4ull * 3 * 25 * 7 * 11 * 13);
  EXPECT_EQ(conv_flops(3, 2, 5, 7, 11, 13), 4ull * 3 * 10 * 7 * 11 * 13);
}

TEST(Flops, LstmSpotValues) {
  EXPECT_EQ(lstm_flops(1, 1, 1, 1), 16u);
  EXPECT_EQ(lstm_flops(2, 10, 8, 16), 61440u);
  EXPECT_EQ(lstm_flops(7, 1000, 192, 640), 29818880000ull);
}

TEST(Flops, AttentionSpotValues) {
  EXPECT_EQ(attention_flops(1, 1, 1), 12u);
  EXPECT_EQ(attention_flops(1000, 256, 4), 8ull * 1000 * 65536 + 4ull * 1000000 * 256);
  EXPECT_GT(attention_flops(2000, 64, 4), 2 * attention_flops(1000, 64, 4));
  EXPECT_THROW(attention_flops(10, 256, 3), ConfigError);
  EXPECT_THROW(attention_flops(10, 256, 0), ConfigError);
}

TEST(Flops, OverflowIsReported) {
  const auto big = std::numeric_limits<std::uint64_t>::max() / 2;
  EXPECT_THROW(conv_flops(big, 1, 1, 1, 1), std::overflow_error);
  EXPECT_THROW(checked_sum(big, big + 2), std::overflow_error);
}

TEST(Flops, ConvRnntIsLinearInLength) {
  for (std::uint64_t n : {500u, 1000u, 2000u}) {
    const double a = encoder_flops("convrnnt", n).gflops();
    const double b = encoder_flops("convrnnt", 2 * n).gflops();
    EXPECT_NEAR(b / a, 2.0, 0.02);
  }
}

TEST(Flops, ConformerIsSuperlinear) {
  for (std::uint64_t n : {500u, 1000u, 2000u}) {
    EXPECT_GT(encoder_flops("conformer", 2 * n).total, 2 * encoder_flops("conformer", n).total);
  }
}

TEST(Flops, ConvRnntBelowConformerWithGrowingGap) {
  double prev_gap = 0.0;
  for (std::uint64_t n = 500; n <= 4000; n += 500) {
    const double c = encoder_flops("convrnnt", n).gflops();
    const double f = encoder_flops("conformer", n).gflops();
    EXPECT_LT(c, f) << n;
    EXPECT_GT(f - c, prev_gap) << n;
    prev_gap = f - c;
  }
}

TEST(Flops, ReportSumsLayers) {
  const FlopsReport r = encoder_flops("convrnnt", 777);
  Flops s = 0;
  for (const auto& l : r.per_layer) s += l.flops;
  EXPECT_EQ(s, r.total);
  // 4 local convs, 6 global blocks of 4 entries, fusion, 7 × (lstm + proj).
  EXPECT_EQ(r.per_layer.size(), 4u + 1u + 24u + 1u + 14u);
  EXPECT_THROW(encoder_flops("transformer", 10), ConfigError);
}

TEST(Flops, LengthRangeParsing) {
  EXPECT_EQ(parse_length_range("500:4000:500").size(), 8u);
  EXPECT_EQ(parse_length_range("7"), (std::vector<std::uint64_t>{7}));
  for (const char* bad : {"", "a:b:c", "10:5:1", "1:5:0", "0:5:1", "1:2"}) {
    EXPECT_THROW(parse_length_range(bad), ConfigError) << bad;
  }
}

TEST(Flops, CsvContract) {
  std::vector<FlopsReport> reports = {encoder_flops("convrnnt", 500), encoder_flops("conformer", 500)};
  std::ostringstream os;
  write_flops_csv(os, reports);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "length,gflops,model");
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 4), "500,");
  EXPECT_EQ(line.substr(line.size() - 9), ",convrnnt");
  std::getline(is, line);
  EXPECT_EQ(line.substr(line.size() - 10), ",conformer");
}
