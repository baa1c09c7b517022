#include <gtest/gtest.h>

#include <fstream>

#include <json.hpp>

#include "sav/plot.hpp"
#include "testutil.hpp"

using namespace sav;
using savtest::TempDir;

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)), {});
}

uint32_t be32(const std::vector<unsigned char>& b, size_t off) {
    return (uint32_t(b[off]) << 24) | (uint32_t(b[off + 1]) << 16) | (uint32_t(b[off + 2]) << 8) | b[off + 3];
}

}  // namespace

TEST(Png, WriterEmitsValidSignatureAndDims) {
    TempDir td("png");
    Canvas c(37, 23);
    c.fill_rect(2, 2, 10, 10, 200, 30, 30);
    c.line(0, 0, 36, 22, 0, 0, 255);
    auto p = td / "t.png";
    write_png(p.string(), c);
    auto bytes = read_bytes(p);
    ASSERT_GT(bytes.size(), 50u);
    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    for (int i = 0; i < 8; ++i) ASSERT_EQ(bytes[i], sig[i]);
    // IHDR starts at offset 8: length(4) type(4) then width/height
    ASSERT_EQ(std::string(bytes.begin() + 12, bytes.begin() + 16), "IHDR");
    EXPECT_EQ(be32(bytes, 16), 37u);
    EXPECT_EQ(be32(bytes, 20), 23u);
    // ends with IEND
    ASSERT_EQ(std::string(bytes.end() - 8, bytes.end() - 4), "IEND");
}

TEST(Plot, LossCurveWritesPngAndSidecar) {
    TempDir td("curve");
    std::vector<TracePoint> rows;
    for (int s = 1; s <= 40; ++s) rows.push_back({s, 1.0 / s, 0.5 / s, 0.5 / s});
    auto p = td / "loss.png";
    plot_loss_curve(rows, p.string());
    EXPECT_TRUE(std::filesystem::exists(p));
    std::ifstream side(p.string() + ".json");
    ASSERT_TRUE(side.good());
    nlohmann::json j;
    side >> j;
    EXPECT_EQ(j.at("kind"), "loss_curve");
    ASSERT_EQ(j.at("steps").size(), 40u);
    EXPECT_DOUBLE_EQ(j.at("total")[0].get<double>(), 1.0);
}

TEST(Plot, ScannerBarsWritesPngAndSidecar) {
    TempDir td("bars");
    std::vector<ScannerBar> groups{{"ge", 0.8, 0.2, 0.7}, {"siemens", 0.75, 0.3, 0.66}};
    auto p = td / "bars.png";
    plot_scanner_bars(groups, p.string());
    EXPECT_TRUE(std::filesystem::exists(p));
    std::ifstream side(p.string() + ".json");
    nlohmann::json j;
    side >> j;
    EXPECT_EQ(j.at("kind"), "scanner_bars");
    ASSERT_EQ(j.at("groups").size(), 2u);
    EXPECT_EQ(j.at("groups")[1].at("scanner"), "siemens");
    EXPECT_DOUBLE_EQ(j.at("groups")[0].at("dice").get<double>(), 0.8);
}

TEST(Plot, EmptyInputsRejected) {
    TempDir td("empty");
    EXPECT_THROW(plot_loss_curve({}, (td / "x.png").string()), std::invalid_argument);
    EXPECT_THROW(plot_scanner_bars({}, (td / "y.png").string()), std::invalid_argument);
}
