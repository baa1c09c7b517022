#include <gtest/gtest.h>

#include <cmath>

#include "sav/metrics.hpp"
#include "sav/phantom.hpp"
#include "testutil.hpp"

using namespace sav;

TEST(Phantom, DeterministicForFixedSeed) {
    PhantomConfig cfg;
    cfg.seed = 99;
    Case a = generate(cfg);
    Case b = generate(cfg);
    EXPECT_EQ(a.image.data, b.image.data);
    EXPECT_EQ(a.truth->data, b.truth->data);
    cfg.seed = 100;
    Case c = generate(cfg);
    EXPECT_NE(a.image.data, c.image.data);
}

TEST(Phantom, LesionCountMatchesComponentCount) {
    PhantomConfig cfg;
    for (uint64_t seed = 0; seed < 12; ++seed) {
        cfg.seed = seed;
        PhantomCase pc = generate_detail(cfg);
        EXPECT_GE(pc.n_lesions, cfg.n_lesions_min);
        EXPECT_LE(pc.n_lesions, cfg.n_lesions_max);
        Grid3<uint8_t> lesions(pc.c.truth->data.dims(), 0);
        for (size_t i = 0; i < lesions.size(); ++i) lesions[i] = pc.c.truth->data[i] == 1;
        Components comps = connected_components_3d(lesions, 26);
        EXPECT_EQ(comps.count, pc.n_lesions) << "seed " << seed;
    }
}

TEST(Phantom, LabelsAreLegalAndCaseValidates) {
    PhantomConfig cfg;
    cfg.include_label2 = true;
    cfg.seed = 4;
    Case c = generate(cfg);
    c.validate();
    bool saw2 = false;
    for (size_t i = 0; i < c.truth->data.size(); ++i) {
        ASSERT_LE(c.truth->data[i], 2);
        saw2 |= c.truth->data[i] == 2;
    }
    EXPECT_TRUE(saw2);
    EXPECT_EQ(c.scanner, "phantom");
    EXPECT_TRUE(all_finite(c.image.data));
}

TEST(Phantom, LesionsAreBrighterThanSurroundings) {
    PhantomConfig cfg;
    cfg.seed = 21;
    cfg.lesion_contrast = 4.0;  // strong bump so the check is not noise-bound
    Case c = generate(cfg);
    double in = 0, out = 0;
    int nin = 0, nout = 0;
    for (size_t i = 0; i < c.image.data.size(); ++i) {
        if (c.truth->data[i] == 1) {
            in += c.image.data[i];
            ++nin;
        } else {
            out += c.image.data[i];
            ++nout;
        }
    }
    ASSERT_GT(nin, 0);
    EXPECT_GT(in / nin, out / nout + 2.0 * cfg.background_noise);
}

TEST(Phantom, MeanStampVolumeTracksEllipsoidVolume) {
    // with continuous-uniform centers the expected voxel count of a stamp is
    // the continuous ellipsoid volume; check the sample mean within 20%
    PhantomConfig cfg;
    cfg.shape = {96, 96, 24};
    cfg.n_lesions_min = cfg.n_lesions_max = 6;
    cfg.radius_inplane_min = 2.0;
    cfg.radius_inplane_max = 4.0;
    cfg.radius_z_min = 0.5;
    cfg.radius_z_max = 1.5;
    double total = 0;
    int lesions = 0;
    for (uint64_t seed = 0; seed < 40; ++seed) {
        cfg.seed = seed;
        PhantomCase pc = generate_detail(cfg);
        for (size_t i = 0; i < pc.c.truth->data.size(); ++i) total += pc.c.truth->data[i] == 1;
        lesions += pc.n_lesions;
    }
    double mean_volume = total / lesions;
    // E[4/3 pi rh rw rz] with independent radii = 4/3 pi E[rh] E[rw] E[rz]
    double expected = 4.0 / 3.0 * 3.14159265358979 * 3.0 * 3.0 * 1.0;
    EXPECT_NEAR(mean_volume, expected, 0.2 * expected);
}

TEST(Phantom, DatasetHasSequentialIdsAndDistinctContent) {
    PhantomConfig cfg;
    auto cases = generate_dataset(3, cfg, 7);
    ASSERT_EQ(cases.size(), 3u);
    EXPECT_EQ(cases[0].id, "case000");
    EXPECT_EQ(cases[2].id, "case002");
    EXPECT_NE(cases[0].image.data, cases[1].image.data);
}

TEST(Phantom, ImpossibleSeparationThrows) {
    PhantomConfig cfg;
    cfg.shape = {16, 16, 4};
    cfg.radius_z_min = cfg.radius_z_max = 0.0;
    cfg.radius_inplane_min = cfg.radius_inplane_max = 1.0;
    cfg.n_lesions_min = cfg.n_lesions_max = 40;  // cannot fit 40 separated blobs
    cfg.seed = 1;
    EXPECT_THROW(generate(cfg), std::runtime_error);
}

TEST(Phantom, ConfigJsonRoundTrip) {
    PhantomConfig cfg;
    cfg.shape = {32, 48, 8};
    cfg.n_lesions_min = 2;
    cfg.n_lesions_max = 5;
    cfg.include_label2 = true;
    cfg.seed = 17;
    PhantomConfig back = phantom_from_json(phantom_to_json(cfg));
    EXPECT_EQ(back.shape, cfg.shape);
    EXPECT_EQ(back.n_lesions_max, 5);
    EXPECT_TRUE(back.include_label2);
    EXPECT_EQ(back.seed, 17u);
}
