#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>

#include "sav/common.hpp"

namespace sav {

// 3D intensity grid with voxel spacing (mm) and the shape it had before any
// preprocessing transform touched it.
struct Volume {
    Grid3<float> data;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    Shape3 original_shape{0, 0, 0};

    Volume() = default;
    Volume(Grid3<float> g, std::array<double, 3> sp)
        : data(std::move(g)), spacing(sp), original_shape(data.dims()) {
        validate();
    }

    void validate() const {
        if (data.empty()) throw std::invalid_argument("Volume: empty data");
        for (double s : spacing)
            if (!(s > 0.0)) throw std::invalid_argument("Volume: spacing components must be > 0");
    }
};

// Labels: 0 background, 1 WMH, 2 other pathology.
struct LabelMask {
    Grid3<uint8_t> data;

    LabelMask() = default;
    explicit LabelMask(Grid3<uint8_t> g) : data(std::move(g)) { validate(); }

    void validate() const {
        for (size_t i = 0; i < data.size(); ++i)
            if (data[i] > 2)
                throw std::invalid_argument("LabelMask: illegal label value " + std::to_string(int(data[i])) +
                                            " (allowed: 0, 1, 2)");
    }
};

struct Case {
    std::string id;
    std::string scanner;  // Table-style scanner name, or "phantom"
    Volume image;
    std::optional<LabelMask> truth;

    void validate() const {
        image.validate();
        if (truth) {
            truth->validate();
            if (!truth->data.same_shape(image.data))
                throw std::invalid_argument("Case " + id + ": truth shape " + shape3_str(truth->data.dims()) +
                                            " does not match image shape " + shape3_str(image.data.dims()));
        }
    }
};

}  // namespace sav
