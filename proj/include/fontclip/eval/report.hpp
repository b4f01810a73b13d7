#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <stdexcept>
#include <string>

namespace fontclip {

struct EvalReport {
    std::size_t fonts = 0;
    double arr_tag_to_img = 0.0;
    double arr_img_to_tag = 0.0;
    double map_tag_to_img = 0.0;
    double map_img_to_tag = 0.0;
    double amt_accuracy = 0.0;
    double amt_arr = 0.0;
    std::size_t amt_groups = 0;
    double pc1_before = 0.0;
    double pc1_after = 0.0;
    double spearman_before = 0.0;
    double spearman_after = 0.0;
    nlohmann::json hashes = nlohmann::json::object();

    /// Throws std::logic_error naming the first field outside its range.
    void validate() const {
        const auto in = [](const char* name, double v, double lo, double hi, bool open_lo = false) {
            if (!std::isfinite(v) || v > hi || (open_lo ? v <= lo : v < lo))
                throw std::logic_error(std::string(name) + " = " + std::to_string(v) + " is out of range");
        };
        const double n = static_cast<double>(fonts);
        in("arr_tag_to_img", arr_tag_to_img, 1.0, n);
        in("arr_img_to_tag", arr_img_to_tag, 1.0, n);
        in("map_tag_to_img", map_tag_to_img, 0.0, 1.0, true);
        in("map_img_to_tag", map_img_to_tag, 0.0, 1.0, true);
        if (amt_groups > 0) {
            in("amt_accuracy", amt_accuracy, 0.0, 1.0);
            in("amt_arr", amt_arr, 1.0, 3.0);
        }
        in("pc1_before", pc1_before, -1.0, 1.0);
        in("pc1_after", pc1_after, -1.0, 1.0);
        in("spearman_before", spearman_before, -1.0, 1.0);
        in("spearman_after", spearman_after, -1.0, 1.0);
    }

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"fonts", fonts},
                {"arr_tag_to_img", arr_tag_to_img},
                {"arr_img_to_tag", arr_img_to_tag},
                {"random_baseline_arr", (static_cast<double>(fonts) + 1.0) / 2.0},
                {"map_tag_to_img", map_tag_to_img},
                {"map_img_to_tag", map_img_to_tag},
                {"amt_accuracy", amt_accuracy},
                {"amt_arr", amt_arr},
                {"amt_groups", amt_groups},
                {"pc1_correlation", pc1_after},
                {"pc1_correlation_before", pc1_before},
                {"rank_pair_spearman", spearman_after},
                {"rank_pair_spearman_before", spearman_before},
                {"hashes", hashes}};
    }
};

}  // namespace fontclip
