#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "graphfed/errors.hpp"
#include "graphfed/recording.hpp"
#include "graphfed/rng.hpp"

namespace graphfed {

struct dataset_split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// Stratified train/test split: per class, round(count * ratio) test samples,
// clamped so every class keeps at least one sample on each side. Classes with
// fewer than 2 samples cannot satisfy that and are rejected.
inline dataset_split split_train_test(const label_set& labels, double ratio, rng_stream& rng) {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw config_error("split: ratio must be in (0, 1), got " + std::to_string(ratio));
    std::vector<std::vector<std::size_t>> by_class(labels.n_classes);
    for (std::size_t i = 0; i < labels.labels.size(); ++i)
        by_class[labels.labels[i]].push_back(i);

    dataset_split out;
    for (int c = 0; c < labels.n_classes; ++c) {
        auto& members = by_class[c];
        if (members.empty()) continue;
        if (members.size() < 2)
            throw data_error("split: class " + std::to_string(c) +
                             " has fewer than 2 samples");
        std::size_t n_test = std::size_t(std::llround(double(members.size()) * ratio));
        n_test = std::clamp<std::size_t>(n_test, 1, members.size() - 1);
        rng.shuffle(members);
        out.test.insert(out.test.end(), members.begin(), members.begin() + n_test);
        out.train.insert(out.train.end(), members.begin() + n_test, members.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

} // namespace graphfed
