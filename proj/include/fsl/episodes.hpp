#pragma once

#include <string>
#include <vector>

#include "fsl/dataset.hpp"
#include "fsl/rng.hpp"
#include "fsl/tensor.hpp"

namespace fsl {

// One few-shot task. Support and query labels are episode-local, in
// [0, n_way). Distractor flags are diagnostics only; no model code may
// read them.
struct Episode {
    Tensor support_x;  // [N*K x D]
    std::vector<int> support_y;
    Tensor unlabeled_x;  // [M*(N+H) x D]
    std::vector<bool> is_distractor;
    Tensor query_x;  // [q*N x D]
    std::vector<int> query_y;
    std::vector<int> episode_classes;    // dataset class ids of the N classes
    std::vector<int> distractor_classes; // dataset class ids of the H classes

    int n_way() const { return static_cast<int>(episode_classes.size()); }
};

struct EpisodeSpec {
    int n_way = 5;
    int k_shot = 1;
    int m_unlabeled = 5;   // per class, for the N real and H distractor classes alike
    int h_distractor = 5;  // distractor classes
    int q_per_class = 5;
};

namespace detail {

inline void append_item(const Dataset& ds, int item, std::vector<double>& out) {
    const double* p = ds.item(item);
    out.insert(out.end(), p, p + ds.input_numel());
}

}  // namespace detail

inline Episode sample_episode(const Dataset& ds, const LabeledUnlabeledSplit& split, Partition partition,
                              const EpisodeSpec& spec, Rng& rng) {
    if (spec.n_way < 1 || spec.k_shot < 1 || spec.q_per_class < 1 || spec.m_unlabeled < 0 ||
        spec.h_distractor < 0)
        throw ConfigError("sample_episode: invalid episode spec");
    const auto classes = ds.classes_in(partition);
    if (static_cast<int>(classes.size()) < spec.n_way + spec.h_distractor)
        throw ConfigError("sample_episode: partition '" + std::string(partition_name(partition)) + "' has " +
                          std::to_string(classes.size()) + " classes, need " +
                          std::to_string(spec.n_way + spec.h_distractor));

    auto picked = rng.sample_without_replacement(static_cast<int>(classes.size()), spec.n_way + spec.h_distractor);
    Episode ep;
    for (int i = 0; i < spec.n_way; ++i)
        ep.episode_classes.push_back(classes[static_cast<std::size_t>(picked[static_cast<std::size_t>(i)])]);
    for (int i = 0; i < spec.h_distractor; ++i)
        ep.distractor_classes.push_back(
            classes[static_cast<std::size_t>(picked[static_cast<std::size_t>(spec.n_way + i)])]);

    const int D = ds.input_numel();
    std::vector<double> sup, unl, qry;

    for (int c = 0; c < spec.n_way; ++c) {
        const int cls = ep.episode_classes[static_cast<std::size_t>(c)];
        const auto& lab = split.labeled[static_cast<std::size_t>(cls)];
        if (static_cast<int>(lab.size()) < spec.k_shot + spec.q_per_class)
            throw ConfigError("sample_episode: class '" + ds.classes[static_cast<std::size_t>(cls)].name +
                              "' labeled split has " + std::to_string(lab.size()) + " items, need " +
                              std::to_string(spec.k_shot + spec.q_per_class));
        auto pick = rng.sample_without_replacement(static_cast<int>(lab.size()), spec.k_shot + spec.q_per_class);
        for (int i = 0; i < spec.k_shot; ++i) {
            detail::append_item(ds, lab[static_cast<std::size_t>(pick[static_cast<std::size_t>(i)])], sup);
            ep.support_y.push_back(c);
        }
        for (int i = 0; i < spec.q_per_class; ++i) {
            detail::append_item(ds, lab[static_cast<std::size_t>(pick[static_cast<std::size_t>(spec.k_shot + i)])],
                                qry);
            ep.query_y.push_back(c);
        }
    }

    auto draw_unlabeled = [&](int cls, bool distractor) {
        const auto& unlab = split.unlabeled[static_cast<std::size_t>(cls)];
        if (static_cast<int>(unlab.size()) < spec.m_unlabeled)
            throw ConfigError("sample_episode: class '" + ds.classes[static_cast<std::size_t>(cls)].name +
                              "' unlabeled split has " + std::to_string(unlab.size()) + " items, need " +
                              std::to_string(spec.m_unlabeled));
        auto pick = rng.sample_without_replacement(static_cast<int>(unlab.size()), spec.m_unlabeled);
        for (int i = 0; i < spec.m_unlabeled; ++i) {
            detail::append_item(ds, unlab[static_cast<std::size_t>(pick[static_cast<std::size_t>(i)])], unl);
            ep.is_distractor.push_back(distractor);
        }
    };
    for (int cls : ep.episode_classes)
        draw_unlabeled(cls, false);
    for (int cls : ep.distractor_classes)
        draw_unlabeled(cls, true);

    ep.support_x = Tensor({spec.n_way * spec.k_shot, D}, std::move(sup));
    ep.unlabeled_x = Tensor({spec.m_unlabeled * (spec.n_way + spec.h_distractor), D}, std::move(unl));
    ep.query_x = Tensor({spec.n_way * spec.q_per_class, D}, std::move(qry));
    return ep;
}

}  // namespace fsl
