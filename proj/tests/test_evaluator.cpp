#include <doctest.h>

#include <cmath>

#include "lasp/evaluator.hpp"
#include "lasp/rng.hpp"
#include "lasp/synthetic.hpp"

using namespace lasp;

namespace {

struct Fixture {
    DualEncoder enc{EncoderConfig{}};
    TemplateBank bank = default_bank();
    SyntheticDataset data;
    TrainState trained;

    Fixture() {
        SyntheticDatasetSpec spec;
        spec.n_base = 4;
        spec.n_new = 3;
        spec.train_per_class = 8;
        spec.test_per_class = 10;
        data = make_synthetic_dataset(spec, enc, bank);
        TrainConfig c;
        c.epochs = 3;
        c.shots = 8;
        c.batch_size = 8;
        trained = fit(enc, data.base_train, data.base_names, bank, c).state;
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

double cosv(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < a.cols(); ++k) {
        ab += a.at(i, k) * b.at(j, k);
        aa += a.at(i, k) * a.at(i, k);
        bb += b.at(j, k) * b.at(j, k);
    }
    return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("harmonic mean reproduces reference triples") {
    struct Triple {
        double base, novel, H;
    };
    const Triple reference[] = {
        {82.70, 74.90, 78.61}, {82.69, 63.22, 71.66}, {69.34, 74.22, 71.70}, {94.60, 77.78, 85.36},
        {83.18, 76.11, 79.48}, {80.47, 71.69, 75.83}, {81.56, 72.30, 76.65}, {76.20, 70.95, 73.48},
        {72.43, 68.14, 70.22}, {95.90, 97.93, 96.90}, {97.0, 74.0, 83.95},   {34.53, 30.57, 32.43},
        {80.70, 78.60, 79.63}, {81.4, 58.6, 68.14},   {84.77, 78.03, 81.26}, {91.20, 91.70, 91.44},
    };
    for (auto& t : reference) {
        CAPTURE(t.base);
        CAPTURE(t.novel);
        CHECK(std::fabs(harmonic_mean(t.base, t.novel) - t.H) <= 0.01);
    }
    CHECK(harmonic_mean(0.0, 0.0) == 0.0);
    CHECK(harmonic_mean(0.0, 50.0) == 0.0);
    CHECK_THROWS(harmonic_mean(101.0, 50.0));
    CHECK_THROWS(harmonic_mean(50.0, -1.0));
}

TEST_CASE("property: harmonic mean is symmetric and bounded by the arithmetic mean") {
    Rng rng(1);
    for (int i = 0; i < 500; ++i) {
        const double a = 100.0 * rng.uniform(), b = 100.0 * rng.uniform();
        CHECK(harmonic_mean(a, b) == harmonic_mean(b, a));
        CHECK(harmonic_mean(a, b) <= (a + b) / 2 + 1e-12);
        CHECK(harmonic_mean(a, a) == doctest::Approx(a).epsilon(1e-14));
    }
}

TEST_CASE("classify: single class, ties, hand argmax") {
    const auto& f = fixture();
    auto im = f.data.base_test.examples[0].image;
    CHECK(classify(f.enc, nullptr, im, {"dog"}, Mode::HandCrafted, f.bank) == 0);
    CHECK(classify(f.enc, &f.trained, im, {"dog"}, Mode::Learned, f.bank) == 0);
    CHECK(classify(f.enc, &f.trained, im, {"dog", "dog"}, Mode::Learned, f.bank) == 0);
    CHECK(classify(f.enc, nullptr, im, {"cat", "cat", "cat"}, Mode::HandCrafted, f.bank) == 0);
    CHECK_THROWS_AS(classify(f.enc, nullptr, im, {}, Mode::HandCrafted, f.bank), InputError);
    CHECK_THROWS_AS(classify(f.enc, nullptr, im, {"dog"}, Mode::Learned, f.bank), InputError);
    CHECK(argmax({0.1, 0.7, 0.7, 0.2}) == 1);

    // learned scores against a hand computation from the classifier rows
    const std::vector<std::string> two{f.data.base_names[0], f.data.base_names[1]};
    auto clf = Classifier::learned(f.enc, f.trained, two);
    auto feats = image_features(f.enc, &f.trained, f.data.base_test.examples);
    auto s = clf.scores(feats);
    for (std::size_t i = 0; i < feats.rows(); ++i) {
        double want[2] = {0, 0};
        for (auto& g : clf.weights().groups)
            for (std::size_t c = 0; c < 2; ++c) want[c] += cosv(feats, i, g, c) / static_cast<double>(clf.weights().G());
        CHECK(std::fabs(s[i][0] - want[0]) < 1e-12);
        CHECK(std::fabs(s[i][1] - want[1]) < 1e-12);
        CHECK(clf.predict(slice_rows(feats, i, i + 1))[0] == (want[1] > want[0] ? 1u : 0u));
    }
}

TEST_CASE("property: classification ignores the scale of image features") {
    const auto& f = fixture();
    auto feats = image_features(f.enc, &f.trained, f.data.new_test.examples);
    auto learned = Classifier::learned(f.enc, f.trained, f.data.new_names);
    auto hand = Classifier::hand_crafted(f.enc, f.bank, f.data.new_names);
    for (double k : {1e-3, 0.5, 7.0, 1e3}) {
        CHECK(learned.predict(scale(feats, k)) == learned.predict(feats));
        CHECK(hand.predict(scale(feats, k)) == hand.predict(feats));
    }
}

TEST_CASE("evaluate_split: perfect, complement and chance") {
    DualEncoder enc{EncoderConfig{}};
    auto bank = default_bank();
    SyntheticDatasetSpec spec;
    spec.n_base = 2;
    spec.n_new = 2;
    spec.train_per_class = 1;
    spec.test_per_class = 20;
    spec.separation = 10.0;
    auto d = make_synthetic_dataset(spec, enc, bank);
    auto r = evaluate_split(enc, nullptr, d.base_test, d.base_names, Mode::HandCrafted, bank);
    REQUIRE(r.accuracy == 100.0);
    CHECK(r.per_class == std::vector<double>{100.0, 100.0});
    auto swapped = d.base_test;
    for (auto& e : swapped.examples) e.label = 1 - e.label;
    CHECK(evaluate_split(enc, nullptr, swapped, d.base_names, Mode::HandCrafted, bank).accuracy == 0.0);

    // labels drawn independently of the images: accuracy is 100/K in expectation
    const std::size_t K = 4, n = 800;
    Rng rng(3);
    FewShotDataset noise{{}, "base-test"};
    auto labels = rng.permutation(n);
    for (std::size_t i = 0; i < n; ++i) noise.examples.push_back({Tensor::from({16, 16, 3}, rng.normals(768, 1.0)), labels[i] % K});
    auto acc = evaluate_split(enc, nullptr, noise, {"dog", "cat", "river", "tower"}, Mode::HandCrafted, bank).accuracy;
    const double sigma = 100.0 * std::sqrt(0.25 * 0.75 / n);
    CHECK(std::fabs(acc - 25.0) < 3 * sigma);

    auto bad = d.base_test;
    bad.examples[0].label = 2;
    CHECK_THROWS_AS(evaluate_split(enc, nullptr, bad, d.base_names, Mode::HandCrafted, bank), ProtocolError);
    CHECK_THROWS_AS(evaluate_split(enc, nullptr, FewShotDataset{{}, "empty"}, d.base_names, Mode::HandCrafted, bank),
                    ProtocolError);
}

TEST_CASE("generalized evaluation with distractors") {
    const auto& f = fixture();
    auto base_only = f.data.base_test;
    auto plain = evaluate_split(f.enc, &f.trained, base_only, f.data.base_names, Mode::Learned, f.bank).accuracy;
    auto none = evaluate_generalized(f.enc, &f.trained, base_only, f.data.base_names, {}, Mode::Learned, f.bank);
    CHECK(none.without == plain);
    CHECK(none.with == plain);
    CHECK_THROWS_AS(evaluate_generalized(f.enc, &f.trained, base_only, f.data.base_names, {f.data.base_names[1]},
                                         Mode::Learned, f.bank),
                    ProtocolError);

    for (auto mode : {Mode::Learned, Mode::HandCrafted}) {
        auto r = evaluate_generalized(f.enc, &f.trained, base_only, f.data.base_names,
                                      {f.data.distractors.begin(), f.data.distractors.begin() + 4}, mode, f.bank);
        CHECK(r.with <= r.without);
    }
}

TEST_CASE("property: growing the candidate set never raises learned-mode accuracy") {
    const auto& f = fixture();
    Rng rng(5);
    std::vector<std::string> pool = f.data.distractors;
    pool.insert(pool.end(), f.data.outside_names.begin(), f.data.outside_names.end());
    for (int trial = 0; trial < 6; ++trial) {
        rng.shuffle(pool);
        std::vector<std::string> pick(pool.begin(), pool.begin() + 1 + static_cast<long>(rng.below(6)));
        auto r = evaluate_generalized(f.enc, &f.trained, f.data.new_test, f.data.new_names, pick, Mode::Learned, f.bank);
        CHECK(r.with <= r.without);
    }
}

TEST_CASE("every learned row, novel ones included, carries the same bias") {
    const auto& f = fixture();
    auto all = f.data.base_names;
    all.insert(all.end(), f.data.new_names.begin(), f.data.new_names.end());
    const auto& b = f.trained.prompts.bias;
    double bnorm = 0.0;
    for (double v : b.values()) bnorm += std::fabs(v);
    REQUIRE(bnorm > 0.0);
    auto raw = build_classifier(f.enc, f.trained.prompts, all);
    auto clf = Classifier::learned(f.enc, f.trained, all);
    REQUIRE(clf.weights().G() == raw.G());
    for (std::size_t g = 0; g < raw.G(); ++g)
        for (std::size_t c = 0; c < all.size(); ++c)
            for (std::size_t k = 0; k < b.numel(); ++k)
                CHECK(std::fabs(clf.weights().groups[g].at(c, k) - raw.groups[g].at(c, k) - b[k]) < 1e-12);
}

TEST_CASE("centroid distance matrix") {
    auto same = Tensor::from({3, 2}, {1, 1, 1, 1, 1, 1});
    auto z = centroid_distance_matrix(same);
    for (double v : z.matrix.values()) CHECK(std::fabs(v) < 1e-12);
    CHECK(std::fabs(z.mean_off_diagonal) < 1e-12);
    auto orth = centroid_distance_matrix(Tensor::from({2, 2}, {1, 0, 0, 3}));
    CHECK(orth.matrix.at(0, 1) == doctest::Approx(1.0));
    CHECK(orth.mean_off_diagonal == doctest::Approx(1.0));
    CHECK_THROWS_AS(centroid_distance_matrix(Tensor::from({1, 2}, {1, 0})), InputError);

    Rng rng(2);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t C = 2 + rng.below(8);
        auto m = centroid_distance_matrix(Tensor::from({C, 8}, rng.normals(C * 8, 1.0))).matrix;
        for (std::size_t i = 0; i < C; ++i) {
            CHECK(m.at(i, i) == 0.0);
            for (std::size_t j = 0; j < C; ++j) CHECK(std::fabs(m.at(i, j) - m.at(j, i)) < 1e-12);
        }
    }

    const auto& f = fixture();
    auto emb = final_class_embeddings(Classifier::learned(f.enc, f.trained, f.data.base_names).weights());
    CHECK(emb.shape() == Shape{4, 32});
    auto hand = ensemble_class_embeddings(compute_anchors(f.enc, f.bank, f.data.base_names));
    CHECK(hand.shape() == Shape{4, 32});
    for (std::size_t i = 0; i < 4; ++i) CHECK(cosv(hand, i, hand, i) == doctest::Approx(1.0));
}

TEST_CASE("base/new report") {
    const auto& f = fixture();
    auto r = evaluate_base_new(f.enc, &f.trained, f.data.base_test, f.data.new_test, f.data.base_names,
                               f.data.new_names, Mode::Learned, f.bank);
    CHECK(r.base >= 0.0);
    CHECK(r.base <= 100.0);
    CHECK(r.H == doctest::Approx(harmonic_mean(r.base, r.novel)));
    CHECK(r.per_class_base.size() == 4);
    CHECK(r.per_class_new.size() == 3);
    double mean = 0.0;
    for (double v : r.per_class_new) mean += v / 3.0;
    CHECK(mean == doctest::Approx(r.novel));
}
