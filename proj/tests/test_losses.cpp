#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lasp/losses.hpp"
#include "lasp/rng.hpp"

using namespace lasp;

namespace {

using Vec = std::vector<double>;

// straightforward double-precision oracle, no autodiff
double dot(const Vec& a, const Vec& b) { return std::inner_product(a.begin(), a.end(), b.begin(), 0.0); }
double cosv(const Vec& a, const Vec& b) { return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b)); }
Vec softmaxv(const Vec& z) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    Vec e(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += e[i] = std::exp(z[i] - m);
    for (auto& v : e) v /= s;
    return e;
}
Vec row(const Tensor& t, std::size_t r) {
    return Vec(t.values().begin() + static_cast<long>(r * t.cols()), t.values().begin() + static_cast<long>((r + 1) * t.cols()));
}
// anchors[l][c] against x: mean over l in S of softmax_c(cos/tau)
Vec oracle_text_dist(const TextAnchors& a, const std::vector<std::size_t>& S, const Vec& x, double tau) {
    Vec p(a.C, 0.0);
    for (auto l : S) {
        Vec z(a.C);
        for (std::size_t c = 0; c < a.C; ++c) z[c] = cosv(row(a.features, l * a.C + c), x) / tau;
        auto s = softmaxv(z);
        for (std::size_t c = 0; c < a.C; ++c) p[c] += s[c] / static_cast<double>(S.size());
    }
    return p;
}
double oracle_tt(const TextAnchors& a, const std::vector<std::size_t>& S, const Tensor& t_r, double tau) {
    double l = 0.0;
    for (std::size_t c = 0; c < t_r.rows(); ++c) l -= std::log(oracle_text_dist(a, S, row(t_r, c), tau)[c]);
    return l / static_cast<double>(t_r.rows());
}

Vec unit(double angle) { return {std::cos(angle), std::sin(angle)}; }
Tensor rows_of(const std::vector<Vec>& rs) {
    Vec flat;
    for (auto& r : rs) flat.insert(flat.end(), r.begin(), r.end());
    return Tensor::from({rs.size(), rs[0].size()}, flat);
}
Tensor randn(Rng& rng, Shape s, bool grad = false) {
    std::size_t n = 1;
    for (auto k : s) n *= k;
    return Tensor::from(s, rng.normals(n, 1.0), grad);
}
double sumv(const Tensor& t) { return std::accumulate(t.values().begin(), t.values().end(), 0.0); }

std::vector<std::size_t> argmax_rows(const Tensor& s) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < s.rows(); ++i) {
        auto r = row(s, i);
        out.push_back(static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin()));
    }
    return out;
}

std::vector<std::size_t> all_of(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), 0);
    return v;
}

}  // namespace

TEST_CASE("zero-shot distribution") {
    auto one = make_anchors(rows_of({{1.0, 2.0}}), 1, 1);
    CHECK(zero_shot_distribution(one, 0, Tensor::from({2}, {0.3, -1.0}), 0.01)[0] == doctest::Approx(1.0));

    auto sym = make_anchors(rows_of({unit(0.3), unit(-0.3)}), 1, 2);
    auto p = zero_shot_distribution(sym, 0, Tensor::from({2}, {2.0, 0.0}), 0.01);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-12));

    auto tri = make_anchors(rows_of({unit(0.1), unit(0.5), unit(2.0)}), 1, 3);
    const Vec f{0.8, 0.3};
    auto q = zero_shot_distribution(tri, 0, Tensor::from({2}, f), 0.01);
    auto o = softmaxv({std::cos(0.1 - std::atan2(0.3, 0.8)) / 0.01, std::cos(0.5 - std::atan2(0.3, 0.8)) / 0.01,
                       std::cos(2.0 - std::atan2(0.3, 0.8)) / 0.01});
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::fabs(q[c] - o[c]) < 1e-12);
    CHECK(std::fabs(sumv(q) - 1.0) < 1e-12);

    CHECK_THROWS_AS(zero_shot_distribution(tri, 0, Tensor::zeros({2}), 0.01), DegenerateInputError);
    CHECK_THROWS(zero_shot_distribution(tri, 0, Tensor::from({2}, f), 0.0));
}

TEST_CASE("V&L distribution") {
    auto same = rows_of({{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}});
    auto u = vl_distribution(same, Tensor::from({2}, {0.2, 0.7}), 0.01);
    for (std::size_t c = 0; c < 3; ++c) CHECK(u[c] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    auto p = vl_distribution(rows_of({{1.0, 0.0}, {0.0, 1.0}}), Tensor::from({2}, {1.0, 0.0}), 0.01);
    CHECK(std::fabs(p[0] - 1.0 / (1.0 + std::exp(-100.0))) < 1e-15);
    CHECK(p[1] == doctest::Approx(std::exp(-100.0)).epsilon(1e-9));

    Rng rng(3);
    auto w = randn(rng, {5, 8});
    auto f = randn(rng, {8});
    auto base = vl_distribution(w, f, 0.01);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    auto pw = vl_distribution(select_rows(w, perm), f, 0.01);
    for (std::size_t i = 0; i < 5; ++i) CHECK(pw[i] == doctest::Approx(base[perm[i]]).epsilon(1e-12));
}

TEST_CASE("V&L loss") {
    ClassifierWeights same{{rows_of({{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}})}};
    auto f = Tensor::from({1, 2}, {0.3, 0.1});
    CHECK(vl_loss(same, f, {2}, 0.01).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    ClassifierWeights sharp{{rows_of({{1.0, 0.0}, {0.0, 1.0}})}};
    CHECK(vl_loss(sharp, Tensor::from({1, 2}, {1.0, 0.0}), {0}, 0.01).item() < 1e-40);

    ClassifierWeights two{{rows_of({unit(0.2), unit(1.1)})}};
    const Vec x = unit(0.5);
    auto oracle = -std::log(softmaxv({std::cos(0.3) / 0.01, std::cos(0.6) / 0.01})[1]);
    CHECK(std::fabs(vl_loss(two, Tensor::from({1, 2}, x), {1}, 0.01).item() - oracle) < 1e-12);

    // a batch averages; grouped scores average cosines before the softmax
    auto batch = Tensor::from({2, 2}, {x[0], x[1], 1.0, 0.0});
    auto l0 = vl_loss(two, Tensor::from({1, 2}, x), {1}, 0.01).item();
    auto l1 = vl_loss(two, Tensor::from({1, 2}, {1.0, 0.0}), {0}, 0.01).item();
    CHECK(std::fabs(vl_loss(two, batch, {1, 0}, 0.01).item() - 0.5 * (l0 + l1)) < 1e-12);
    ClassifierWeights g2{{rows_of({unit(0.2), unit(1.1)}), rows_of({unit(0.0), unit(0.4)})}};
    auto og = -std::log(softmaxv({(std::cos(0.3) + std::cos(0.5)) / 2 / 0.01, (std::cos(0.6) + std::cos(0.1)) / 2 / 0.01})[0]);
    CHECK(std::fabs(vl_loss(g2, Tensor::from({1, 2}, x), {0}, 0.01).item() - og) < 1e-12);

    CHECK_THROWS(vl_loss(two, f, {2}, 0.01));
}

TEST_CASE("text class distribution averages probabilities, not logits") {
    // t_r on the x axis; template 0 gives [0.9, 0.1], template 1 is symmetric
    const double tau = 0.01;
    const double c1 = 1.0 - tau * std::log(9.0);
    auto a = make_anchors(rows_of({unit(0.0), unit(std::acos(c1)), unit(0.4), unit(-0.4)}), 2, 2);
    auto t = Tensor::from({1, 2}, {1.0, 0.0});
    auto p0 = text_class_distribution(a, {0}, t, tau);
    CHECK(p0.at(0, 0) == doctest::Approx(0.9).epsilon(1e-3));
    auto p = text_class_distribution(a, {0, 1}, t, tau);
    CHECK(std::fabs(p.at(0, 0) - 0.7) < 1e-3);
    CHECK(std::fabs(p.at(0, 1) - 0.3) < 1e-3);
    // averaging logits instead would give a different answer
    auto logit_avg = softmaxv({(1.0 + std::cos(0.4)) / 2 / tau, (c1 + std::cos(0.4)) / 2 / tau});
    CHECK(std::fabs(logit_avg[0] - 0.7) > 0.03);

    auto single = text_class_distribution(a, {1}, t, tau);
    auto direct = softmaxv({std::cos(0.4) / tau, std::cos(0.4) / tau});
    CHECK(std::fabs(single.at(0, 0) - direct[0]) < 1e-12);
    CHECK_THROWS_AS(text_class_distribution(a, {}, t, tau), ConfigError);

    // duplicated identical templates change nothing
    auto dup = make_anchors(rows_of({unit(0.0), unit(0.7), unit(0.0), unit(0.7)}), 2, 2);
    auto once = make_anchors(rows_of({unit(0.0), unit(0.7)}), 1, 2);
    auto tr = Tensor::from({1, 2}, {0.6, 0.5});
    CHECK(std::fabs(text_class_distribution(dup, {0, 1}, tr, tau).at(0, 1) -
                    text_class_distribution(once, {0}, tr, tau).at(0, 1)) < 1e-15);
}

TEST_CASE("text-to-text loss") {
    const double tau = 0.01;
    auto flat = make_anchors(rows_of({{1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}}), 1, 3);
    auto t = Tensor::from({1, 2}, {0.2, 0.9});
    CHECK(tt_loss(flat, {0}, t, {1}, tau).item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    auto exact = make_anchors(rows_of({unit(0.0), unit(1.5)}), 1, 2);
    CHECK(tt_loss(exact, {0}, rows_of({unit(0.0), unit(1.5)}), {0, 1}, 1e-3).item() < 1e-100);

    Rng rng(5);
    auto a3 = make_anchors(randn(rng, {6, 8}), 2, 3);
    auto tr = randn(rng, {3, 8});
    CHECK(std::fabs(tt_loss(a3, {0, 1}, tr, {0, 1, 2}, 0.5).item() - oracle_tt(a3, {0, 1}, tr, 0.5)) < 1e-12);
    CHECK(std::fabs(tt_loss(a3, {0, 1}, tr, {0, 1, 2}, 0.5, Reduction::Sum).item() - 3 * oracle_tt(a3, {0, 1}, tr, 0.5)) <
          1e-12);
    CHECK_THROWS(tt_loss(a3, {0}, tr, {0, 1, 3}, tau));
    CHECK_THROWS_AS(tt_loss(a3, {0}, tr, {0, 1}, tau), DimensionError);
}

TEST_CASE("regression text losses measure distance to the template-mean anchor") {
    auto a = make_anchors(rows_of({{1.0, 0.0}, {0.0, 2.0}, {0.0, 1.0}, {0.0, 3.0}}), 2, 2);
    // class 0 mean anchor (0.5, 0.5), class 1 mean anchor (0, 1)
    auto t = rows_of({{3.0, 0.0}, {0.0, 5.0}});
    auto l1 = regression_tt_loss(a, {0, 1}, t, {0, 1}, TTLossKind::L1).item();
    auto l2 = regression_tt_loss(a, {0, 1}, t, {0, 1}, TTLossKind::L2).item();
    CHECK(l1 == doctest::Approx((0.5 + 0.5 + 0.0) / 2).epsilon(1e-12));
    CHECK(l2 == doctest::Approx(std::sqrt(0.5) / 2).epsilon(1e-12));
    CHECK(regression_tt_loss(a, {1}, rows_of({{0.0, 1.0}}), {1}, TTLossKind::L2).item() == doctest::Approx(0.0));
    CHECK_THROWS_AS(parse_loss_kind("huber"), ConfigError);
    CHECK(parse_loss_kind(to_string(TTLossKind::L2)) == TTLossKind::L2);
}

TEST_CASE("grouped text-to-text loss") {
    Rng rng(9);
    const double tau = 0.3;
    auto a = make_anchors(randn(rng, {6 * 3, 8}), 6, 3);
    auto bank1 = make_bank({"a {}", "b {}", "c {}", "d {}", "e {}", "f {}"});
    auto t = randn(rng, {3, 8});
    ClassifierWeights w1{{t}};
    CHECK(std::fabs(grouped_tt_loss(a, w1, bank1, tau).item() - tt_loss(a, all_of(6), t, {0, 1, 2}, tau).item()) < 1e-12);

    // two groups holding duplicated template subsets and identical prompts
    auto half = make_anchors(select_rows(a.features, all_of(9)), 3, 3);
    auto doubled = make_anchors(concat_rows({half.features, half.features}), 6, 3);
    auto b2 = make_bank({"a {}", "b {}", "c {}", "a {}", "b {}", "c {}"});
    b2.group_of = {0, 0, 0, 1, 1, 1};
    ClassifierWeights w2{{t, t}};
    CHECK(std::fabs(grouped_tt_loss(doubled, w2, b2, tau).item() - 2 * tt_loss(half, {0, 1, 2}, t, {0, 1, 2}, tau).item()) <
          1e-12);

    auto b3 = split_templates(bank1, 3, 4);
    ClassifierWeights w3{{randn(rng, {3, 8}), randn(rng, {3, 8}), randn(rng, {3, 8})}};
    double oracle = 0.0;
    auto members = b3.members();
    for (std::size_t g = 0; g < 3; ++g) oracle += oracle_tt(a, members[g], w3.groups[g], tau);
    CHECK(std::fabs(grouped_tt_loss(a, w3, b3, tau).item() - oracle) < 1e-12);

    CHECK_THROWS_AS(grouped_tt_loss(a, w2, b3, tau), ConfigError);
}

TEST_CASE("combined loss") {
    auto vl = Tensor::from({1}, {0.7}), tt = Tensor::from({1}, {0.05});
    CHECK(combined_loss(vl, tt, 1.0, 0.0).item() == 0.7);
    CHECK(combined_loss(vl, tt, 0.0, 20.0).item() == doctest::Approx(1.0));
    CHECK(combined_loss(vl, tt, 1.0, 20.0).item() == doctest::Approx(1.7));
    CHECK(combined_loss(vl, std::nullopt, 2.0, 20.0).item() == doctest::Approx(1.4));
    CHECK_THROWS_AS(combined_loss(vl, tt, 1.0, std::nan("")), ConfigError);
}

TEST_CASE("bias correction shifts every row by the same vector") {
    Rng rng(2);
    ClassifierWeights w{{randn(rng, {4, 8}), randn(rng, {4, 8})}};
    auto zero = apply_bias_correction(w, Tensor::zeros({8}));
    CHECK(zero.bias_applied);
    for (std::size_t g = 0; g < 2; ++g) CHECK(zero.groups[g].values() == w.groups[g].values());
    auto b = randn(rng, {8});
    auto s = apply_bias_correction(w, b);
    for (std::size_t g = 0; g < 2; ++g)
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t k = 0; k < 8; ++k) CHECK(std::fabs(s.groups[g].at(c, k) - w.groups[g].at(c, k) - b[k]) < 1e-12);
    CHECK_THROWS_AS(apply_bias_correction(w, Tensor::zeros({7})), DimensionError);
}

TEST_CASE("grouped inference scores") {
    const Vec f{1.0, 0.0};
    auto at = [](double c) { return Vec{c, std::sqrt(1.0 - c * c)}; };
    ClassifierWeights g2{{rows_of({at(0.2), at(0.8)}), rows_of({at(0.4), at(0.0)})}};
    auto s = grouped_inference_scores(g2, Tensor::from({2}, f));
    CHECK(s.at(0, 0) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(s.at(0, 1) == doctest::Approx(0.4).epsilon(1e-12));

    Rng rng(6);
    auto w = randn(rng, {5, 8});
    auto x = randn(rng, {3, 8});
    ClassifierWeights one{{w}}, same{{w, w, w}};
    auto plain = cosine_matrix(x, w);
    auto s1 = grouped_inference_scores(one, x), s3 = grouped_inference_scores(same, x);
    for (std::size_t i = 0; i < plain.numel(); ++i) {
        CHECK(std::fabs(s1.values()[i] - plain.values()[i]) < 1e-12);
        CHECK(std::fabs(s3.values()[i] - plain.values()[i]) < 1e-12);
    }
}

TEST_CASE("property: predictions are invariant to positive rescaling of features") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        ClassifierWeights w{{randn(rng, {6, 8}), randn(rng, {6, 8})}};
        auto x = randn(rng, {4, 8});
        auto a = argmax_rows(grouped_inference_scores(w, x));
        auto b = argmax_rows(grouped_inference_scores(w, scale(x, 0.001 + 50.0 * rng.uniform())));
        CHECK(a == b);
    }
}

TEST_CASE("property: every distribution is non-negative and sums to one") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t C = 2 + rng.below(6), L = 1 + rng.below(4);
        auto a = make_anchors(randn(rng, {L * C, 8}), L, C);
        auto t = randn(rng, {3, 8});
        const double tau = trial % 2 ? 0.01 : 1.0;
        std::vector<Tensor> ds{zero_shot_distribution(a, 0, randn(rng, {8}), tau),
                               vl_distribution(a.template_rows(L - 1), randn(rng, {8}), tau)};
        auto p = text_class_distribution(a, all_of(L), t, tau);
        for (std::size_t i = 0; i < 3; ++i) ds.push_back(reshape(slice_rows(p, i, i + 1), {C}));
        for (auto& d : ds) {
            CHECK(std::fabs(sumv(d) - 1.0) < 1e-12);
            for (double v : d.values()) CHECK(v >= 0.0);
        }
    }
}

TEST_CASE("property: text loss gradients reach learnable features only") {
    DualEncoder enc{EncoderConfig{}};
    auto bank = split_templates(default_bank(), 3, 1);
    const std::vector<std::string> names{"dog", "cat", "river"};
    auto anchors = compute_anchors(enc, bank, names);
    auto p = init_prompts(3, 4, 32, 32, 1);
    auto w = build_classifier(enc, p, names);
    grouped_tt_loss(anchors, w, bank, 0.01).backward();
    CHECK_FALSE(anchors.features.requires_grad());
    CHECK_FALSE(anchors.normalized.has_grad());
    REQUIRE(p.vectors.has_grad());
    double g = 0.0;
    for (double v : p.vectors.grad()) g += std::fabs(v);
    CHECK(g > 0.0);
}

TEST_CASE("gradient suite: V&L, text, grouped text and composite losses") {
    const double tau = 0.5;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        const std::size_t Cs[] = {2, 3, 5}, Ls[] = {1, 2, 6}, Gs[] = {1, 2, 3};
        const std::size_t C = Cs[seed % 3], L = Ls[(seed / 3) % 3], G = std::min(Gs[(seed / 9 + seed) % 3], L);
        const std::size_t d = 8;
        CAPTURE(seed);
        CAPTURE(C);
        CAPTURE(L);
        CAPTURE(G);
        auto anchors = make_anchors(randn(rng, {L * C, d}), L, C);
        std::vector<std::string> t;
        for (std::size_t l = 0; l < L; ++l) t.push_back(std::to_string(l) + " {}");
        auto bank = split_templates(make_bank(t), G, seed);
        std::vector<Tensor> in;
        for (std::size_t g = 0; g < G; ++g) in.push_back(randn(rng, {C, d}, true));
        in.push_back(randn(rng, {4, d}, true));      // image features
        in.push_back(randn(rng, {d}, true));         // bias
        std::vector<std::size_t> labels{0, 1 % C, 2 % C, (C - 1)};
        auto classifier = [G](const std::vector<Tensor>& x) {
            ClassifierWeights w;
            for (std::size_t g = 0; g < G; ++g) w.groups.push_back(x[g]);
            return apply_bias_correction(w, x[G + 1]);
        };
        auto vl = [&](const std::vector<Tensor>& x) { return vl_loss(classifier(x), x[G], labels, tau); };
        auto tt = [&](const std::vector<Tensor>& x) { return tt_loss(anchors, all_of(L), x[0], all_of(C), tau); };
        auto gtt = [&](const std::vector<Tensor>& x) {
            ClassifierWeights w;
            for (std::size_t g = 0; g < G; ++g) w.groups.push_back(x[g]);
            return grouped_tt_loss(anchors, w, bank, tau);
        };
        auto total = [&](const std::vector<Tensor>& x) { return combined_loss(vl(x), gtt(x), 1.0, 20.0); };
        CHECK(grad_check(vl, in, 1e-4).max_rel_error < 1e-4);
        CHECK(grad_check(tt, in, 1e-4).max_rel_error < 1e-4);
        CHECK(grad_check(gtt, in, 1e-4).max_rel_error < 1e-4);
        CHECK(grad_check(total, in, 1e-4).max_rel_error < 1e-4);
    }
}
