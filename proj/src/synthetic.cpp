#include "lasp/synthetic.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lasp/dataset.hpp"
#include "lasp/evaluator.hpp"
#include "lasp/lexicon.hpp"
#include "lasp/rng.hpp"

namespace lasp {

namespace {

Tensor optimize_center(const DualEncoder& enc, const Tensor& target, Rng& rng, const SyntheticDatasetSpec& spec) {
    const Shape shape{spec.image_h, spec.image_w, spec.channels};
    const std::size_t n = numel_of(shape);
    auto x = Tensor::from(shape, rng.normals(n, 1.0), true);
    std::vector<double> m(n, 0.0), v(n, 0.0);
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (std::size_t it = 1; it <= spec.center_steps; ++it) {
        x.clear_grad();
        auto loss = scale(cosine_similarity(enc.vision().encode(x), target), -1.0);
        loss.backward();
        auto& xv = x.mutable_values();
        const auto& g = x.grad();
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(it));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(it));
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + (1 - b1) * g[i];
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
            xv[i] -= spec.center_lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
        double ss = 0.0;
        for (double e : xv) ss += e * e;
        const double rms = std::sqrt(ss / static_cast<double>(n));
        for (auto& e : xv) e /= rms;
    }
    return x.detach();
}

std::vector<Example> sample_cluster(const Tensor& center, double sep, std::size_t label, std::size_t count, Rng& rng) {
    std::vector<Example> out;
    for (std::size_t k = 0; k < count; ++k) {
        std::vector<double> d(center.numel());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = sep * center[i] + rng.normal();
        out.push_back({Tensor::from(center.shape(), std::move(d)), label});
    }
    return out;
}

}  // namespace

void SyntheticDatasetSpec::validate() const {
    if (!(separation > 0.0)) throw ConfigError("separation must be positive");
    if (n_base == 0 || n_new == 0) throw ConfigError("need at least one base and one new class");
    if (train_per_class == 0 || test_per_class == 0) throw ConfigError("samples per class must be positive");
    if (n_base + n_new > 96) throw ConfigError("at most 96 synthetic classes");
}

SyntheticDataset make_synthetic_dataset(const SyntheticDatasetSpec& spec, const DualEncoder& enc,
                                        const TemplateBank& bank) {
    spec.validate();
    Rng rng(spec.seed);
    const std::size_t C = spec.n_base + spec.n_new;
    auto pool = lexicon::name_pool();
    rng.shuffle(pool);
    auto mods = lexicon::modifiers();
    rng.shuffle(mods);

    SyntheticDataset ds;
    for (std::size_t c = 0; c < C; ++c) (c < spec.n_base ? ds.base_names : ds.new_names).push_back(pool[c]);
    for (std::size_t c = 0; c < C; ++c) ds.distractors.push_back(pool[c] + " " + mods[c % mods.size()]);
    for (std::size_t c = 0; c < C; ++c) ds.outside_names.push_back(pool[C + c]);

    auto names = ds.base_names;
    names.insert(names.end(), ds.new_names.begin(), ds.new_names.end());
    auto ens = ensemble_class_embeddings(compute_anchors(enc, bank, names));
    const std::size_t d = ens.cols();
    std::vector<double> mu(d, 0.0);
    for (std::size_t i = 0; i < ens.numel(); ++i) mu[i % d] += ens[i] / static_cast<double>(C);

    for (std::size_t c = 0; c < C; ++c) {
        std::vector<double> t(d);
        for (std::size_t j = 0; j < d; ++j) t[j] = ens.at(c, j) - mu[j];
        double tn = 0.0, rn = 0.0;
        for (double v : t) tn += v * v;
        auto r = rng.normals(d, 1.0);
        for (double v : r) rn += v * v;
        for (std::size_t j = 0; j < d; ++j)
            t[j] = t[j] / std::sqrt(tn) + spec.misalignment * r[j] / std::sqrt(rn);
        ds.centers.push_back(optimize_center(enc, Tensor::from({d}, std::move(t)), rng, spec));
    }

    ds.base_train.split = "base-train";
    ds.base_test.split = "base-test";
    ds.new_test.split = "new-test";
    for (std::size_t c = 0; c < spec.n_base; ++c) {
        auto tr = sample_cluster(ds.centers[c], spec.separation, c, spec.train_per_class, rng);
        ds.base_train.examples.insert(ds.base_train.examples.end(), tr.begin(), tr.end());
    }
    for (std::size_t c = 0; c < spec.n_base; ++c) {
        auto te = sample_cluster(ds.centers[c], spec.separation, c, spec.test_per_class, rng);
        ds.base_test.examples.insert(ds.base_test.examples.end(), te.begin(), te.end());
    }
    for (std::size_t c = 0; c < spec.n_new; ++c) {
        auto te = sample_cluster(ds.centers[spec.n_base + c], spec.separation, c, spec.test_per_class, rng);
        ds.new_test.examples.insert(ds.new_test.examples.end(), te.begin(), te.end());
    }
    return ds;
}

std::string write_synthetic_dataset(const SyntheticDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");
    const auto manifest = (fs::path(dir) / "manifest.txt").string();
    std::ofstream m(manifest);
    m << "root images\nformat tensor\n";
    for (auto& n : ds.base_names) m << "class " << n << " base\n";
    for (auto& n : ds.new_names) m << "class " << n << " new\n";
    std::size_t k = 0;
    auto dump = [&](const FewShotDataset& part, const std::vector<std::string>& names, const char* kind) {
        for (auto& e : part.examples) {
            const auto file = std::string(kind) + "_" + std::to_string(k++) + ".tensor";
            write_tensor_image((fs::path(dir) / "images" / file).string(), e.image);
            m << kind << ' ' << names[e.label] << ' ' << file << '\n';
        }
    };
    dump(ds.base_train, ds.base_names, "train");
    dump(ds.base_test, ds.base_names, "test");
    dump(ds.new_test, ds.new_names, "test");
    return manifest;
}

}  // namespace lasp
