#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "lasp/encoders.hpp"
#include "lasp/rng.hpp"

using namespace lasp;

namespace {

const DualEncoder& shared() {
    static const DualEncoder enc{EncoderConfig{}};
    return enc;
}

Tensor random_image(std::uint64_t seed) {
    Rng rng(seed);
    return Tensor::from({16, 16, 3}, rng.normals(16 * 16 * 3, 1.0));
}

}  // namespace

TEST_CASE("tokenizer brackets, truncates and is total") {
    const auto& tok = shared().tokenizer();
    CHECK(tok.tokenize("") == std::vector<int>{Tokenizer::start_id, Tokenizer::end_id});
    auto ids = tok.tokenize("a photo of a dog");
    REQUIRE(ids.size() == 7);
    CHECK(ids.front() == Tokenizer::start_id);
    CHECK(ids.back() == Tokenizer::end_id);
    CHECK(ids == tok.tokenize("a photo of a dog"));

    const int oov = tok.word_id("xqzzvbt");
    CHECK(oov >= static_cast<int>(tok.hash_band_begin()));
    CHECK(oov < static_cast<int>(tok.vocab_size()));
    CHECK(oov == tok.word_id("xqzzvbt"));

    std::string longtext;
    for (int i = 0; i < 100; ++i) longtext += "photo ";
    auto t = tok.tokenize(longtext);
    CHECK(t.size() == tok.max_len());
    CHECK(t.back() == Tokenizer::end_id);

    CHECK(Tokenizer::words_of("A Photo, of_the DOG!") == std::vector<std::string>{"a", "photo", "of", "the", "dog"});
}

TEST_CASE("detokenize keeps in-vocabulary words in order") {
    const auto& tok = shared().tokenizer();
    auto words = tok.detokenize(tok.tokenize("a bright photo of the river"));
    CHECK(words == std::vector<std::string>{"a", "bright", "photo", "of", "the", "river"});
}

TEST_CASE("class name embeddings") {
    const auto& enc = shared();
    CHECK(enc.embed_class_name("dog").values() == enc.embed_class_name("dog").values());
    CHECK(enc.embed_class_name("forest").values() != enc.embed_class_name("dog").values());
    CHECK_THROWS_AS(enc.embed_class_name(""), InputError);
    auto two = enc.embed_class_name("maine coon");
    REQUIRE(two.shape() == Shape{2, 32});
    const auto& table = enc.text().token_table();
    const auto& tok = enc.tokenizer();
    for (std::size_t k = 0; k < 32; ++k) {
        CHECK(two.at(0, k) == table.at(static_cast<std::size_t>(tok.word_id("maine")), k));
        CHECK(two.at(1, k) == table.at(static_cast<std::size_t>(tok.word_id("coon")), k));
    }
}

TEST_CASE("text encoder: deterministic, length-checked, batched like single calls") {
    const auto& enc = shared();
    auto seq = enc.embed_text("a photo of a dog");
    CHECK(enc.text().encode(seq).values() == enc.text().encode(seq).values());
    CHECK(enc.text().encode(seq).shape() == Shape{32});
    CHECK_THROWS_AS(enc.text().encode(Tensor::zeros({33, 32})), InputError);
    CHECK_THROWS_AS(enc.text().encode(Tensor::zeros({4, 31})), DimensionError);

    std::vector<Tensor> seqs{enc.embed_text("a photo of a dog"), enc.embed_text("cat"),
                             enc.embed_text("a painting of the river"), enc.embed_text("bird")};
    auto batch = enc.text().encode_batch(seqs);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        auto one = enc.text().encode(seqs[i]);
        for (std::size_t k = 0; k < 32; ++k) CHECK(std::fabs(batch.at(i, k) - one[k]) < 1e-12);
    }
}

TEST_CASE("prompt slots receive gradient, encoder weights never do") {
    const auto& enc = shared();
    Rng rng(4);
    auto prompt = Tensor::from({4, 32}, rng.normals(4 * 32, 0.02), true);
    auto seq = concat_rows({enc.start_embedding(), prompt, enc.embed_class_name("dog"), enc.end_embedding()});
    auto target = Tensor::from({32}, rng.normals(32, 1.0));
    auto f = [&] { return cosine_similarity(enc.text().encode(seq), target); };
    f().backward();
    REQUIRE(prompt.has_grad());
    double gnorm = 0.0;
    for (double g : prompt.grad()) gnorm += g * g;
    CHECK(std::sqrt(gnorm) > 1e-8);

    // finite-difference probe on one slot
    const double h = 1e-5;
    auto& v = prompt.mutable_values();
    const double keep = v[5];
    v[5] = keep + h;
    seq = concat_rows({enc.start_embedding(), prompt.detach(), enc.embed_class_name("dog"), enc.end_embedding()});
    const double up = f().item();
    v[5] = keep - h;
    seq = concat_rows({enc.start_embedding(), prompt.detach(), enc.embed_class_name("dog"), enc.end_embedding()});
    const double down = f().item();
    v[5] = keep;
    CHECK(std::fabs((up - down) / (2 * h)) > 1e-8);
    CHECK(std::fabs((up - down) / (2 * h) - prompt.grad()[5]) < 1e-6);

    for (auto& [name, p] : enc.named_parameters()) {
        CAPTURE(name);
        CHECK_FALSE(p.requires_grad());
        CHECK_FALSE(p.has_grad());
    }
}

TEST_CASE("property: every prompt slot moves the text feature") {
    const auto& enc = shared();
    Rng rng(8);
    auto prompt = Tensor::from({4, 32}, rng.normals(4 * 32, 0.02));
    auto feat = [&](const Tensor& p) {
        return enc.text().encode(concat_rows({enc.start_embedding(), p, enc.embed_class_name("dog"), enc.end_embedding()}));
    };
    auto base = feat(prompt);
    for (std::size_t i = 0; i < prompt.numel(); ++i) {
        auto moved = prompt.clone();
        moved.mutable_values()[i] += 1e-2;
        CHECK(feat(moved).values() != base.values());
    }
}

TEST_CASE("vision encoder: deterministic, shape checked, LN-only gradients") {
    const auto& enc = shared();
    auto im = random_image(1);
    CHECK(enc.vision().encode(im).values() == enc.vision().encode(im).values());
    CHECK_THROWS_AS(enc.vision().encode(Tensor::zeros({15, 16, 3})), std::exception);
    EncoderConfig bad;
    bad.image_h = 18;
    CHECK_THROWS_AS(VisionEncoder(bad, 1), InputError);

    im = Tensor::from(im.shape(), im.values(), true);
    sum(enc.vision().encode(im)).backward();
    CHECK(im.has_grad());
    for (auto& [name, p] : enc.named_parameters()) CHECK_FALSE(p.has_grad());

    auto ln = enc.vision().clone_ln(true);
    sum(square(enc.vision().encode(random_image(2), &ln))).backward();
    std::set<std::string> ln_names;
    for (auto& n : enc.vision().ln_names()) ln_names.insert(n);
    for (auto& t : ln) CHECK(t.has_grad());
    for (auto& [name, p] : enc.named_parameters()) CHECK_FALSE(p.has_grad());
    CHECK(ln.size() == 2 * enc.vision().ln_layer_count());
    CHECK(ln_names.size() == ln.size());
}

TEST_CASE("batched vision encoding matches single images") {
    const auto& enc = shared();
    std::vector<Tensor> ims{random_image(3), random_image(4), random_image(5)};
    auto batch = enc.vision().encode_batch(ims);
    for (std::size_t i = 0; i < ims.size(); ++i) {
        auto one = enc.vision().encode(ims[i]);
        for (std::size_t k = 0; k < 32; ++k) CHECK(std::fabs(batch.at(i, k) - one[k]) < 1e-12);
    }
}

TEST_CASE("weight snapshots are byte-reproducible and round-trip") {
    DualEncoder a{EncoderConfig{}}, b{EncoderConfig{}};
    const auto bytes = snapshot_bytes(a.named_parameters());
    CHECK(bytes == snapshot_bytes(b.named_parameters()));
    EncoderConfig other;
    other.seed = 2;
    CHECK(bytes != snapshot_bytes(DualEncoder(other).named_parameters()));

    std::istringstream in(bytes);
    auto back = read_snapshot(in, "memory");
    auto orig = a.named_parameters();
    REQUIRE(back.size() == orig.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].first == orig[i].first);
        CHECK(back[i].second.shape() == orig[i].second.shape());
        CHECK(back[i].second.values() == orig[i].second.values());
    }
    CHECK(bytes.rfind("lasp-snapshot 1\n", 0) == 0);
}

TEST_CASE("tau is fixed and positive") {
    CHECK(shared().tau() == 0.01);
    EncoderConfig c;
    c.tau = 0.0;
    CHECK_THROWS(DualEncoder{c});
}
