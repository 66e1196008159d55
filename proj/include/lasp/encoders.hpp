#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lasp/tensor.hpp"

namespace lasp {

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class Tokenizer {
public:
    static constexpr int pad_id = 0;
    static constexpr int start_id = 1;
    static constexpr int end_id = 2;

    Tokenizer(const std::vector<std::string>& words, std::size_t vocab_size, std::size_t max_len);
    static Tokenizer standard(std::size_t vocab_size = 4096, std::size_t max_len = 32);

    // lowercased words split on whitespace, punctuation dropped
    static std::vector<std::string> words_of(const std::string& text);

    int word_id(const std::string& word) const;
    std::vector<int> word_ids(const std::string& text) const;
    // [start, words..., end], truncated to max_len while keeping the end id
    std::vector<int> tokenize(const std::string& text) const;
    std::vector<std::string> detokenize(const std::vector<int>& ids) const;

    std::size_t vocab_size() const { return vocab_size_; }
    std::size_t max_len() const { return max_len_; }
    std::size_t hash_band_begin() const { return band_begin_; }

private:
    std::unordered_map<std::string, int> ids_;
    std::vector<std::string> words_;
    std::size_t vocab_size_, max_len_, band_begin_;
};

struct EncoderConfig {
    std::size_t vocab = 4096;
    std::size_t d_tok = 32;
    std::size_t d = 32;
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t max_len = 32;
    std::size_t patch = 4;
    std::size_t image_h = 16;
    std::size_t image_w = 16;
    std::size_t channels = 3;
    double tau = 0.01;
    double token_std = 0.02;
    double pos_std = 0.002;
    double text_weight_std = 0.05;
    double vision_weight_std = 0.18;
    double cls_std = 0.02;
    std::vector<double> text_slopes = {1.0, 0.5};
    // fraction of the mean text feature over a reference vocabulary removed at the output
    double text_centering = 0.8;
    std::uint64_t seed = 1;
};

struct Block {
    Tensor ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, w2;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

Tensor block_forward(const Tensor& x, const Block& b, std::size_t nseq, std::size_t len, std::size_t heads,
                     const std::vector<double>& slopes, const Tensor* ln = nullptr);

class TextEncoder {
public:
    TextEncoder() = default;
    TextEncoder(const EncoderConfig& cfg, std::uint64_t seed);

    // seq: [len, d_tok] -> [d]
    Tensor encode(const Tensor& seq) const;
    // each seq [len_i, d_tok] -> [n, d] in input order; equal lengths are batched
    Tensor encode_batch(const std::vector<Tensor>& seqs) const;

    Tensor embed_ids(const std::vector<int>& ids) const;

    NamedTensors named_parameters() const;
    const Tensor& token_table() const { return tok_; }
    std::size_t max_len() const { return cfg_.max_len; }
    // fixed output offset, [d]
    void set_output_offset(const Tensor& offset);

private:
    EncoderConfig cfg_;
    Tensor tok_, pos_, lnf_g_, lnf_b_, proj_, offset_;
    std::vector<Block> blocks_;
};

// Flat list of vision LayerNorm affine tensors: gain,bias pairs for
// ln_pre, each block's ln1/ln2, ln_post.
using LnParams = std::vector<Tensor>;

class VisionEncoder {
public:
    VisionEncoder() = default;
    VisionEncoder(const EncoderConfig& cfg, std::uint64_t seed);

    // image: [h, w, c]. ln overrides the frozen LN affine tensors when given.
    Tensor encode(const Tensor& image, const LnParams* ln = nullptr) const;
    Tensor encode_batch(const std::vector<Tensor>& images, const LnParams* ln = nullptr) const;

    const LnParams& ln_params() const { return ln_; }
    // independent copies, optionally trainable
    LnParams clone_ln(bool trainable) const;
    std::vector<std::string> ln_names() const;
    std::size_t ln_layer_count() const { return ln_.size() / 2; }

    NamedTensors named_parameters() const;

private:
    Tensor patches(const Tensor& image) const;

    EncoderConfig cfg_;
    Tensor patch_proj_, cls_, pos_, proj_;
    std::vector<Block> blocks_;
    LnParams ln_;
    std::vector<std::size_t> patch_index_;
};

class DualEncoder {
public:
    explicit DualEncoder(const EncoderConfig& cfg = {});

    const EncoderConfig& config() const { return cfg_; }
    const Tokenizer& tokenizer() const { return tok_; }
    const TextEncoder& text() const { return text_; }
    const VisionEncoder& vision() const { return vision_; }
    double tau() const { return cfg_.tau; }

    // token embedding rows of the class name words, [k, d_tok]
    Tensor embed_class_name(const std::string& name) const;
    Tensor embed_text(const std::string& text) const;
    Tensor start_embedding() const;
    Tensor end_embedding() const;

    NamedTensors named_parameters() const;

private:
    EncoderConfig cfg_;
    Tokenizer tok_;
    TextEncoder text_;
    VisionEncoder vision_;
};

void save_snapshot(const std::string& path, const NamedTensors& tensors);
NamedTensors load_snapshot(const std::string& path);
NamedTensors read_snapshot(std::istream& in, const std::string& origin);
std::string snapshot_bytes(const NamedTensors& tensors);

}  // namespace lasp
