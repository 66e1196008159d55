#include "lasp/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "lasp/lexicon.hpp"
#include "lasp/rng.hpp"

namespace lasp {

namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

Tensor gaussian(Rng& rng, Shape shape, double std) {
    auto n = numel_of(shape);
    return Tensor::from(std::move(shape), rng.normals(n, std));
}

Block make_block(Rng& rng, std::size_t d, double std) {
    Block b;
    b.ln1_g = Tensor::full({d}, 1.0);
    b.ln1_b = Tensor::zeros({d});
    b.wq = gaussian(rng, {d, d}, std);
    b.wk = gaussian(rng, {d, d}, std);
    b.wv = gaussian(rng, {d, d}, std);
    b.wo = gaussian(rng, {d, d}, std);
    b.ln2_g = Tensor::full({d}, 1.0);
    b.ln2_b = Tensor::zeros({d});
    b.w1 = gaussian(rng, {d, 4 * d}, std);
    b.w2 = gaussian(rng, {4 * d, d}, std);
    return b;
}

void push_block(NamedTensors& out, const std::string& pre, const Block& b, bool with_ln) {
    if (with_ln) {
        out.emplace_back(pre + ".ln1.gain", b.ln1_g);
        out.emplace_back(pre + ".ln1.bias", b.ln1_b);
    }
    out.emplace_back(pre + ".attn.wq", b.wq);
    out.emplace_back(pre + ".attn.wk", b.wk);
    out.emplace_back(pre + ".attn.wv", b.wv);
    out.emplace_back(pre + ".attn.wo", b.wo);
    if (with_ln) {
        out.emplace_back(pre + ".ln2.gain", b.ln2_g);
        out.emplace_back(pre + ".ln2.bias", b.ln2_b);
    }
    out.emplace_back(pre + ".mlp.w1", b.w1);
    out.emplace_back(pre + ".mlp.w2", b.w2);
}

std::vector<std::size_t> tiled(std::size_t nseq, std::size_t len) {
    std::vector<std::size_t> idx(nseq * len);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i % len;
    return idx;
}

}  // namespace

Tokenizer::Tokenizer(const std::vector<std::string>& words, std::size_t vocab_size, std::size_t max_len)
    : vocab_size_(vocab_size), max_len_(max_len), band_begin_(vocab_size / 2) {
    if (max_len < 2) throw std::invalid_argument("tokenizer: max_len must be at least 2");
    words_ = {"<pad>", "<start>", "<end>"};
    for (auto& w : words) {
        if (ids_.count(w)) continue;
        if (words_.size() >= band_begin_) throw std::invalid_argument("tokenizer: vocabulary overflows the hash band");
        ids_[w] = static_cast<int>(words_.size());
        words_.push_back(w);
    }
}

Tokenizer Tokenizer::standard(std::size_t vocab_size, std::size_t max_len) {
    return Tokenizer(lexicon::standard_vocabulary(), vocab_size, max_len);
}

std::vector<std::string> Tokenizer::words_of(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
    };
    for (unsigned char ch : text) {
        if (std::isspace(ch) || ch == '_')
            flush();
        else if (std::isalnum(ch) || ch == '\'' || ch == '-' || ch >= 0x80)
            cur += static_cast<char>(std::tolower(ch));
    }
    flush();
    return out;
}

int Tokenizer::word_id(const std::string& word) const {
    auto it = ids_.find(word);
    if (it != ids_.end()) return it->second;
    return static_cast<int>(band_begin_ + fnv1a(word) % (vocab_size_ - band_begin_));
}

std::vector<int> Tokenizer::word_ids(const std::string& text) const {
    std::vector<int> ids;
    for (auto& w : words_of(text)) ids.push_back(word_id(w));
    return ids;
}

std::vector<int> Tokenizer::tokenize(const std::string& text) const {
    auto w = word_ids(text);
    if (w.size() > max_len_ - 2) w.resize(max_len_ - 2);
    std::vector<int> ids{start_id};
    ids.insert(ids.end(), w.begin(), w.end());
    ids.push_back(end_id);
    return ids;
}

std::vector<std::string> Tokenizer::detokenize(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    for (int id : ids) {
        if (id == start_id || id == end_id || id == pad_id) continue;
        if (id >= 0 && static_cast<std::size_t>(id) < words_.size())
            out.push_back(words_[static_cast<std::size_t>(id)]);
        else
            out.push_back("<unk:" + std::to_string(id) + ">");
    }
    return out;
}

Tensor block_forward(const Tensor& x, const Block& b, std::size_t nseq, std::size_t len, std::size_t heads,
                     const std::vector<double>& slopes, const Tensor* ln) {
    const Tensor& g1 = ln ? ln[0] : b.ln1_g;
    const Tensor& b1 = ln ? ln[1] : b.ln1_b;
    const Tensor& g2 = ln ? ln[2] : b.ln2_g;
    const Tensor& b2 = ln ? ln[3] : b.ln2_b;
    auto h = layer_norm(x, g1, b1);
    auto a = attention(matmul(h, b.wq), matmul(h, b.wk), matmul(h, b.wv), nseq, len, heads, slopes);
    auto y = add(x, matmul(a, b.wo));
    auto m = matmul(gelu(matmul(layer_norm(y, g2, b2), b.w1)), b.w2);
    return add(y, m);
}

TextEncoder::TextEncoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    tok_ = gaussian(rng, {cfg.vocab, cfg.d_tok}, cfg.token_std);
    pos_ = gaussian(rng, {cfg.max_len, cfg.d_tok}, cfg.pos_std);
    for (std::size_t l = 0; l < cfg.layers; ++l) blocks_.push_back(make_block(rng, cfg.d_tok, cfg.text_weight_std));
    lnf_g_ = Tensor::full({cfg.d_tok}, 1.0);
    lnf_b_ = Tensor::zeros({cfg.d_tok});
    proj_ = gaussian(rng, {cfg.d_tok, cfg.d}, cfg.text_weight_std);
    offset_ = Tensor::zeros({cfg.d});
}

void TextEncoder::set_output_offset(const Tensor& offset) {
    if (offset.shape() != Shape{cfg_.d}) throw DimensionError("text offset must be [d]");
    offset_ = offset.detach();
}

Tensor TextEncoder::embed_ids(const std::vector<int>& ids) const {
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    return select_rows(tok_, idx);
}

Tensor TextEncoder::encode(const Tensor& seq) const { return reshape(encode_batch({seq}), {cfg_.d}); }

Tensor TextEncoder::encode_batch(const std::vector<Tensor>& seqs) const {
    if (seqs.empty()) throw InputError("encode_text: no sequences");
    std::map<std::size_t, std::vector<std::size_t>> by_len;
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        const auto& s = seqs[i];
        if (s.cols() != cfg_.d_tok)
            throw DimensionError("encode_text: expected width " + std::to_string(cfg_.d_tok) + ", got " +
                                 shape_str(s.shape()));
        if (s.rows() > cfg_.max_len || s.rows() == 0)
            throw InputError("encode_text: sequence length " + std::to_string(s.rows()) + " outside [1, " +
                             std::to_string(cfg_.max_len) + "]");
        by_len[s.rows()].push_back(i);
    }
    std::vector<Tensor> outs;
    std::vector<std::size_t> order;
    for (auto& [len, members] : by_len) {
        std::vector<Tensor> parts;
        for (auto i : members) parts.push_back(seqs[i]);
        const std::size_t n = members.size();
        auto x = add(concat_rows(parts), select_rows(pos_, tiled(n, len)));
        for (auto& b : blocks_) x = block_forward(x, b, n, len, cfg_.heads, cfg_.text_slopes);
        std::vector<std::size_t> last(n);
        for (std::size_t k = 0; k < n; ++k) last[k] = k * len + len - 1;
        outs.push_back(add_row(matmul(layer_norm(select_rows(x, last), lnf_g_, lnf_b_), proj_), offset_));
        order.insert(order.end(), members.begin(), members.end());
    }
    auto all = outs.size() == 1 ? outs[0] : concat_rows(outs);
    bool identity = true;
    for (std::size_t k = 0; k < order.size(); ++k) identity = identity && order[k] == k;
    if (identity) return all;
    std::vector<std::size_t> inv(order.size());
    for (std::size_t k = 0; k < order.size(); ++k) inv[order[k]] = k;
    return select_rows(all, inv);
}

NamedTensors TextEncoder::named_parameters() const {
    NamedTensors out{{"text.token_embedding", tok_}, {"text.position", pos_}};
    for (std::size_t l = 0; l < blocks_.size(); ++l) push_block(out, "text.block" + std::to_string(l), blocks_[l], true);
    out.emplace_back("text.ln_final.gain", lnf_g_);
    out.emplace_back("text.ln_final.bias", lnf_b_);
    out.emplace_back("text.proj", proj_);
    out.emplace_back("text.offset", offset_);
    return out;
}

VisionEncoder::VisionEncoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.image_h % cfg.patch || cfg.image_w % cfg.patch)
        throw InputError("vision encoder: image size not divisible by patch size");
    Rng rng(seed);
    const std::size_t pdim = cfg.patch * cfg.patch * cfg.channels;
    const std::size_t np = (cfg.image_h / cfg.patch) * (cfg.image_w / cfg.patch);
    patch_proj_ = gaussian(rng, {pdim, cfg.d}, cfg.vision_weight_std);
    cls_ = gaussian(rng, {1, cfg.d}, cfg.cls_std);
    pos_ = gaussian(rng, {np + 1, cfg.d}, cfg.cls_std);
    for (std::size_t l = 0; l < cfg.layers; ++l) blocks_.push_back(make_block(rng, cfg.d, cfg.vision_weight_std));
    proj_ = gaussian(rng, {cfg.d, cfg.d}, cfg.vision_weight_std);
    const std::size_t n_ln = 2 + 2 * cfg.layers;
    for (std::size_t i = 0; i < n_ln; ++i) {
        ln_.push_back(Tensor::full({cfg.d}, 1.0));
        ln_.push_back(Tensor::zeros({cfg.d}));
    }
    // pixel gather order: patch-major, then row, column, channel inside a patch
    const std::size_t P = cfg.patch, W = cfg.image_w, C = cfg.channels;
    for (std::size_t py = 0; py < cfg.image_h / P; ++py)
        for (std::size_t px = 0; px < W / P; ++px)
            for (std::size_t r = 0; r < P; ++r)
                for (std::size_t c = 0; c < P; ++c)
                    for (std::size_t ch = 0; ch < C; ++ch)
                        patch_index_.push_back(((py * P + r) * W + (px * P + c)) * C + ch);
}

std::vector<std::string> VisionEncoder::ln_names() const {
    std::vector<std::string> names{"vision.ln_pre.gain", "vision.ln_pre.bias"};
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const auto pre = "vision.block" + std::to_string(l);
        for (auto s : {".ln1.gain", ".ln1.bias", ".ln2.gain", ".ln2.bias"}) names.push_back(pre + s);
    }
    names.push_back("vision.ln_post.gain");
    names.push_back("vision.ln_post.bias");
    return names;
}

LnParams VisionEncoder::clone_ln(bool trainable) const {
    LnParams out;
    for (auto& t : ln_) out.push_back(t.clone(trainable));
    return out;
}

Tensor VisionEncoder::patches(const Tensor& image) const {
    const Shape want{cfg_.image_h, cfg_.image_w, cfg_.channels};
    if (image.shape() != want) {
        if (image.rank() == 3 && (image.dim(0) % cfg_.patch || image.dim(1) % cfg_.patch))
            throw InputError("encode_image: dims " + shape_str(image.shape()) + " not divisible by patch " +
                             std::to_string(cfg_.patch));
        throw InputError("encode_image: expected " + shape_str(want) + ", got " + shape_str(image.shape()));
    }
    const std::size_t pdim = cfg_.patch * cfg_.patch * cfg_.channels;
    auto flat = reshape(image, {image.numel(), 1});
    return reshape(select_rows(flat, patch_index_), {patch_index_.size() / pdim, pdim});
}

Tensor VisionEncoder::encode(const Tensor& image, const LnParams* ln) const {
    return reshape(encode_batch({image}, ln), {cfg_.d});
}

Tensor VisionEncoder::encode_batch(const std::vector<Tensor>& images, const LnParams* ln) const {
    if (images.empty()) throw InputError("encode_image: no images");
    const LnParams& L = ln ? *ln : ln_;
    if (L.size() != ln_.size()) throw DimensionError("encode_image: wrong number of LN tensors");
    std::vector<Tensor> ps;
    for (auto& im : images) ps.push_back(patches(im));
    const std::size_t n = images.size();
    const std::size_t np = ps[0].rows();
    const std::size_t len = np + 1;
    auto emb = matmul(n == 1 ? ps[0] : concat_rows(ps), patch_proj_);
    std::vector<Tensor> rows;
    for (std::size_t i = 0; i < n; ++i) {
        rows.push_back(cls_);
        rows.push_back(slice_rows(emb, i * np, (i + 1) * np));
    }
    auto x = add(concat_rows(rows), select_rows(pos_, tiled(n, len)));
    x = layer_norm(x, L[0], L[1]);
    for (std::size_t l = 0; l < blocks_.size(); ++l)
        x = block_forward(x, blocks_[l], n, len, cfg_.heads, {}, &L[2 + 4 * l]);
    std::vector<std::size_t> cls_rows(n);
    for (std::size_t i = 0; i < n; ++i) cls_rows[i] = i * len;
    const std::size_t post = L.size() - 2;
    return matmul(layer_norm(select_rows(x, cls_rows), L[post], L[post + 1]), proj_);
}

NamedTensors VisionEncoder::named_parameters() const {
    NamedTensors out{{"vision.patch_proj", patch_proj_}, {"vision.cls", cls_}, {"vision.position", pos_}};
    auto names = ln_names();
    out.emplace_back(names[0], ln_[0]);
    out.emplace_back(names[1], ln_[1]);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto pre = "vision.block" + std::to_string(l);
        for (std::size_t k = 0; k < 4; ++k) out.emplace_back(names[2 + 4 * l + k], ln_[2 + 4 * l + k]);
        push_block(out, pre, blocks_[l], false);
    }
    out.emplace_back(names[ln_.size() - 2], ln_[ln_.size() - 2]);
    out.emplace_back(names[ln_.size() - 1], ln_[ln_.size() - 1]);
    out.emplace_back("vision.proj", proj_);
    return out;
}

DualEncoder::DualEncoder(const EncoderConfig& cfg)
    : cfg_(cfg),
      tok_(Tokenizer::standard(cfg.vocab, cfg.max_len)),
      text_(cfg, cfg.seed * 2 + 1),
      vision_(cfg, cfg.seed * 2 + 2) {
    if (!(cfg.tau > 0.0)) throw std::invalid_argument("encoder: tau must be positive");
    if (cfg.text_centering == 0.0) return;
    std::vector<Tensor> seqs;
    const auto names = lexicon::name_pool();
    for (const auto& t : lexicon::default_templates())
        for (std::size_t k = 0; k < names.size(); k += 4) {
            auto text = t;
            text.replace(text.find("{}"), 2, names[k]);
            seqs.push_back(embed_text(text));
        }
    auto feats = text_.encode_batch(seqs);
    std::vector<double> mean(cfg.d, 0.0);
    for (std::size_t i = 0; i < feats.numel(); ++i) mean[i % cfg.d] -= cfg.text_centering * feats[i] / static_cast<double>(feats.rows());
    text_.set_output_offset(Tensor::from({cfg.d}, std::move(mean)));
}

Tensor DualEncoder::embed_class_name(const std::string& name) const {
    auto ids = tok_.word_ids(name);
    if (ids.empty()) throw InputError("embed_class_name: empty class name");
    return text_.embed_ids(ids);
}

Tensor DualEncoder::embed_text(const std::string& text) const { return text_.embed_ids(tok_.tokenize(text)); }

Tensor DualEncoder::start_embedding() const { return text_.embed_ids({Tokenizer::start_id}); }
Tensor DualEncoder::end_embedding() const { return text_.embed_ids({Tokenizer::end_id}); }

NamedTensors DualEncoder::named_parameters() const {
    auto out = text_.named_parameters();
    auto v = vision_.named_parameters();
    out.insert(out.end(), v.begin(), v.end());
    return out;
}

std::string snapshot_bytes(const NamedTensors& tensors) {
    std::ostringstream os;
    os << "lasp-snapshot 1\n";
    for (auto& [name, t] : tensors) {
        os << name;
        for (auto d : t.shape()) os << ' ' << d;
        os << '\n';
    }
    os << "end\n";
    for (auto& [name, t] : tensors)
        os.write(reinterpret_cast<const char*>(t.values().data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(double)));
    return os.str();
}

void save_snapshot(const std::string& path, const NamedTensors& tensors) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    auto bytes = snapshot_bytes(tensors);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

NamedTensors load_snapshot(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    return read_snapshot(f, path);
}

NamedTensors read_snapshot(std::istream& f, const std::string& origin) {
    std::string line;
    std::getline(f, line);
    if (line != "lasp-snapshot 1") throw std::runtime_error(origin + ": not a snapshot");
    std::vector<std::pair<std::string, Shape>> heads;
    while (std::getline(f, line) && line != "end") {
        std::istringstream is(line);
        std::string name;
        is >> name;
        Shape s;
        std::size_t d;
        while (is >> d) s.push_back(d);
        heads.emplace_back(name, s);
    }
    NamedTensors out;
    for (auto& [name, s] : heads) {
        std::vector<double> data(numel_of(s));
        f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!f) throw std::runtime_error(origin + ": truncated tensor " + name);
        out.emplace_back(name, Tensor::from(s, std::move(data)));
    }
    return out;
}

}  // namespace lasp
