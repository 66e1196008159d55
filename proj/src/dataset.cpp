#include "lasp/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace lasp {

namespace fs = std::filesystem;

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read manifest " + path);
    DatasetManifest m;
    m.path = path;
    m.root = fs::path(path).parent_path().string();
    std::set<std::string> names;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        std::string key;
        is >> key;
        auto where = path + ":" + std::to_string(lineno);
        if (key == "root") {
            std::string r;
            is >> r;
            m.root = (fs::path(path).parent_path() / r).string();
        } else if (key == "format") {
            is >> m.format;
            if (m.format != "tensor" && m.format != "ppm") throw DataError(where + ": unknown image format " + m.format);
        } else if (key == "class") {
            std::string name, part;
            is >> name >> part;
            if (part != "base" && part != "new") throw DataError(where + ": class split must be base or new");
            if (!names.insert(name).second) throw DataError(where + ": class " + name + " listed twice");
            m.classes.push_back(name);
            m.is_base.push_back(part == "base");
        } else if (key == "train" || key == "test") {
            std::string name, file;
            is >> name >> file;
            if (!names.count(name)) throw DataError(where + ": unknown class " + name);
            (key == "train" ? m.train_files : m.test_files)[name].push_back(file);
        } else {
            throw DataError(where + ": unknown directive " + key);
        }
    }
    if (m.classes.empty()) throw DataError(path + ": empty class list");
    return m;
}

LoadedDataset load_dataset(const DatasetManifest& m) {
    if (m.classes.empty()) throw DataError("manifest has an empty class list");
    LoadedDataset d;
    std::map<std::string, std::size_t> label;
    for (std::size_t i = 0; i < m.classes.size(); ++i) {
        auto& names = m.is_base[i] ? d.base_names : d.new_names;
        label[m.classes[i]] = names.size();
        names.push_back(m.classes[i]);
    }
    if (d.base_names.empty() || d.new_names.empty()) throw DataError("manifest needs both base and new classes");
    for (auto& [name, files] : m.train_files) {
        std::size_t i = 0;
        while (m.classes[i] != name) ++i;
        if (!m.is_base[i]) throw DataError("new class " + name + " has training images; splits overlap");
    }
    auto read = [&](const std::string& file) {
        auto p = (fs::path(m.root) / file).string();
        if (!fs::exists(p)) throw DataError("missing image file " + p);
        return m.format == "ppm" ? read_pnm(p) : read_tensor_image(p);
    };
    d.base_train.split = "base-train";
    d.base_test.split = "base-test";
    d.new_test.split = "new-test";
    for (std::size_t i = 0; i < m.classes.size(); ++i) {
        const auto& name = m.classes[i];
        auto tr = m.train_files.find(name);
        if (tr != m.train_files.end())
            for (auto& f : tr->second) d.base_train.examples.push_back({read(f), label[name]});
        auto te = m.test_files.find(name);
        if (te != m.test_files.end())
            for (auto& f : te->second)
                (m.is_base[i] ? d.base_test : d.new_test).examples.push_back({read(f), label[name]});
    }
    return d;
}

void write_tensor_image(const std::string& path, const Tensor& image) {
    if (image.rank() != 3) throw DimensionError("image tensors must be [h, w, c]");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << "lasp-tensor " << image.dim(0) << ' ' << image.dim(1) << ' ' << image.dim(2) << '\n';
    f.write(reinterpret_cast<const char*>(image.values().data()),
            static_cast<std::streamsize>(image.numel() * sizeof(double)));
}

Tensor read_tensor_image(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path);
    std::string magic;
    std::size_t h = 0, w = 0, c = 0;
    f >> magic >> h >> w >> c;
    if (magic != "lasp-tensor" || !h || !w || !c) throw DataError(path + ": malformed tensor image header");
    f.get();
    std::vector<double> data(h * w * c);
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!f) throw DataError(path + ": truncated tensor image");
    return Tensor::from({h, w, c}, std::move(data));
}

Tensor read_pnm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path);
    std::string magic;
    f >> magic;
    std::size_t channels = 0;
    bool ascii = false;
    if (magic == "P6") channels = 3;
    else if (magic == "P5") channels = 1;
    else if (magic == "P3") channels = 3, ascii = true;
    else if (magic == "P2") channels = 1, ascii = true;
    else throw DataError(path + ": not a PNM image");
    auto next = [&]() -> long {
        f >> std::ws;
        while (f.peek() == '#') {
            std::string skip;
            std::getline(f, skip);
            f >> std::ws;
        }
        long v = -1;
        f >> v;
        return v;
    };
    const long w = next(), h = next(), maxv = next();
    if (w <= 0 || h <= 0 || maxv <= 0 || maxv > 65535) throw DataError(path + ": malformed PNM header");
    const std::size_t n = static_cast<std::size_t>(w * h) * channels;
    std::vector<double> data(n);
    if (ascii) {
        for (auto& v : data) {
            long x = next();
            if (x < 0) throw DataError(path + ": truncated PNM data");
            v = static_cast<double>(x) / static_cast<double>(maxv);
        }
    } else {
        f.get();
        const std::size_t bytes = maxv > 255 ? 2 : 1;
        std::vector<unsigned char> raw(n * bytes);
        f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (!f) throw DataError(path + ": truncated PNM data");
        for (std::size_t i = 0; i < n; ++i) {
            const double x = bytes == 2 ? raw[2 * i] * 256.0 + raw[2 * i + 1] : raw[i];
            data[i] = x / static_cast<double>(maxv);
        }
    }
    return Tensor::from({static_cast<std::size_t>(h), static_cast<std::size_t>(w), channels}, std::move(data));
}

}  // namespace lasp
