#pragma once

#include <map>
#include <string>
#include <vector>

#include "lasp/trainer.hpp"

namespace lasp {

// Text manifest, one directive per line:
//   root <dir>            image directory, relative to the manifest
//   format tensor|ppm
//   class <name> base|new
//   train <name> <file>
//   test <name> <file>
struct DatasetManifest {
    std::string path;
    std::string root;
    std::string format = "tensor";
    std::vector<std::string> classes;
    std::vector<bool> is_base;
    std::map<std::string, std::vector<std::string>> train_files, test_files;
};

struct LoadedDataset {
    std::vector<std::string> base_names, new_names;
    FewShotDataset base_train, base_test, new_test;
};

DatasetManifest read_manifest(const std::string& path);
LoadedDataset load_dataset(const DatasetManifest& m);

// headered raw tensor: "lasp-tensor h w c\n" followed by doubles
void write_tensor_image(const std::string& path, const Tensor& image);
Tensor read_tensor_image(const std::string& path);
// binary or ascii portable pixmap / graymap, scaled to [0,1]
Tensor read_pnm(const std::string& path);

}  // namespace lasp
