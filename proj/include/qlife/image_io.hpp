#pragma once

#include <string>
#include <vector>

#include "qlife/tensor.hpp"

namespace qlife {

// Writes a [1, h, w] tensor with values in [0, 1] as an 8-bit grayscale PNG.
void write_png_gray(const std::string& path, const Tensor& image);

// Reads an 8-bit PNG (grayscale, gray+alpha, RGB or RGBA; no interlace) into
// a [1, h, w] tensor in [0, 1]. Color images are averaged to one channel;
// alpha is dropped. Throws DataError with the offending path on failure.
Tensor read_png_gray(const std::string& path);

// Feature tables: CSV with header f0,...,f{d-1}[,class][,domain].
struct FeatureTable {
    Tensor features;                     // [n, d]
    std::vector<std::string> class_labels;   // empty when the column is absent
    std::vector<std::string> domain_labels;  // empty when the column is absent
};

FeatureTable read_feature_csv(const std::string& path);
void write_feature_csv(const std::string& path, const Tensor& features,
                       const std::vector<std::string>& class_labels = {},
                       const std::vector<std::string>& domain_labels = {});

}  // namespace qlife
