#pragma once

#include <filesystem>

#include "atx/tensor.hpp"

namespace atx::data {

enum class DomainId { X, Y };

// Immutable after indexing; file order is lexicographic.
struct DomainDataset {
    std::filesystem::path root;
    std::vector<std::string> files;  // filenames relative to root
    DomainId domain = DomainId::X;
    int image_size = 256;

    static DomainDataset open(const std::filesystem::path& root, DomainId domain, int image_size);
};

// decode -> bilinear resize -> [-1,1], NCHW. Uniform with replacement.
// Unreadable files are skipped with a warning; an emptied index is an error.
Tensor load_batch(const DomainDataset& ds, int64_t n, Rng& rng);

// Single image helpers (8-bit RGB file <-> model space tensor (1,3,H,W)).
Tensor load_image(const std::filesystem::path& file, int image_size);
void save_image(const Tensor& img, const std::filesystem::path& file);

struct ToySpec {
    int canvas = 64;
    int count = 200;
    double min_coverage = 0.10;
    double max_coverage = 0.30;
    uint64_t seed = 0;
    bool stripes_in_y = true;  // disable to make the two domains identical in law
};

struct ToyOutput {
    DomainDataset x;
    DomainDataset y;
    std::filesystem::path mask_dir;  // binary masks paired with domain X images
};

// Writes count images per domain plus ground-truth foreground masks for X.
// Domains share the background distribution and differ only in fg texture.
ToyOutput gen_toy(const ToySpec& spec, const std::filesystem::path& out_dir,
                  bool overwrite = false);

}  // namespace atx::data
