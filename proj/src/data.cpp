#include "atx/data.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <iostream>

namespace atx::data {

namespace fs = std::filesystem;

namespace {

bool is_image_file(const fs::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), ::tolower);
    return e == ".png" || e == ".jpg" || e == ".jpeg";
}

Tensor mat_to_model(const cv::Mat& rgb) {
    // rgb: CV_8UC3, row-major HWC -> (1,3,H,W) in [-1,1]
    Tensor t({1, 3, rgb.rows, rgb.cols});
    for (int h = 0; h < rgb.rows; ++h) {
        const cv::Vec3b* row = rgb.ptr<cv::Vec3b>(h);
        for (int w = 0; w < rgb.cols; ++w)
            for (int c = 0; c < 3; ++c) t.at4(0, c, h, w) = double(row[w][c]) / 127.5 - 1.0;
    }
    return t;
}

}  // namespace

DomainDataset DomainDataset::open(const fs::path& root, DomainId domain, int image_size) {
    if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
    DomainDataset ds;
    ds.root = root;
    ds.domain = domain;
    ds.image_size = image_size;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_regular_file() && is_image_file(entry.path()))
            ds.files.push_back(entry.path().filename().string());
    std::sort(ds.files.begin(), ds.files.end());
    if (ds.files.empty()) throw DataError("no images found under " + root.string());
    return ds;
}

Tensor load_image(const fs::path& file, int image_size) {
    cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw DataError("cannot decode image: " + file.string());
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    if (rgb.rows != image_size || rgb.cols != image_size)
        cv::resize(rgb, rgb, cv::Size(image_size, image_size), 0, 0, cv::INTER_LINEAR);
    return mat_to_model(rgb);
}

void save_image(const Tensor& img, const fs::path& file) {
    if (img.ndim() != 4 || img.shape(0) != 1 || (img.shape(1) != 3 && img.shape(1) != 1))
        throw InputError("save_image expects (1,3,H,W) or (1,1,H,W)");
    int H = int(img.shape(2)), W = int(img.shape(3));
    bool gray = img.shape(1) == 1;
    cv::Mat out(H, W, gray ? CV_8UC1 : CV_8UC3);
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            if (gray) {
                double v = std::clamp(img.at4(0, 0, h, w), 0.0, 1.0);  // attention maps are [0,1]
                out.at<uchar>(h, w) = uchar(std::lround(v * 255.0));
            } else {
                cv::Vec3b px;
                for (int c = 0; c < 3; ++c) {
                    double v = std::clamp(img.at4(0, c, h, w), -1.0, 1.0);
                    px[2 - c] = uchar(std::lround((v + 1.0) * 127.5));  // RGB -> BGR
                }
                out.at<cv::Vec3b>(h, w) = px;
            }
        }
    if (!cv::imwrite(file.string(), out)) throw DataError("cannot write image: " + file.string());
}

Tensor load_batch(const DomainDataset& ds, int64_t n, Rng& rng) {
    if (n < 1) throw InputError("load_batch: n must be >= 1");
    std::vector<std::string> index = ds.files;
    Tensor batch({n, 3, ds.image_size, ds.image_size});
    for (int64_t i = 0; i < n; ++i) {
        Tensor img;
        for (;;) {
            if (index.empty()) throw DataError("load_batch: no decodable images remain");
            std::uniform_int_distribution<size_t> pick(0, index.size() - 1);
            size_t j = pick(rng);
            try {
                img = load_image(ds.root / index[j], ds.image_size);
                break;
            } catch (const DataError& e) {
                std::cerr << "warning: skipping " << index[j] << ": " << e.what() << "\n";
                index.erase(index.begin() + long(j));
            }
        }
        std::copy(img.data(), img.data() + img.numel(),
                  batch.data() + i * 3 * ds.image_size * ds.image_size);
    }
    return batch;
}

// ---- toy benchmark ----

namespace {

// Smooth background: bilinearly upscaled 4x4 noise plus fine grain.
cv::Mat toy_background(int canvas, Rng& rng) {
    std::uniform_real_distribution<double> coarse(0.25, 0.75);
    cv::Mat low(4, 4, CV_64F);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) low.at<double>(i, j) = coarse(rng);
    cv::Mat bg;
    cv::resize(low, bg, cv::Size(canvas, canvas), 0, 0, cv::INTER_LINEAR);
    std::normal_distribution<double> grain(0.0, 0.02);
    for (int i = 0; i < canvas; ++i)
        for (int j = 0; j < canvas; ++j)
            bg.at<double>(i, j) = std::clamp(bg.at<double>(i, j) + grain(rng), 0.0, 1.0);
    return bg;
}

// Random ellipse whose area lands in [min_coverage, max_coverage] of the canvas.
cv::Mat toy_mask(const ToySpec& spec, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    int c = spec.canvas;
    for (int attempt = 0; attempt < 100; ++attempt) {
        double cov = spec.min_coverage + unif(rng) * (spec.max_coverage - spec.min_coverage);
        double area = cov * c * c;
        double ratio = 0.6 + 0.8 * unif(rng);  // axis ratio
        double b = std::sqrt(area / (M_PI * ratio));
        double a = ratio * b;
        double cx = c * (0.3 + 0.4 * unif(rng));
        double cy = c * (0.3 + 0.4 * unif(rng));
        double angle = 180.0 * unif(rng);
        cv::Mat m = cv::Mat::zeros(c, c, CV_8U);
        cv::ellipse(m, cv::Point2d(cx, cy), cv::Size2d(a, b), angle, 0, 360, cv::Scalar(255),
                    cv::FILLED);
        double frac = double(cv::countNonZero(m)) / double(c * c);
        if (frac >= spec.min_coverage && frac <= spec.max_coverage) return m;
    }
    throw NumericError("toy_mask: failed to sample a mask in the coverage range");
}

cv::Mat compose_toy_image(const cv::Mat& bg, const cv::Mat& mask, bool striped, Rng& rng) {
    int c = bg.rows;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double phase = unif(rng) * 8.0;
    cv::Mat img(c, c, CV_8UC3);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) {
            double v;
            if (mask.at<uchar>(i, j)) {
                if (striped) {
                    // diagonal stripes, period 8 px
                    double t = std::fmod(double(i + j) + phase, 8.0);
                    v = t < 4.0 ? 0.15 : 0.85;
                } else {
                    v = 0.5;  // solid gray fill
                }
            } else {
                v = bg.at<double>(i, j);
            }
            uchar u = uchar(std::lround(v * 255.0));
            img.at<cv::Vec3b>(i, j) = cv::Vec3b(u, u, u);
        }
    return img;
}

std::string numbered(const char* stem, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%05d.png", stem, i);
    return buf;
}

}  // namespace

ToyOutput gen_toy(const ToySpec& spec, const fs::path& out_dir, bool overwrite) {
    if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !overwrite)
        throw DataError("output dir exists and is not empty (use overwrite): " + out_dir.string());
    fs::path xdir = out_dir / "trainX", ydir = out_dir / "trainY", mdir = out_dir / "masksX";
    fs::create_directories(xdir);
    fs::create_directories(ydir);
    fs::create_directories(mdir);

    Rng rng(spec.seed);
    for (int i = 0; i < spec.count; ++i) {
        cv::Mat bg = toy_background(spec.canvas, rng);
        cv::Mat mask = toy_mask(spec, rng);
        cv::Mat img = compose_toy_image(bg, mask, /*striped=*/false, rng);
        cv::imwrite((xdir / numbered("x", i)).string(), img);
        cv::imwrite((mdir / numbered("x", i)).string(), mask);
    }
    for (int i = 0; i < spec.count; ++i) {
        cv::Mat bg = toy_background(spec.canvas, rng);
        cv::Mat mask = toy_mask(spec, rng);
        cv::Mat img = compose_toy_image(bg, mask, spec.stripes_in_y, rng);
        cv::imwrite((ydir / numbered("y", i)).string(), img);
    }

    ToyOutput out;
    out.x = DomainDataset::open(xdir, DomainId::X, spec.canvas);
    out.y = DomainDataset::open(ydir, DomainId::Y, spec.canvas);
    out.mask_dir = mdir;
    return out;
}

}  // namespace atx::data
