#include "atx/eval.hpp"

#include "atx/schedule.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace atx::eval {

std::string MetricReport::to_json() const {
    std::ostringstream os;
    os << "{\"metric\":\"" << metric << "\",\"value\":" << value
       << ",\"sample_count\":" << sample_count << ",\"config_hash\":\"" << config_hash
       << "\",\"timestamp\":\"" << timestamp << "\"}";
    return os.str();
}

MetricReport make_report(const std::string& metric, double value, int64_t sample_count,
                         const std::string& config_hash) {
    if (!std::isfinite(value)) throw NumericError("metric '" + metric + "' is non-finite");
    if (sample_count <= 0) throw InputError("metric '" + metric + "' has no samples");
    MetricReport r;
    r.metric = metric;
    r.value = value;
    r.sample_count = sample_count;
    r.config_hash = config_hash;
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof buf, "%FT%TZ", std::gmtime(&t));
    r.timestamp = buf;
    return r;
}

Image8 load_image8(const std::filesystem::path& file) {
    cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw DataError("cannot decode image: " + file.string());
    Image8 im;
    im.h = bgr.rows;
    im.w = bgr.cols;
    im.rgb.resize(size_t(im.h * im.w * 3));
    for (int y = 0; y < im.h; ++y) {
        const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < im.w; ++x)
            for (int c = 0; c < 3; ++c) im.rgb[size_t((y * im.w + x) * 3 + c)] = row[x][2 - c];
    }
    return im;
}

double map_accuracy(const std::vector<Image8>& pred, const std::vector<Image8>& gt,
                    RgbDiffMode mode, int threshold) {
    if (pred.size() != gt.size() || pred.empty())
        throw InputError("map_accuracy: paired image sets required");
    int64_t correct = 0, total = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const Image8& p = pred[i];
        const Image8& g = gt[i];
        if (p.h != g.h || p.w != g.w) throw InputError("map_accuracy: size mismatch");
        for (int y = 0; y < p.h; ++y)
            for (int x = 0; x < p.w; ++x) {
                int diff = 0;
                for (int c = 0; c < 3; ++c) {
                    int d = std::abs(int(p.at(y, x, c)) - int(g.at(y, x, c)));
                    diff = mode == RgbDiffMode::L1Sum ? diff + d : std::max(diff, d);
                }
                if (diff <= threshold) correct++;
                total++;
            }
    }
    return double(correct) / double(total);
}

GaussianStats gaussian_stats(const std::vector<std::vector<double>>& features) {
    if (features.size() < 2) throw InputError("gaussian_stats: need at least 2 samples");
    int64_t n = int64_t(features.size());
    int64_t d = int64_t(features[0].size());
    GaussianStats s;
    s.count = n;
    s.mu.assign(size_t(d), 0.0);
    for (const auto& f : features) {
        if (int64_t(f.size()) != d) throw InputError("gaussian_stats: inconsistent feature dims");
        for (int64_t j = 0; j < d; ++j) s.mu[size_t(j)] += f[size_t(j)];
    }
    for (auto& m : s.mu) m /= double(n);
    s.sigma.assign(size_t(d * d), 0.0);
    for (const auto& f : features)
        for (int64_t i = 0; i < d; ++i)
            for (int64_t j = i; j < d; ++j)
                s.sigma[size_t(i * d + j)] +=
                    (f[size_t(i)] - s.mu[size_t(i)]) * (f[size_t(j)] - s.mu[size_t(j)]);
    for (int64_t i = 0; i < d; ++i)
        for (int64_t j = i; j < d; ++j) {
            double v = s.sigma[size_t(i * d + j)] / double(n - 1);
            s.sigma[size_t(i * d + j)] = v;
            s.sigma[size_t(j * d + i)] = v;
        }
    return s;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const GaussianStats& a, const GaussianStats& b) {
    if (a.dim() != b.dim()) throw InputError("fid: dimension mismatch");
    int64_t d = a.dim();
    for (double v : a.mu)
        if (!std::isfinite(v)) throw NumericError("fid: non-finite stats");
    for (double v : b.mu)
        if (!std::isfinite(v)) throw NumericError("fid: non-finite stats");
    Eigen::Map<const Eigen::VectorXd> mua(a.mu.data(), d), mub(b.mu.data(), d);
    Eigen::Map<const Eigen::MatrixXd> sa(a.sigma.data(), d, d), sb(b.sigma.data(), d, d);
    Eigen::MatrixXd sqa = psd_sqrt(sa);
    // Tr((Sa Sb)^{1/2}) = Tr((sqrt(Sa) Sb sqrt(Sa))^{1/2}), computed on a symmetric matrix.
    Eigen::MatrixXd inner = sqa * sb * sqa;
    inner = 0.5 * (inner + inner.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
    double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    double result = (mua - mub).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
    if (!std::isfinite(result)) throw NumericError("fid: non-finite result");
    return result;
}

std::vector<double> fid_embedding(nn::ParamStore& vgg, const Tensor& img,
                                  const nn::ModelConfig& cfg) {
    auto taps = nn::feature_extract(vgg, ad::constant(img), cfg, {"relu3_3"});
    const Tensor& f = taps[0].second->val;
    int64_t C = f.shape(1), HW = f.shape(2) * f.shape(3);
    std::vector<double> out(size_t(C), 0.0);
    for (int64_t c = 0; c < C; ++c) {
        double s = 0;
        for (int64_t i = 0; i < HW; ++i) s += f[c * HW + i];
        out[size_t(c)] = s / double(HW);
    }
    return out;
}

double attention_iou(const Tensor& attn, const Tensor& mask, double thresh) {
    if (attn.numel() != mask.numel()) throw InputError("attention_iou: shape mismatch");
    int64_t inter = 0, uni = 0;
    for (int64_t i = 0; i < attn.numel(); ++i) {
        bool a = attn[i] >= thresh;
        bool m = mask[i] > 0.5;
        inter += (a && m);
        uni += (a || m);
    }
    if (uni == 0) return 1.0;
    return double(inter) / double(uni);
}

double adapt_classify(const std::function<Tensor(const Tensor&)>& translator,
                      const LabeledSet& labeled_source, const LabeledSet& target_test,
                      int n_classes, int epochs, int batch, uint64_t seed) {
    if (labeled_source.images.size() != labeled_source.labels.size())
        throw InputError("adapt_classify: source label/image count mismatch");
    if (target_test.images.size() != target_test.labels.size())
        throw InputError("adapt_classify: test label/image count mismatch");
    if (labeled_source.images.empty() || target_test.images.empty())
        throw InputError("adapt_classify: empty set");

    int S = int(labeled_source.images[0].shape(2));
    // Translate all source images; labels carry over unchanged.
    std::vector<Tensor> translated;
    translated.reserve(labeled_source.images.size());
    for (const auto& img : labeled_source.images) translated.push_back(translator(img));

    Rng rng(seed);
    nn::ParamStore cls(nn::NetworkId::CLASSIFIER);
    nn::init_classifier(cls, S, n_classes, rng);
    train::Adam opt(0.9, 0.999, 1e-8);

    int64_t n = int64_t(translated.size());
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int ep = 0; ep < epochs; ++ep) {
        std::shuffle(order.begin(), order.end(), rng);
        for (int64_t start = 0; start < n; start += batch) {
            int64_t bs = std::min<int64_t>(batch, n - start);
            Tensor xb({bs, 3, S, S});
            std::vector<int> yb(static_cast<size_t>(bs));
            for (int64_t i = 0; i < bs; ++i) {
                const Tensor& im = translated[size_t(order[size_t(start + i)])];
                std::copy(im.data(), im.data() + im.numel(), xb.data() + i * 3 * S * S);
                yb[size_t(i)] = labeled_source.labels[size_t(order[size_t(start + i)])];
            }
            cls.zero_grad();
            ad::Var loss = ad::softmax_xent(nn::classifier_forward(cls, ad::leaf(std::move(xb)), true), yb);
            ad::backward(loss);
            opt.step(cls, 1e-3);
        }
    }

    int64_t correct = 0;
    for (size_t i = 0; i < target_test.images.size(); ++i) {
        ad::Var logits = nn::classifier_forward(cls, ad::constant(target_test.images[i]), false);
        const Tensor& lv = logits->val;
        int best = 0;
        for (int k = 1; k < n_classes; ++k)
            if (lv[k] > lv[best]) best = k;
        correct += (best == target_test.labels[i]);
    }
    return double(correct) / double(target_test.images.size());
}

void export_grid(const std::vector<Tensor>& inputs, const std::vector<Tensor>& g0_outs,
                 const std::vector<Tensor>& attns, const std::vector<Tensor>& finals,
                 const std::filesystem::path& path) {
    size_t n = inputs.size();
    if (g0_outs.size() != n || attns.size() != n || finals.size() != n || n == 0)
        throw InputError("export_grid: column lists must be equal-length and non-empty");
    int S = int(inputs[0].shape(2));
    const int pad = 2;
    int cell = S + pad;
    cv::Mat grid(int(n) * cell + pad, 4 * cell + pad, CV_8UC3, cv::Scalar(255, 255, 255));

    auto blit = [&](const Tensor& t, int row, int col, bool is_attn) {
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                cv::Vec3b px;
                if (is_attn) {
                    double v = std::clamp(t.at4(0, 0, y, x), 0.0, 1.0);
                    uchar u = uchar(std::lround(v * 255.0));
                    px = cv::Vec3b(u, u, u);
                } else {
                    for (int c = 0; c < 3; ++c) {
                        double v = std::clamp(t.at4(0, c, y, x), -1.0, 1.0);
                        px[2 - c] = uchar(std::lround((v + 1.0) * 127.5));
                    }
                }
                grid.at<cv::Vec3b>(pad + row * cell + y, pad + col * cell + x) = px;
            }
    };
    for (size_t i = 0; i < n; ++i) {
        blit(inputs[i], int(i), 0, false);
        blit(g0_outs[i], int(i), 1, false);
        blit(attns[i], int(i), 2, true);
        blit(finals[i], int(i), 3, false);
    }
    std::vector<int> png_params = {cv::IMWRITE_PNG_COMPRESSION, 3};
    if (!cv::imwrite(path.string(), grid, png_params))
        throw DataError("cannot write grid: " + path.string());
}

}  // namespace atx::eval
