#include "ergan/metrics.hpp"

#include <nlohmann/json.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <random>

namespace ergan::metrics {

LinearProjectionBackend::LinearProjectionBackend(int dim) : dim_(dim) {
  check(dim >= 1, "feature dim must be >= 1");
  const int in_dim = 16 * 16 * 3;
  projection_.resize(dim_, in_dim);
  std::mt19937_64 rng(0x5EEDFACEull);
  const double inv = 1.0 / std::sqrt(static_cast<double>(in_dim));
  for (int i = 0; i < dim_; ++i)
    for (int j = 0; j < in_dim; ++j) {
      // Box-Muller on fixed 53-bit uniforms keeps the matrix stable across
      // standard libraries.
      double u1 = (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
      double u2 = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
      projection_(i, j) = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2) * inv;
    }
}

Eigen::VectorXd LinearProjectionBackend::extract(const FloatFace& image) const {
  const int grid = 16;
  int h = image.height(), w = image.width();
  Eigen::VectorXd pooled(grid * grid * 3);
  for (int gy = 0; gy < grid; ++gy) {
    int y0 = gy * h / grid, y1 = (gy + 1) * h / grid;
    for (int gx = 0; gx < grid; ++gx) {
      int x0 = gx * w / grid, x1 = (gx + 1) * w / grid;
      double acc[3] = {0, 0, 0};
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          for (int c = 0; c < 3; ++c)
            acc[c] += image.pixels[(static_cast<int64_t>(y) * w + x) * 3 + c];
      double inv = 1.0 / (static_cast<double>(y1 - y0) * (x1 - x0));
      for (int c = 0; c < 3; ++c) pooled[(gy * grid + gx) * 3 + c] = acc[c] * inv;
    }
  }
  return projection_ * pooled;
}

namespace {

// 3x3 box blur with zero padding, HWC float tensor.
Tensor<float> box_blur(const Tensor<float>& in) {
  int h = in.dim(0), w = in.dim(1);
  Tensor<float> out({h, w, 3});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = 0.0f;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < h && xx >= 0 && xx < w)
              acc += in[(static_cast<int64_t>(yy) * w + xx) * 3 + c];
          }
        out[(static_cast<int64_t>(y) * w + x) * 3 + c] = acc / 9.0f;
      }
  return out;
}

Tensor<float> half_scale(const Tensor<float>& in) {
  int h = in.dim(0) / 2, w = in.dim(1) / 2;
  check(h >= 1 && w >= 1, "perceptual backend: image too small to downscale");
  Tensor<float> out({h, w, 3});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float acc = in[(static_cast<int64_t>(2 * y) * in.dim(1) + 2 * x) * 3 + c] +
                    in[(static_cast<int64_t>(2 * y) * in.dim(1) + 2 * x + 1) * 3 + c] +
                    in[(static_cast<int64_t>(2 * y + 1) * in.dim(1) + 2 * x) * 3 + c] +
                    in[(static_cast<int64_t>(2 * y + 1) * in.dim(1) + 2 * x + 1) * 3 + c];
        out[(static_cast<int64_t>(y) * w + x) * 3 + c] = acc * 0.25f;
      }
  return out;
}

}  // namespace

BlurL1Backend::BlurL1Backend(int scales) : scales_(scales) {
  check(scales >= 1, "perceptual backend needs at least one scale");
}

double BlurL1Backend::distance(const Tensor<float>& a, const Tensor<float>& b) const {
  check(a.same_shape(b), "perceptual distance: shape mismatch");
  check(a.ndim() == 3 && a.dim(2) == 3, "perceptual distance: expected HxWx3");
  Tensor<float> ca = a, cb = b;
  double total = 0.0;
  for (int s = 0; s < scales_; ++s) {
    if (s > 0) {
      ca = half_scale(ca);
      cb = half_scale(cb);
    }
    Tensor<float> ba = box_blur(ca), bb = box_blur(cb);
    double acc = 0.0;
    for (int64_t i = 0; i < ba.numel(); ++i) acc += std::abs(static_cast<double>(ba[i]) - bb[i]);
    total += acc;
  }
  return total / scales_;
}

std::unique_ptr<FeatureBackend> make_feature_backend(const std::string& name) {
  if (name == "test-linear") return std::make_unique<LinearProjectionBackend>();
  throw ConfigError("unknown feature backend: " + name +
                    " (available: test-linear; production backends plug in by name)");
}

std::unique_ptr<PerceptualBackend> make_perceptual_backend(const std::string& name) {
  if (name == "blur-mad") return std::make_unique<BlurL1Backend>();
  throw ConfigError("unknown perceptual backend: " + name + " (available: blur-mad)");
}

FeatureStats feature_stats(const FeatureBackend& backend, const std::vector<FloatFace>& images) {
  check(images.size() >= 2, "feature stats need at least 2 images");
  const int d = backend.dim();
  Eigen::MatrixXd feats(static_cast<int>(images.size()), d);
  for (size_t i = 0; i < images.size(); ++i) feats.row(static_cast<int>(i)) = backend.extract(images[i]);
  FeatureStats s;
  s.n = static_cast<int>(images.size());
  s.mean = feats.colwise().mean();
  Eigen::MatrixXd centered = feats.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(s.n - 1);
  s.cov = 0.5 * (s.cov + s.cov.transpose().eval());
  return s;
}

namespace {

// Symmetric PSD square root via eigendecomposition, clamping tiny negative
// eigenvalues.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, bool* ok) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  *ok = es.info() == Eigen::Success;
  if (!*ok) return Eigen::MatrixXd();
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureStats& s1, const FeatureStats& s2) {
  check(s1.dim() == s2.dim() && s1.dim() >= 1, "frechet distance: dimension mismatch");
  double mean_term = (s1.mean - s2.mean).squaredNorm();
  // Tr((S1 S2)^(1/2)) = Tr((A S2 A)^(1/2)) with A = S1^(1/2); the inner
  // matrix is symmetric PSD, so a self-adjoint solver suffices.
  const int d = s1.dim();
  double trace_sqrt = 0.0;
  bool done = false;
  for (int attempt = 0; attempt < 4 && !done; ++attempt) {
    double jitter = attempt == 0 ? 0.0 : std::pow(10.0, attempt - 10);  // 1e-9, 1e-8, 1e-7
    Eigen::MatrixXd c1 = s1.cov + jitter * Eigen::MatrixXd::Identity(d, d);
    Eigen::MatrixXd c2 = s2.cov + jitter * Eigen::MatrixXd::Identity(d, d);
    bool ok = false;
    Eigen::MatrixXd a = psd_sqrt(c1, &ok);
    if (!ok) continue;
    Eigen::MatrixXd inner = a * c2 * a;
    inner = 0.5 * (inner + inner.transpose().eval());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
    if (es.info() != Eigen::Success) continue;
    trace_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    done = true;
  }
  if (!done) throw NumericError("frechet distance: matrix square root failed after jitter");
  double value = mean_term + s1.cov.trace() + s2.cov.trace() - 2.0 * trace_sqrt;
  if (value < 0.0) {
    if (value < -1e-6) throw NumericError("frechet distance: negative beyond tolerance");
    value = 0.0;
  }
  return value;
}

double fid_between_sets(const FeatureBackend& backend, const std::vector<FloatFace>& set1,
                        const std::vector<FloatFace>& set2) {
  return frechet_distance(feature_stats(backend, set1), feature_stats(backend, set2));
}

double elpips_diversity(const PerceptualBackend& perceptual, const EditFn& edit,
                        const std::vector<FloatFace>& inputs,
                        const std::vector<FloatFace>& exemplar_pool, int n_exemplars,
                        const img::EyeBox& box) {
  check(n_exemplars >= 2, "diversity needs at least 2 exemplars per input");
  check(!inputs.empty(), "diversity needs at least one input");
  check(static_cast<int>(exemplar_pool.size()) >= n_exemplars,
        "exemplar pool smaller than n_exemplars");
  double total = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    std::vector<Tensor<float>> crops;
    crops.reserve(static_cast<size_t>(n_exemplars));
    for (int k = 0; k < n_exemplars; ++k) {
      const FloatFace& ex = exemplar_pool[(i + static_cast<size_t>(k)) % exemplar_pool.size()];
      FloatFace out = edit(inputs[i], ex);
      crops.push_back(img::crop_eye_region(out, box));
    }
    double acc = 0.0;
    int pairs = 0;
    for (int p = 0; p < n_exemplars; ++p)
      for (int q = p + 1; q < n_exemplars; ++q) {
        acc += perceptual.distance(crops[static_cast<size_t>(p)], crops[static_cast<size_t>(q)]);
        ++pairs;
      }
    total += acc / pairs;
  }
  return total / static_cast<double>(inputs.size());
}

void save_report(const EvalReport& r, const std::string& path) {
  nlohmann::ordered_json j;
  j["backend"] = r.backend;
  j["fid_wearing"] = r.fid_wearing;
  j["fid_removal"] = r.fid_removal;
  j["elpips_wearing"] = r.elpips_wearing;
  j["elpips_removal"] = r.elpips_removal;
  j["n_images"] = r.n_images;
  j["n_exemplars"] = r.n_exemplars;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace ergan::metrics
