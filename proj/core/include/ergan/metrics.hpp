#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ergan/image.hpp"

namespace ergan::metrics {

using FloatFace = img::FaceImage<float>;

// Gaussian moment summary of an image set in feature space.
struct FeatureStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  int n = 0;

  int dim() const { return static_cast<int>(mean.size()); }
};

class FeatureBackend {
 public:
  virtual ~FeatureBackend() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual Eigen::VectorXd extract(const FloatFace& image) const = 0;
};

class PerceptualBackend {
 public:
  virtual ~PerceptualBackend() = default;
  virtual std::string name() const = 0;
  // Symmetric, non-negative, zero on identical inputs.
  virtual double distance(const Tensor<float>& a, const Tensor<float>& b) const = 0;
};

// Deterministic offline feature backend: images are box-averaged onto a
// 16x16 grid and pushed through a fixed seeded random projection.
class LinearProjectionBackend : public FeatureBackend {
 public:
  explicit LinearProjectionBackend(int dim = 64);
  std::string name() const override { return "test-linear"; }
  int dim() const override { return dim_; }
  Eigen::VectorXd extract(const FloatFace& image) const override;

 private:
  int dim_;
  Eigen::MatrixXd projection_;  // dim x 768
};

// Deterministic offline perceptual backend: L1 mass of the difference of
// box-blurred images, averaged over pyramid scales. Local to the support of
// the difference (up to the blur radius), so crop-level and image-level
// scores agree for interior edits.
class BlurL1Backend : public PerceptualBackend {
 public:
  explicit BlurL1Backend(int scales = 2);
  std::string name() const override { return "blur-mad"; }
  double distance(const Tensor<float>& a, const Tensor<float>& b) const override;

 private:
  int scales_;
};

std::unique_ptr<FeatureBackend> make_feature_backend(const std::string& name);
std::unique_ptr<PerceptualBackend> make_perceptual_backend(const std::string& name);

// Sample mean and unbiased covariance of extracted features. Needs >= 2
// images.
FeatureStats feature_stats(const FeatureBackend& backend, const std::vector<FloatFace>& images);

// ||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)); symmetric eigen route with a
// diagonal jitter fallback. Tiny negative residue (> -1e-6) clamps to zero.
double frechet_distance(const FeatureStats& s1, const FeatureStats& s2);

double fid_between_sets(const FeatureBackend& backend, const std::vector<FloatFace>& set1,
                        const std::vector<FloatFace>& set2);

// Produces one edited output for (input, exemplar).
using EditFn = std::function<FloatFace(const FloatFace& input, const FloatFace& exemplar)>;

// Diversity over exemplar-conditioned outputs: for each input, generate one
// output per exemplar, crop to the eye box, and average the perceptual
// distance over all unordered output pairs; then average over inputs.
double elpips_diversity(const PerceptualBackend& perceptual, const EditFn& edit,
                        const std::vector<FloatFace>& inputs,
                        const std::vector<FloatFace>& exemplar_pool, int n_exemplars,
                        const img::EyeBox& box);

struct EvalReport {
  std::string backend;
  double fid_wearing = 0, fid_removal = 0;
  double elpips_wearing = 0, elpips_removal = 0;
  int n_images = 0, n_exemplars = 0;
};

void save_report(const EvalReport& r, const std::string& path);

}  // namespace ergan::metrics
