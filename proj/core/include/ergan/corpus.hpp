#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ergan/image.hpp"
#include "ergan/tensor.hpp"

namespace ergan::corpus {

// CelebA-style attribute list: line 1 holds the row count, line 2 the
// attribute names, then one "<filename> <v1> <v2> ..." row per image with
// every value in {-1, +1}.
struct AttributeTable {
  std::vector<std::string> attribute_names;
  struct Entry {
    std::string filename;
    std::vector<int> values;
  };
  std::vector<Entry> entries;

  int attribute_index(const std::string& name) const;
  bool has_glasses(const Entry& e) const;
};

AttributeTable parse_attribute_table(std::istream& in);

struct CorpusManifest {
  std::string root_dir;
  int resolution = 0;
  std::vector<std::string> domain_a_files;  // with glasses
  std::vector<std::string> domain_b_files;  // without glasses
};

// Partition by the Eyeglasses attribute, preserving file order. An empty
// domain is legal here (training rejects it later); when it happens a message
// is placed in *warning.
CorpusManifest split_by_glasses(const AttributeTable& table, const std::string& root_dir,
                                int resolution, std::string* warning = nullptr);

void save_manifest(const CorpusManifest& m, const std::string& path);
CorpusManifest load_manifest(const std::string& path);

// Head-fraction split per domain; the tail is held out for evaluation.
std::pair<CorpusManifest, CorpusManifest> split_train_eval(const CorpusManifest& m,
                                                           double train_fraction);

enum class EyewearStyle { full_rim, rimless, sunglasses };

std::string style_name(EyewearStyle s);
EyewearStyle parse_style(const std::string& name);

struct SyntheticSpec {
  int n_per_domain = 1;
  int resolution = 64;
  uint64_t seed = 0;
  std::set<EyewearStyle> styles = {EyewearStyle::full_rim, EyewearStyle::rimless,
                                   EyewearStyle::sunglasses};

  void validate() const {
    check(n_per_domain >= 1, "n_per_domain must be >= 1");
    check(resolution >= 16 && resolution % 4 == 0, "resolution must be a multiple of 4, >= 16");
    check(!styles.empty(), "at least one eyewear style required");
  }
};

// Everything that determines one rendered face; identical parameters with and
// without eyewear give the paired-twin renders used by the test oracles.
struct FaceParams {
  float skin[3], background[3], iris[3], hair[3], rim[3];
  float head_rx, head_ry, eye_dx, eye_y, eye_rx, eye_ry;
  float brow_lift, mouth_y, mouth_curve;  // curve < 0 smiles
  bool smiling;
  EyewearStyle style;
};

FaceParams sample_face_params(std::mt19937_64& rng, const std::set<EyewearStyle>& styles);

img::RawImage render_face(const FaceParams& p, bool with_glasses, int resolution);

// All eyewear strokes stay within the canonical eye-band rows extended by
// this many pixels on each side.
int eyewear_row_overhang(int resolution);

// Renders 2*n_per_domain faces (domain A with eyewear, domain B without),
// writes PNGs plus a CelebA-format attribute file and a manifest.json, and
// returns the manifest. Byte-identical across runs with the same spec.
CorpusManifest synth_corpus(const SyntheticSpec& spec, const std::string& out_dir);

// Deterministic unpaired batch stream. Each domain runs its own epoch
// shuffle (remainder dropped) derived from the seed; the smaller domain
// simply wraps into its next epoch. State is the batch counter alone, which
// makes checkpoint resume exact.
class BatchIterator {
 public:
  BatchIterator(const CorpusManifest& manifest, int batch, uint64_t seed, bool training);

  struct BatchPair {
    Tensor<float> a, b;  // (batch,3,res,res)
  };

  BatchPair next();

  int64_t counter() const { return counter_; }
  void set_counter(int64_t c) { counter_ = c; }
  int batches_per_epoch_a() const { return batches_a_; }
  int batches_per_epoch_b() const { return batches_b_; }

 private:
  Tensor<float> load_domain_batch(const std::vector<std::string>& files, int batches_per_epoch,
                                  uint64_t domain_tag, std::mt19937_64& flip_rng);
  const img::RawImage& cached(const std::string& file);

  CorpusManifest manifest_;
  int batch_;
  uint64_t seed_;
  bool training_;
  int batches_a_ = 0, batches_b_ = 0;
  int64_t counter_ = 0;
  std::map<std::string, img::RawImage> cache_;
};

}  // namespace ergan::corpus
