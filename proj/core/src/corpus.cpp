#include "ergan/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ergan/image_io.hpp"

namespace fs = std::filesystem;

namespace ergan::corpus {

namespace {

// One stream per (seed, stream-id) pair.
std::mt19937_64 seeded(uint64_t seed, uint64_t tag, uint64_t index) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(tag), static_cast<uint32_t>(tag >> 32),
                    static_cast<uint32_t>(index), static_cast<uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  // Fixed 53-bit mapping so streams are stable across standard libraries.
  double u = static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0);
  return lo + u * (hi - lo);
}

}  // namespace

int AttributeTable::attribute_index(const std::string& name) const {
  for (size_t i = 0; i < attribute_names.size(); ++i)
    if (attribute_names[i] == name) return static_cast<int>(i);
  return -1;
}

bool AttributeTable::has_glasses(const Entry& e) const {
  int idx = attribute_index("Eyeglasses");
  check(idx >= 0, "attribute table lacks an Eyeglasses column");
  return e.values[static_cast<size_t>(idx)] == 1;
}

AttributeTable parse_attribute_table(std::istream& in) {
  AttributeTable table;
  std::string line;
  if (!std::getline(in, line)) throw DataError("attribute file: missing count line");
  int64_t count = 0;
  try {
    count = std::stoll(line);
  } catch (const std::exception&) {
    throw DataError("attribute file: first line must be the row count");
  }
  if (count < 0) throw DataError("attribute file: negative row count");
  if (!std::getline(in, line)) throw DataError("attribute file: missing header line");
  {
    std::istringstream hs(line);
    std::string name;
    while (hs >> name) table.attribute_names.push_back(name);
  }
  if (table.attribute_names.empty()) throw DataError("attribute file: empty header");
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    AttributeTable::Entry e;
    ls >> e.filename;
    std::string tok;
    while (ls >> tok) {
      if (tok != "1" && tok != "-1")
        throw DataError("attribute file: value '" + tok + "' for " + e.filename +
                        " is not -1 or 1");
      e.values.push_back(tok == "1" ? 1 : -1);
    }
    if (e.values.size() != table.attribute_names.size())
      throw DataError("attribute file: row " + e.filename + " has " +
                      std::to_string(e.values.size()) + " values, header declares " +
                      std::to_string(table.attribute_names.size()));
    table.entries.push_back(std::move(e));
  }
  if (static_cast<int64_t>(table.entries.size()) != count)
    throw DataError("attribute file: declared " + std::to_string(count) + " rows, found " +
                    std::to_string(table.entries.size()));
  if (table.attribute_index("Eyeglasses") < 0)
    throw DataError("attribute file: missing Eyeglasses column");
  for (size_t i = 0; i < table.entries.size(); ++i)
    for (size_t j = i + 1; j < table.entries.size(); ++j)
      if (table.entries[i].filename == table.entries[j].filename)
        throw DataError("attribute file: duplicate filename " + table.entries[i].filename);
  return table;
}

CorpusManifest split_by_glasses(const AttributeTable& table, const std::string& root_dir,
                                int resolution, std::string* warning) {
  CorpusManifest m;
  m.root_dir = root_dir;
  m.resolution = resolution;
  for (const auto& e : table.entries) {
    if (table.has_glasses(e))
      m.domain_a_files.push_back(e.filename);
    else
      m.domain_b_files.push_back(e.filename);
  }
  if (warning && (m.domain_a_files.empty() || m.domain_b_files.empty()))
    *warning = std::string("domain ") + (m.domain_a_files.empty() ? "A (with glasses)" : "B (without glasses)") +
               " is empty after the split";
  return m;
}

void save_manifest(const CorpusManifest& m, const std::string& path) {
  nlohmann::ordered_json j;
  j["root_dir"] = m.root_dir;
  j["resolution"] = m.resolution;
  j["domain_a_files"] = m.domain_a_files;
  j["domain_b_files"] = m.domain_b_files;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

CorpusManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read manifest: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError("manifest parse error: " + std::string(e.what()));
  }
  CorpusManifest m;
  try {
    m.root_dir = j.at("root_dir").get<std::string>();
    m.resolution = j.at("resolution").get<int>();
    m.domain_a_files = j.at("domain_a_files").get<std::vector<std::string>>();
    m.domain_b_files = j.at("domain_b_files").get<std::vector<std::string>>();
  } catch (const std::exception& e) {
    throw DataError("manifest missing fields: " + std::string(e.what()));
  }
  return m;
}

std::pair<CorpusManifest, CorpusManifest> split_train_eval(const CorpusManifest& m,
                                                           double train_fraction) {
  check(train_fraction > 0.0 && train_fraction <= 1.0, "train fraction must be in (0,1]");
  CorpusManifest train = m, eval = m;
  auto cut = [&](const std::vector<std::string>& files, std::vector<std::string>& head,
                 std::vector<std::string>& tail) {
    size_t k = static_cast<size_t>(std::ceil(train_fraction * static_cast<double>(files.size())));
    k = std::min(k, files.size());
    head.assign(files.begin(), files.begin() + static_cast<ptrdiff_t>(k));
    tail.assign(files.begin() + static_cast<ptrdiff_t>(k), files.end());
  };
  cut(m.domain_a_files, train.domain_a_files, eval.domain_a_files);
  cut(m.domain_b_files, train.domain_b_files, eval.domain_b_files);
  return {train, eval};
}

std::string style_name(EyewearStyle s) {
  switch (s) {
    case EyewearStyle::full_rim: return "full_rim";
    case EyewearStyle::rimless: return "rimless";
    default: return "sunglasses";
  }
}

EyewearStyle parse_style(const std::string& name) {
  if (name == "full_rim") return EyewearStyle::full_rim;
  if (name == "rimless") return EyewearStyle::rimless;
  if (name == "sunglasses") return EyewearStyle::sunglasses;
  throw ConfigError("unknown eyewear style: " + name);
}

FaceParams sample_face_params(std::mt19937_64& rng, const std::set<EyewearStyle>& styles) {
  check(!styles.empty(), "no eyewear styles to sample from");
  FaceParams p{};
  p.skin[0] = static_cast<float>(uniform(rng, 0.62, 0.95));
  p.skin[1] = static_cast<float>(uniform(rng, 0.45, 0.78));
  p.skin[2] = static_cast<float>(uniform(rng, 0.32, 0.62));
  for (int c = 0; c < 3; ++c) p.background[c] = static_cast<float>(uniform(rng, 0.08, 0.55));
  p.iris[0] = static_cast<float>(uniform(rng, 0.05, 0.55));
  p.iris[1] = static_cast<float>(uniform(rng, 0.15, 0.55));
  p.iris[2] = static_cast<float>(uniform(rng, 0.15, 0.75));
  for (int c = 0; c < 3; ++c) p.hair[c] = static_cast<float>(uniform(rng, 0.05, 0.45));
  for (int c = 0; c < 3; ++c) p.rim[c] = static_cast<float>(uniform(rng, 0.02, 0.30));
  p.head_rx = static_cast<float>(uniform(rng, 0.30, 0.36));
  p.head_ry = static_cast<float>(uniform(rng, 0.40, 0.46));
  p.eye_dx = static_cast<float>(uniform(rng, 0.13, 0.17));
  p.eye_y = static_cast<float>(uniform(rng, 0.50, 0.55));
  p.eye_rx = static_cast<float>(uniform(rng, 0.050, 0.065));
  p.eye_ry = static_cast<float>(uniform(rng, 0.030, 0.042));
  p.brow_lift = static_cast<float>(uniform(rng, 0.055, 0.075));
  p.mouth_y = static_cast<float>(uniform(rng, 0.78, 0.83));
  p.mouth_curve = static_cast<float>(uniform(rng, -1.0, 1.0));
  p.smiling = p.mouth_curve < 0.0f;
  std::vector<EyewearStyle> pool(styles.begin(), styles.end());
  p.style = pool[static_cast<size_t>(rng() % pool.size())];
  return p;
}

int eyewear_row_overhang(int resolution) {
  return std::max(2, resolution / 16);
}

namespace {

struct Canvas {
  int res;
  std::vector<float> px;  // HWC in [0,1]

  explicit Canvas(int r) : res(r), px(static_cast<size_t>(r) * r * 3, 0.0f) {}

  void set(int y, int x, const float* rgb, float alpha = 1.0f) {
    if (y < 0 || y >= res || x < 0 || x >= res) return;
    float* p = px.data() + (static_cast<size_t>(y) * res + x) * 3;
    for (int c = 0; c < 3; ++c) p[c] = (1.0f - alpha) * p[c] + alpha * rgb[c];
  }

  void fill(const float* rgb) {
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x) set(y, x, rgb);
  }

  void ellipse(float cy, float cx, float ry, float rx, const float* rgb, float alpha = 1.0f,
               int row_clip_lo = 0, int row_clip_hi = 1 << 20) {
    int y0 = std::max(row_clip_lo, static_cast<int>(std::floor((cy - ry) * res)));
    int y1 = std::min({res, row_clip_hi, static_cast<int>(std::ceil((cy + ry) * res)) + 1});
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < res; ++x) {
        float fy = (y + 0.5f) / res - cy, fx = (x + 0.5f) / res - cx;
        if (fy * fy / (ry * ry) + fx * fx / (rx * rx) <= 1.0f) set(y, x, rgb, alpha);
      }
  }

  void ring(float cy, float cx, float ry, float rx, float thickness, const float* rgb,
            int row_clip_lo, int row_clip_hi) {
    int y0 = std::max(row_clip_lo, static_cast<int>(std::floor((cy - ry - thickness) * res)));
    int y1 = std::min({res, row_clip_hi,
                       static_cast<int>(std::ceil((cy + ry + thickness) * res)) + 1});
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < res; ++x) {
        float fy = (y + 0.5f) / res - cy, fx = (x + 0.5f) / res - cx;
        float inner = fy * fy / (ry * ry) + fx * fx / (rx * rx);
        float oy = ry + thickness, ox = rx + thickness;
        float outer = fy * fy / (oy * oy) + fx * fx / (ox * ox);
        if (outer <= 1.0f && inner >= 1.0f) set(y, x, rgb);
      }
  }

  void hbar(float cy, float x_lo, float x_hi, float half_h, const float* rgb, int row_clip_lo,
            int row_clip_hi) {
    int y0 = std::max(row_clip_lo, static_cast<int>(std::floor((cy - half_h) * res)));
    int y1 = std::min({res, row_clip_hi, static_cast<int>(std::ceil((cy + half_h) * res)) + 1});
    int x0 = std::max(0, static_cast<int>(std::floor(x_lo * res)));
    int x1 = std::min(res, static_cast<int>(std::ceil(x_hi * res)));
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) set(y, x, rgb);
  }
};

}  // namespace

img::RawImage render_face(const FaceParams& p, bool with_glasses, int resolution) {
  Canvas cv(resolution);
  cv.fill(p.background);
  const float cx = 0.5f, cy = 0.52f;
  cv.ellipse(cy - p.head_ry * 0.72f, cx, p.head_ry * 0.55f, p.head_rx * 1.04f, p.hair);  // hair cap
  cv.ellipse(cy, cx, p.head_ry, p.head_rx, p.skin);
  const float white[3] = {0.96f, 0.96f, 0.94f};
  const float dark[3] = {0.06f, 0.05f, 0.05f};
  float ex[2] = {cx - p.eye_dx, cx + p.eye_dx};
  for (int i = 0; i < 2; ++i) {
    cv.hbar(p.eye_y - p.brow_lift, ex[i] - p.eye_rx * 1.1f, ex[i] + p.eye_rx * 1.1f, 0.010f,
            p.hair, 0, resolution);
    cv.ellipse(p.eye_y, ex[i], p.eye_ry, p.eye_rx, white);
    cv.ellipse(p.eye_y, ex[i], p.eye_ry * 0.72f, p.eye_rx * 0.52f, p.iris);
    cv.ellipse(p.eye_y, ex[i], p.eye_ry * 0.34f, p.eye_rx * 0.24f, dark);
  }
  // nose and mouth sit below the eye band
  const float nose[3] = {p.skin[0] * 0.72f, p.skin[1] * 0.72f, p.skin[2] * 0.72f};
  cv.hbar(0.70f, cx - 0.012f, cx + 0.012f, 0.035f, nose, 0, resolution);
  const float lip[3] = {0.62f, 0.22f, 0.24f};
  float bend = p.smiling ? 0.02f : -0.015f;
  for (int k = -4; k <= 4; ++k) {
    float t = static_cast<float>(k) / 4.0f;
    cv.hbar(p.mouth_y + bend * t * t, cx + t * 0.10f - 0.014f, cx + t * 0.10f + 0.014f, 0.013f,
            lip, 0, resolution);
  }

  if (with_glasses) {
    img::EyeBox box;
    img::PixelRect rect = img::eye_region_pixels(box, resolution, resolution);
    int over = eyewear_row_overhang(resolution);
    int clip_lo = std::max(0, rect.r0 - over);
    int clip_hi = std::min(resolution, rect.r1 + over);
    float lens_ry = p.eye_ry + 0.026f, lens_rx = p.eye_rx + 0.030f;
    float thick = p.style == EyewearStyle::rimless ? 0.008f : 0.020f;
    const float* rim = p.rim;
    float faint[3] = {0.78f, 0.80f, 0.82f};
    if (p.style == EyewearStyle::rimless) rim = faint;
    if (p.style == EyewearStyle::sunglasses) {
      float tint[3] = {p.rim[0] * 0.5f, p.rim[1] * 0.5f, p.rim[2] * 0.5f};
      for (int i = 0; i < 2; ++i)
        cv.ellipse(p.eye_y, ex[i], lens_ry, lens_rx, tint, 0.92f, clip_lo, clip_hi);
    }
    for (int i = 0; i < 2; ++i)
      cv.ring(p.eye_y, ex[i], lens_ry, lens_rx, thick, rim, clip_lo, clip_hi);
    // bridge and temple arms
    cv.hbar(p.eye_y - lens_ry * 0.35f, ex[0] + lens_rx, ex[1] - lens_rx, thick * 0.7f, rim,
            clip_lo, clip_hi);
    cv.hbar(p.eye_y, cx - p.head_rx, ex[0] - lens_rx, thick * 0.6f, rim, clip_lo, clip_hi);
    cv.hbar(p.eye_y, ex[1] + lens_rx, cx + p.head_rx, thick * 0.6f, rim, clip_lo, clip_hi);
  }

  img::RawImage out;
  out.h = resolution;
  out.w = resolution;
  out.rgb.resize(static_cast<size_t>(resolution) * resolution * 3);
  for (size_t i = 0; i < out.rgb.size(); ++i) {
    float v = std::min(1.0f, std::max(0.0f, cv.px[i]));
    out.rgb[i] = static_cast<uint8_t>(std::round(v * 255.0f));
  }
  return out;
}

CorpusManifest synth_corpus(const SyntheticSpec& spec, const std::string& out_dir) {
  spec.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw DataError("cannot create output directory: " + out_dir);

  AttributeTable table;
  table.attribute_names = {"Eyeglasses", "Smiling"};
  CorpusManifest m;
  m.root_dir = out_dir;
  m.resolution = spec.resolution;

  char name[64];
  for (int domain = 0; domain < 2; ++domain) {
    bool glasses = domain == 0;
    for (int i = 0; i < spec.n_per_domain; ++i) {
      auto rng = seeded(spec.seed, glasses ? 1 : 2, static_cast<uint64_t>(i));
      FaceParams p = sample_face_params(rng, spec.styles);
      img::RawImage im = render_face(p, glasses, spec.resolution);
      std::snprintf(name, sizeof(name), "%s_%05d.png", glasses ? "glasses" : "plain", i);
      im.id = name;
      img::save_png(im, (fs::path(out_dir) / name).string());
      (glasses ? m.domain_a_files : m.domain_b_files).push_back(name);
      AttributeTable::Entry e;
      e.filename = name;
      e.values = {glasses ? 1 : -1, p.smiling ? 1 : -1};
      table.entries.push_back(std::move(e));
    }
  }

  std::ofstream attr((fs::path(out_dir) / "list_attr.txt").string());
  if (!attr) throw DataError("cannot write attribute file in " + out_dir);
  attr << table.entries.size() << "\n";
  for (size_t i = 0; i < table.attribute_names.size(); ++i)
    attr << (i ? " " : "") << table.attribute_names[i];
  attr << "\n";
  for (const auto& e : table.entries) {
    attr << e.filename;
    for (int v : e.values) attr << " " << v;
    attr << "\n";
  }
  attr.close();

  save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
  return m;
}

BatchIterator::BatchIterator(const CorpusManifest& manifest, int batch, uint64_t seed,
                             bool training)
    : manifest_(manifest), batch_(batch), seed_(seed), training_(training) {
  check(batch >= 1, "batch must be >= 1");
  if (manifest.domain_a_files.empty() || manifest.domain_b_files.empty())
    throw DataError("both domains must be non-empty for batching");
  batches_a_ = static_cast<int>(manifest.domain_a_files.size()) / batch;
  batches_b_ = static_cast<int>(manifest.domain_b_files.size()) / batch;
  if (batches_a_ == 0 || batches_b_ == 0)
    throw DataError("batch size exceeds a domain (" +
                    std::to_string(manifest.domain_a_files.size()) + " with, " +
                    std::to_string(manifest.domain_b_files.size()) + " without glasses)");
}

const img::RawImage& BatchIterator::cached(const std::string& file) {
  auto it = cache_.find(file);
  if (it != cache_.end()) return it->second;
  auto path = fs::path(manifest_.root_dir) / file;
  auto [pos, ok] = cache_.emplace(file, img::load_raw(path.string()));
  return pos->second;
}

Tensor<float> BatchIterator::load_domain_batch(const std::vector<std::string>& files,
                                               int batches_per_epoch, uint64_t domain_tag,
                                               std::mt19937_64& flip_rng) {
  int64_t epoch = counter_ / batches_per_epoch;
  int64_t slot = counter_ % batches_per_epoch;
  std::vector<int> perm(files.size());
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = seeded(seed_, domain_tag, static_cast<uint64_t>(epoch));
  std::shuffle(perm.begin(), perm.end(), rng);

  int res = manifest_.resolution;
  Tensor<float> out({batch_, 3, res, res});
  for (int i = 0; i < batch_; ++i) {
    const auto& file = files[static_cast<size_t>(perm[static_cast<size_t>(slot * batch_ + i)])];
    const img::RawImage& raw = cached(file);
    int crop = std::min({160, raw.h, raw.w});
    img::FaceImage<float> face = img::preprocess<float>(raw, res, training_, flip_rng, crop);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x)
          out[((static_cast<int64_t>(i) * 3 + c) * res + y) * res + x] =
              face.pixels[(static_cast<int64_t>(y) * res + x) * 3 + c];
  }
  return out;
}

BatchIterator::BatchPair BatchIterator::next() {
  auto flip_rng = seeded(seed_, 3, static_cast<uint64_t>(counter_));
  BatchPair pair;
  pair.a = load_domain_batch(manifest_.domain_a_files, batches_a_, 1, flip_rng);
  pair.b = load_domain_batch(manifest_.domain_b_files, batches_b_, 2, flip_rng);
  ++counter_;
  return pair;
}

}  // namespace ergan::corpus
