#pragma once

#include <string>

#include "ergan/corpus.hpp"
#include "ergan/losses.hpp"
#include "ergan/nets.hpp"
#include "ergan/trainer.hpp"

namespace ergan::cli {

// Merged view of every tunable plus paths. Precedence: built-in defaults,
// then a config file, then command-line flags.
struct RunConfig {
  nets::NetConfig net{.resolution = 64};
  trainer::TrainConfig train;
  losses::LossWeights loss;
  img::EyeBox box;

  std::string data_root;
  std::string attributes;  // attribute list file; empty: load manifest.json from data_root
  std::string out_dir = "out";
  double split_fraction = 0.9;

  corpus::SyntheticSpec synth;
  std::string synth_out;

  std::string checkpoint;
  std::string eval_backend = "test-linear";
  std::string eval_perceptual = "blur-mad";
  int eval_n_exemplars = 10;
  int eval_max_images = 0;  // 0: use the whole held-out split

  // Applies "section.key=value". Unknown keys throw ConfigError.
  void set(const std::string& key, const std::string& value);

  void load_file(const std::string& path);

  // Flat deterministic key=value dump; reloading it reproduces this config.
  std::string snapshot() const;

  void write_snapshot(const std::string& path) const;
};

}  // namespace ergan::cli
