#include "ergan/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace ergan::trainer {

std::string mode_name(Mode m) {
  switch (m) {
    case Mode::full: return "full";
    case Mode::half_removal_only: return "half_removal_only";
    case Mode::no_face_recon: return "no_face_recon";
    case Mode::no_eye_recon: return "no_eye_recon";
    case Mode::no_f_recon: return "no_f_recon";
    case Mode::no_cc: return "no_cc";
    default: return "with_e_recon";
  }
}

Mode parse_mode(const std::string& name) {
  if (name == "full") return Mode::full;
  if (name == "half" || name == "half_removal_only") return Mode::half_removal_only;
  if (name == "no_face_recon") return Mode::no_face_recon;
  if (name == "no_eye_recon") return Mode::no_eye_recon;
  if (name == "no_f_recon") return Mode::no_f_recon;
  if (name == "no_cc") return Mode::no_cc;
  if (name == "with_e_recon") return Mode::with_e_recon;
  throw ConfigError("unknown mode: " + name +
                    " (full, half, no_face_recon, no_eye_recon, no_f_recon, no_cc, with_e_recon)");
}

TermFlags TermFlags::for_mode(Mode m, bool use_e_recon) {
  TermFlags f;
  f.e_rec = use_e_recon;
  switch (m) {
    case Mode::full: break;
    case Mode::half_removal_only:
      f.wearing = false;
      f.cc = false;  // the cycle needs both swap directions
      break;
    case Mode::no_face_recon: f.face = false; break;
    case Mode::no_eye_recon: f.eye = false; break;
    case Mode::no_f_recon: f.f_rec = false; break;
    case Mode::no_cc: f.cc = false; break;
    case Mode::with_e_recon: f.e_rec = true; break;
  }
  return f;
}

std::string loss_report_json(const LossReport& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["face_recon"] = r.face_recon;
  j["eye_recon"] = r.eye_recon;
  j["f_recon"] = r.f_recon;
  j["e_recon"] = r.e_recon;
  j["cycle"] = r.cycle;
  j["adv_gen"] = r.adv_gen;
  j["adv_disc"] = r.adv_disc;
  j["r1"] = r.r1;
  j["total_gen"] = r.total_gen;
  j["total_disc"] = r.total_disc;
  return j.dump();
}

std::vector<LossReport> run_training(TrainState<float>& state,
                                     const corpus::CorpusManifest& manifest,
                                     const RunArtifacts& artifacts) {
  check(state.initialized(), "run_training: state not initialized");
  if (manifest.domain_a_files.empty() || manifest.domain_b_files.empty())
    throw DataError("training requires both domains to be non-empty");
  check(manifest.resolution == state.gen.config.resolution,
        "manifest resolution does not match the network configuration");

  corpus::BatchIterator it(manifest, state.cfg.batch, state.cfg.seed, /*training=*/true);
  it.set_counter(state.batch_counter);

  std::ofstream loss_stream;
  fs::path ckpt_dir;
  if (!artifacts.out_dir.empty()) {
    fs::create_directories(fs::path(artifacts.out_dir) / "logs");
    ckpt_dir = fs::path(artifacts.out_dir) / "checkpoints";
    fs::create_directories(ckpt_dir);
    loss_stream.open((fs::path(artifacts.out_dir) / "logs" / "losses.jsonl").string(),
                     state.step == 0 ? std::ios::trunc : std::ios::app);
    if (!loss_stream) throw DataError("cannot open loss log in " + artifacts.out_dir);
  }

  std::vector<LossReport> log;
  while (state.step < state.cfg.steps) {
    auto pair = it.next();
    state.batch_counter = it.counter();
    LossReport r = dual_step(state, pair.a, pair.b);
    log.push_back(r);
    if (loss_stream.is_open()) loss_stream << loss_report_json(r) << "\n";
    bool due = state.cfg.checkpoint_every > 0 && state.step % state.cfg.checkpoint_every == 0;
    if (!ckpt_dir.empty() && (due || state.step == state.cfg.steps))
      save_checkpoint(state,
                      (ckpt_dir / ("step_" + std::to_string(state.step) + ".ckpt")).string());
  }
  return log;
}

TrainState<float> train(const nets::NetConfig& net, const TrainConfig& cfg,
                        const LossWeights& weights, const corpus::CorpusManifest& manifest,
                        const RunArtifacts& artifacts, std::vector<LossReport>* log_out) {
  TrainState<float> state = init_state<float>(net, cfg, weights);
  auto log = run_training(state, manifest, artifacts);
  if (log_out) *log_out = std::move(log);
  return state;
}

namespace {

constexpr char kMagic[] = "ERGANCKPT1\n";

void append_tensors(nlohmann::ordered_json& index, std::string& blob, const std::string& name,
                    const Tensor<float>& t) {
  nlohmann::ordered_json e;
  e["name"] = name;
  e["shape"] = t.shape();
  e["offset"] = blob.size();
  index.push_back(e);
  size_t bytes = static_cast<size_t>(t.numel()) * sizeof(float);
  size_t at = blob.size();
  blob.resize(at + bytes);
  std::memcpy(blob.data() + at, t.data(), bytes);
}

nets::NetConfig net_from_json(const nlohmann::json& j) {
  nets::NetConfig n;
  n.resolution = j.at("resolution").get<int>();
  n.appearance_channels = j.at("appearance_channels").get<int>();
  n.appearance_downsamples = j.at("appearance_downsamples").get<int>();
  n.eye_code_dim = j.at("eye_code_dim").get<int>();
  n.n_residual_blocks = j.at("n_residual_blocks").get<int>();
  n.disc_scales = j.at("disc_scales").get<int>();
  n.base_width = j.at("base_width").get<int>();
  n.leaky_slope = j.at("leaky_slope").get<double>();
  return n;
}

nlohmann::ordered_json net_to_json(const nets::NetConfig& n) {
  nlohmann::ordered_json j;
  j["resolution"] = n.resolution;
  j["appearance_channels"] = n.appearance_channels;
  j["appearance_downsamples"] = n.appearance_downsamples;
  j["eye_code_dim"] = n.eye_code_dim;
  j["n_residual_blocks"] = n.n_residual_blocks;
  j["disc_scales"] = n.disc_scales;
  j["base_width"] = n.base_width;
  j["leaky_slope"] = n.leaky_slope;
  return j;
}

}  // namespace

void save_checkpoint(const TrainState<float>& st, const std::string& path) {
  check(st.initialized(), "save_checkpoint: state not initialized");
  nlohmann::ordered_json h;
  h["format"] = "ergan-ckpt-1";
  h["dtype"] = "f32";
  h["step"] = st.step;
  h["batch_counter"] = st.batch_counter;
  h["net"] = net_to_json(st.gen.config);
  h["train"] = {{"lr", st.cfg.lr},
                {"beta1", st.cfg.beta1},
                {"beta2", st.cfg.beta2},
                {"weight_decay", st.cfg.weight_decay},
                {"batch", st.cfg.batch},
                {"steps", st.cfg.steps},
                {"seed", st.cfg.seed},
                {"mode", mode_name(st.cfg.mode)},
                {"strict_composite_output", st.cfg.strict_composite_output},
                {"checkpoint_every", st.cfg.checkpoint_every}};
  h["weights"] = {{"lambda_face", st.weights.lambda_face},
                  {"lambda_eye", st.weights.lambda_eye},
                  {"use_e_recon", st.weights.use_e_recon},
                  {"r1_gamma", st.weights.r1_gamma}};
  h["box"] = {st.box.row_lo_frac, st.box.col_lo_frac, st.box.row_hi_frac, st.box.col_hi_frac};
  h["adam_g_t"] = st.opt_g.t();
  h["adam_d_t"] = st.opt_d.t();

  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  std::string blob;
  nn::ParamList<float> gp, dp;
  st.gen.collect(gp);
  st.disc.collect(dp);
  for (const auto& p : gp) append_tensors(index, blob, p.name, p.v.val());
  for (const auto& p : dp) append_tensors(index, blob, p.name, p.v.val());
  for (size_t i = 0; i < gp.size(); ++i) {
    append_tensors(index, blob, "adam_g.m." + gp[i].name, st.opt_g.m()[i]);
    append_tensors(index, blob, "adam_g.v." + gp[i].name, st.opt_g.v()[i]);
  }
  for (size_t i = 0; i < dp.size(); ++i) {
    append_tensors(index, blob, "adam_d.m." + dp[i].name, st.opt_d.m()[i]);
    append_tensors(index, blob, "adam_d.v." + dp[i].name, st.opt_d.v()[i]);
  }
  h["tensors"] = std::move(index);

  std::string header = h.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic) - 1);
  uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw DataError("short write on checkpoint: " + path);
}

TrainState<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint: " + path);
  char magic[sizeof(kMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw DataError("not a checkpoint file: " + path);
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError("truncated checkpoint header: " + path);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const std::exception& e) {
    throw DataError("checkpoint header parse error: " + std::string(e.what()));
  }
  if (h.value("format", "") != "ergan-ckpt-1" || h.value("dtype", "") != "f32")
    throw DataError("unsupported checkpoint format in " + path);

  TrainConfig cfg;
  const auto& t = h.at("train");
  cfg.lr = t.at("lr").get<double>();
  cfg.beta1 = t.at("beta1").get<double>();
  cfg.beta2 = t.at("beta2").get<double>();
  cfg.weight_decay = t.at("weight_decay").get<double>();
  cfg.batch = t.at("batch").get<int>();
  cfg.steps = t.at("steps").get<int64_t>();
  cfg.seed = t.at("seed").get<uint64_t>();
  cfg.mode = parse_mode(t.at("mode").get<std::string>());
  cfg.strict_composite_output = t.at("strict_composite_output").get<bool>();
  cfg.checkpoint_every = t.at("checkpoint_every").get<int64_t>();
  LossWeights weights;
  const auto& wj = h.at("weights");
  weights.lambda_face = wj.at("lambda_face").get<double>();
  weights.lambda_eye = wj.at("lambda_eye").get<double>();
  weights.use_e_recon = wj.at("use_e_recon").get<bool>();
  weights.r1_gamma = wj.at("r1_gamma").get<double>();

  TrainState<float> st = init_state<float>(net_from_json(h.at("net")), cfg, weights);
  st.step = h.at("step").get<int64_t>();
  st.batch_counter = h.at("batch_counter").get<int64_t>();
  const auto& bx = h.at("box");
  st.box.row_lo_frac = bx.at(0).get<double>();
  st.box.col_lo_frac = bx.at(1).get<double>();
  st.box.row_hi_frac = bx.at(2).get<double>();
  st.box.col_hi_frac = bx.at(3).get<double>();
  st.opt_g.set_t(h.at("adam_g_t").get<int64_t>());
  st.opt_d.set_t(h.at("adam_d_t").get<int64_t>());

  std::map<std::string, std::pair<std::vector<int>, uint64_t>> index;
  for (const auto& e : h.at("tensors"))
    index[e.at("name").get<std::string>()] = {e.at("shape").get<std::vector<int>>(),
                                             e.at("offset").get<uint64_t>()};
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto restore = [&](const std::string& name, Tensor<float>& dst) {
    auto it = index.find(name);
    if (it == index.end()) throw DataError("checkpoint missing tensor " + name + " in " + path);
    if (it->second.first != dst.shape())
      throw DataError("checkpoint tensor " + name + " has mismatched shape (config mismatch)");
    size_t bytes = static_cast<size_t>(dst.numel()) * sizeof(float);
    if (it->second.second + bytes > blob.size())
      throw DataError("checkpoint blob truncated at " + name);
    std::memcpy(dst.data(), blob.data() + it->second.second, bytes);
  };

  nn::ParamList<float> gp, dp;
  st.gen.collect(gp);
  st.disc.collect(dp);
  for (auto& p : gp) restore(p.name, p.v.mutable_val());
  for (auto& p : dp) restore(p.name, p.v.mutable_val());
  for (size_t i = 0; i < gp.size(); ++i) {
    restore("adam_g.m." + gp[i].name, st.opt_g.m()[i]);
    restore("adam_g.v." + gp[i].name, st.opt_g.v()[i]);
  }
  for (size_t i = 0; i < dp.size(); ++i) {
    restore("adam_d.m." + dp[i].name, st.opt_d.m()[i]);
    restore("adam_d.v." + dp[i].name, st.opt_d.v()[i]);
  }
  return st;
}

}  // namespace ergan::trainer
